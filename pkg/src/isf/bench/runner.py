"""Experiment runner: expand sweep points into plans, run them, build reports.

Experiment definitions (sweep points, profiles, thresholds) live in the
packaged JSON files under experiments/; thresholds are never hard-coded.
Sweep points run strictly sequentially so timing measurements do not
contaminate each other.
"""

from __future__ import annotations

import copy
import csv
import json
import time
from importlib import resources
from pathlib import Path

from .. import executors
from ..orchestrator import DeploymentPlan, Launcher
from ..timing import aggregate, read_csv


def available_experiments() -> list[str]:
    files = resources.files("isf.bench").joinpath("experiments")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_experiment(exp_id: str) -> dict:
    path = resources.files("isf.bench").joinpath(f"experiments/{exp_id}.json")
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ValueError(f"unknown experiment {exp_id!r}; have {available_experiments()}") from None


def _set_dotted(d: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def expand_points(exp: dict, profile: str) -> list[tuple[str, dict]]:
    """(label, plan dict) for every sweep point of the chosen profile."""
    if profile not in exp["profiles"]:
        raise ValueError(f"experiment {exp['id']} has no profile {profile!r}")
    prof = exp["profiles"][profile]
    out = []
    for point in prof["points"]:
        plan = copy.deepcopy(exp["plan_defaults"])
        for dotted, value in prof.get("overrides", {}).items():
            _set_dotted(plan, dotted, value)
        for dotted, value in point.get("set", {}).items():
            _set_dotted(plan, dotted, value)
        out.append((point["label"], plan))
    return out


def _materialize_model(exp: dict, out_dir: Path) -> str | None:
    model = exp.get("model")
    if not model:
        return None
    if model["type"] == "affine":
        blob = executors.random_affine_blob(model["in"], model["out"], model["seed"])
    elif model["type"] == "mlp":
        blob = executors.random_mlp_blob(model["dims"], model["seed"])
    elif model["type"] == "identity":
        blob = executors.build_identity_blob()
    else:
        raise ValueError(f"unknown model type {model['type']!r}")
    path = out_dir / f"{exp['id']}-model.mex"
    path.write_bytes(blob)
    return str(path)


def _point_params(plan: DeploymentPlan) -> dict:
    return {
        "mode": plan.mode,
        "nodes": plan.nodes,
        "ranks": plan.total_producer_ranks(),
        "shards": plan.shards,
        "db_cores": plan.db_cores,
        "payload_bytes": plan.workload.payload_bytes_per_rank,
        "batch_n": plan.workload.batch_n,
        "inline": plan.workload.inline,
        "iterations": plan.workload.iterations,
    }


def _expected_local_keys(plan: DeploymentPlan) -> dict | None:
    """Exact per-store key counts for the co-located locality law."""
    if plan.mode != "colocated" or plan.workload.mode != "transfer":
        return None
    w = plan.workload
    total_steps = w.warmup + w.iterations
    sends = len([s for s in range(total_steps) if s % w.send_every == 0])
    tensor_keys = 0 if w.delete_after_get else plan.ranks_per_node * sends
    return {"tensor_keys": tensor_keys, "meta_keys": 3, "sends_per_rank": sends}


def run_point(label: str, plan: DeploymentPlan, out_dir: Path, run_id: str,
              timeout_s: float) -> dict:
    launcher = Launcher(plan, out_dir, run_id=run_id)
    t0 = time.monotonic()
    try:
        launcher.launch()
        summary = launcher.await_completion(timeout_s=timeout_s)
    except BaseException:
        launcher.kill_all()
        raise
    orphans = launcher.live_pids()
    point: dict = {
        "label": label,
        "params": _point_params(plan),
        "run_id": summary["run_id"],
        "ok": summary["ok"],
        "failed": summary["failed"],
        "wall_s": round(time.monotonic() - t0, 3),
        "orphan_pids": orphans,
        "store_info": summary["store_info"],
        "artifact_dir": summary["artifact_dir"],
    }
    timings = Path(summary["artifact_dir"]) / "timings.csv"
    if timings.exists():
        stats = aggregate(read_csv(timings))
        point["stats"] = {
            comp: {
                "mean_sec": s.mean_sec, "std_sec": s.std_sec, "n_ranks": s.n_ranks,
                "total_bytes": s.total_bytes, "n_ops": s.n_ops,
                "mean_op_micros": s.mean_op_micros, "throughput_mb_s": s.throughput_mb_s,
            }
            for comp, s in sorted(stats.items())
        }
    else:
        point["stats"] = {}
    expected = _expected_local_keys(plan)
    if expected is not None:
        point["locality"] = {
            "expected_per_store": expected,
            "actual_tensor_keys": [i.get("tensor_keys") for i in summary["store_info"]],
            "actual_outbound": [i.get("outbound_connections") for i in summary["store_info"]],
        }
    return point


def run_experiment(exp: dict, out_dir: str | Path, profile: str = "default",
                   repetitions: int | None = None, timeout_s: float = 600.0) -> dict:
    """Run every sweep point; persist report.json, results.csv, and plots."""
    out_dir = Path(out_dir) / exp["id"]
    out_dir.mkdir(parents=True, exist_ok=True)
    model_file = _materialize_model(exp, out_dir)
    reps = repetitions if repetitions is not None else exp.get("repetitions", 1)

    points: list[dict] = []
    for rep in range(reps):
        for label, plan_dict in expand_points(exp, profile):
            plan_dict = copy.deepcopy(plan_dict)
            if model_file and plan_dict["workload"].get("mode") == "inference":
                plan_dict["workload"]["model_file"] = model_file
            plan = DeploymentPlan.from_dict(plan_dict)
            safe = label.replace("/", "_").replace("=", "")
            run_id = f"{exp['id']}-{safe}-r{rep}"
            try:
                point = run_point(label, plan, out_dir / "runs", run_id, timeout_s)
            except RuntimeError as exc:
                point = {"label": label, "params": {}, "ok": False,
                         "error": str(exc), "stats": {}}
            point["rep"] = rep
            points.append(point)

    report = {
        "experiment": exp["id"],
        "title": exp.get("title", ""),
        "profile": profile,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "thresholds": exp["thresholds"],
        "points": points,
    }
    report["metrics"] = derive_metrics(exp, report)

    from .checks import check_properties

    report["verdicts"] = check_properties(report, exp["thresholds"])

    report_path = out_dir / "report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_results_csv(report, out_dir / "results.csv")
    try:
        from .plots import render_report

        render_report(report, out_dir / "plots")
    except Exception as exc:  # plotting must never invalidate a finished run
        report.setdefault("warnings", []).append(f"plotting failed: {exc}")
    return report


def write_results_csv(report: dict, path: Path) -> None:
    """Flat per-point/per-component stats next to the figures."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "point", "rep", "component", "mean_sec", "std_sec",
                    "mean_op_micros", "throughput_mb_s", "n_ranks", "n_ops", "total_bytes"])
        for p in report["points"]:
            for comp, s in p.get("stats", {}).items():
                w.writerow([report["experiment"], p["label"], p.get("rep", 0), comp,
                            f"{s['mean_sec']:.9f}", f"{s['std_sec']:.9f}",
                            f"{s['mean_op_micros']:.3f}", f"{s['throughput_mb_s']:.3f}",
                            s["n_ranks"], s["n_ops"], s["total_bytes"]])


# --- derived metrics ----------------------------------------------------------

def _mean_op(point: dict, component: str) -> float | None:
    s = point.get("stats", {}).get(component)
    return s["mean_op_micros"] if s else None


def _transfer_latency(point: dict) -> float | None:
    send = _mean_op(point, "send")
    retrieve = _mean_op(point, "retrieve")
    if send is None or retrieve is None:
        return None
    return (send + retrieve) / 2.0


def _first(points: list[dict], label: str) -> dict | None:
    for p in points:
        if p["label"] == label and p.get("ok"):
            return p
    for p in points:
        if p["label"] == label:
            return p
    return None


def derive_metrics(exp: dict, report: dict) -> dict:
    kind = exp.get("kind", "transfer")
    x_axis = exp.get("x_axis", "")
    points = [p for p in report["points"] if p.get("rep", 0) == 0]
    metrics: dict = {}

    if kind == "transfer":
        latency = {}
        for p in points:
            lat = _transfer_latency(p)
            if lat is not None:
                latency[p["label"]] = lat
        metrics["mean_latency_us"] = latency

    if kind == "transfer" and x_axis == "payload_bytes":
        by_payload: dict[str, dict[int, dict]] = {}
        for p in points:
            depl = p["label"].split("/")[0] if "/" in p["label"] else "colocated"
            payload = p.get("params", {}).get("payload_bytes")
            if payload:
                by_payload.setdefault(depl, {})[payload] = p
        metrics["payload_curves"] = {
            depl: {
                str(size): {
                    "send_us": _mean_op(series[size], "send"),
                    "retrieve_us": _mean_op(series[size], "retrieve"),
                    "send_mb_s": series[size].get("stats", {}).get("send", {}).get("throughput_mb_s"),
                    "retrieve_mb_s": series[size].get("stats", {}).get("retrieve", {}).get("throughput_mb_s"),
                }
                for size in sorted(series)
            }
            for depl, series in by_payload.items()
        }

    if kind == "transfer" and x_axis == "nodes":
        by_nodes = {p.get("params", {}).get("nodes"): p for p in points
                    if p.get("params", {}).get("nodes")}
        if by_nodes:
            ref = by_nodes[min(by_nodes)]
            eff = {}
            for n, p in sorted(by_nodes.items()):
                entry = {}
                for comp in ("send", "retrieve"):
                    t_ref, t_n = _mean_op(ref, comp), _mean_op(p, comp)
                    if t_ref and t_n:
                        entry[comp] = t_ref / t_n
                eff[str(n)] = entry
            metrics["weak_efficiency"] = eff

    if kind == "transfer" and x_axis == "ranks":
        seq = []
        for p in sorted(points, key=lambda q: q.get("params", {}).get("ranks") or 0):
            lat = _transfer_latency(p)
            seq.append({"ranks": p.get("params", {}).get("ranks"),
                        "payload_bytes": p.get("params", {}).get("payload_bytes"),
                        "transfer_us": None if lat is None else 2 * lat})
        metrics["strong_scaling"] = seq

    if kind == "inference":
        decomp = {}
        for p in points:
            entry = {comp: _mean_op(p, comp)
                     for comp in ("send", "model_eval", "retrieve", "inference_total", "inline_eval")}
            entry["params"] = p.get("params", {})
            decomp[p["label"]] = entry
        metrics["inference_components"] = decomp

    if len([p for p in report["points"]]) != len(points):
        metrics["repetition_spread"] = _repetition_spread(report["points"])

    return metrics


def _repetition_spread(points: list[dict]) -> dict:
    """Max relative deviation of mean latency across repetitions per label."""
    by_label: dict[str, list[float]] = {}
    for p in points:
        lat = _transfer_latency(p) or _mean_op(p, "inference_total")
        if lat is not None:
            by_label.setdefault(p["label"], []).append(lat)
    out = {}
    for label, vals in by_label.items():
        if len(vals) > 1:
            out[label] = (max(vals) - min(vals)) / min(vals)
    return out
