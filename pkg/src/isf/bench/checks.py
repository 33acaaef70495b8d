"""Toleranced property checks over experiment reports.

Every threshold comes from the experiment spec file embedded in the report;
verdicts are PASS/FAIL for gated claims, FLAG for informational ones, and
INCONCLUSIVE when a sweep point is missing or failed.
"""

from __future__ import annotations


def _verdict(name: str, ok: bool | None, measured, threshold, note: str = "") -> dict:
    status = "INCONCLUSIVE" if ok is None else ("PASS" if ok else "FAIL")
    return {"name": name, "status": status, "measured": measured,
            "threshold": threshold, "note": note}


def _flag(name: str, ok: bool | None, measured, threshold, note: str = "") -> dict:
    status = "INCONCLUSIVE" if ok is None else ("OK" if ok else "FLAG")
    return {"name": name, "status": status, "measured": measured,
            "threshold": threshold, "note": note}


def check_properties(report: dict, thresholds: dict) -> list[dict]:
    exp = report.get("experiment", "")
    checks = {
        "E1": _check_e1, "E2": _check_e2, "E3": _check_e3, "E4": _check_e4,
        "E5": _check_e5, "E6": _check_e6, "E7": _check_e7,
    }
    verdicts: list[dict] = []
    fn = checks.get(exp)
    if fn is not None:
        verdicts.extend(fn(report, thresholds))
    verdicts.extend(_check_common(report, thresholds))
    return verdicts


def _check_common(report: dict, thresholds: dict) -> list[dict]:
    out = []
    failed = [p["label"] for p in report["points"] if not p.get("ok")]
    out.append(_verdict("all_sweep_points_ok", not failed, failed, []))
    orphans = {p["label"]: p.get("orphan_pids") for p in report["points"] if p.get("orphan_pids")}
    out.append(_verdict("no_orphan_processes", not orphans, orphans, {}))
    spread = report.get("metrics", {}).get("repetition_spread")
    if spread:
        worst = max(spread.values())
        out.append(_flag("reproducibility_envelope", worst <= 0.20, round(worst, 4), 0.20,
                         "repetition mean drift; flagged, not failed"))
    return out


def _points_by_label(report: dict) -> dict[str, dict]:
    return {p["label"]: p for p in report["points"] if p.get("rep", 0) == 0}


def _check_e1(report: dict, th: dict) -> list[dict]:
    lat = report.get("metrics", {}).get("mean_latency_us", {})
    if len(lat) < 2:
        return [_flag("db_cores_flat", None, lat, th)]
    vals = list(lat.values())
    spread = (max(vals) - min(vals)) / min(vals)
    return [_flag("db_cores_flat", spread <= th.get("flat_tolerance", 0.5),
                  round(spread, 4), th.get("flat_tolerance", 0.5),
                  "advisory: affinity may be a no-op on this machine")]


def _check_e2(report: dict, th: dict) -> list[dict]:
    out = []
    curves = report.get("metrics", {}).get("payload_curves", {}).get("colocated", {})
    small = str(th["floor_small_bytes"])
    ref = str(th["floor_reference_bytes"])
    scale = th["floor_reference_bytes"] / th["floor_small_bytes"]
    for comp in ("send_us", "retrieve_us"):
        t_small = curves.get(small, {}).get(comp)
        t_ref = curves.get(ref, {}).get(comp)
        if not t_small or not t_ref:
            out.append(_verdict(f"small_message_floor_{comp[:-3]}", None, None,
                                th["floor_ratio_min"]))
            continue
        ratio = t_small / (t_ref / scale)
        out.append(_verdict(f"small_message_floor_{comp[:-3]}",
                            ratio >= th["floor_ratio_min"], round(ratio, 2),
                            th["floor_ratio_min"],
                            f"time({small}B) vs time({ref}B)/{int(scale)}"))
    for comp in ("send_us", "retrieve_us"):
        series = [(int(k), v[comp]) for k, v in sorted(curves.items(), key=lambda kv: int(kv[0]))
                  if v.get(comp)]
        if len(series) < 2:
            out.append(_verdict(f"payload_monotonicity_{comp[:-3]}", None, None, th))
            continue
        inversions = []
        for (b0, t0), (b1, t1) in zip(series, series[1:]):
            if t1 < t0:
                inversions.append({"from": b0, "to": b1, "magnitude": (t0 - t1) / t0})
        ok = (len(inversions) <= th["monotonicity_max_inversions"]
              and all(i["magnitude"] <= th["monotonicity_tolerance"] for i in inversions))
        out.append(_verdict(
            f"payload_monotonicity_{comp[:-3]}", ok,
            [{**i, "magnitude": round(i["magnitude"], 4)} for i in inversions],
            {"max_inversions": th["monotonicity_max_inversions"],
             "tolerance": th["monotonicity_tolerance"]}))
    return out


def _check_e3(report: dict, th: dict) -> list[dict]:
    out = []
    points = _points_by_label(report)
    bad_local = {}
    for label, p in points.items():
        loc = p.get("locality")
        if not loc:
            continue
        expected = loc["expected_per_store"]["tensor_keys"]
        actual = loc["actual_tensor_keys"]
        outbound = loc["actual_outbound"]
        if any(a != expected for a in actual) or any(o != 0 for o in outbound):
            bad_local[label] = {"expected": expected, "actual": actual, "outbound": outbound}
    out.append(_verdict("locality_exact", not bad_local, bad_local, "exact per-store key counts"))

    eff = report.get("metrics", {}).get("weak_efficiency", {})
    if not eff:
        out.append(_verdict("weak_scaling_efficiency", None, None, th["weak_efficiency_min"]))
        return out
    largest = max(eff, key=int)
    entry = eff[largest]
    measured = min(entry.values()) if entry else None
    ok = None if measured is None else measured >= th["weak_efficiency_min"]
    out.append(_verdict("weak_scaling_efficiency", ok,
                        None if measured is None else round(measured, 4),
                        th["weak_efficiency_min"],
                        f"1 -> {largest} nodes, min over send/retrieve"))
    return out


def _check_e4(report: dict, th: dict) -> list[dict]:
    out = []
    lat = report.get("metrics", {}).get("mean_latency_us", {})
    small = f"clients={th['bottleneck_clients_small']}/shards=1"
    large = f"clients={th['bottleneck_clients_large']}/shards=1"
    if small in lat and large in lat:
        ratio = lat[large] / lat[small]
        out.append(_verdict("clustered_bottleneck_ratio", ratio >= th["bottleneck_ratio_min"],
                            round(ratio, 3), th["bottleneck_ratio_min"],
                            f"{large} vs {small} mean latency"))
    else:
        out.append(_verdict("clustered_bottleneck_ratio", None,
                            sorted(lat), th["bottleneck_ratio_min"]))
    prop = [lat[l] for l in th["proportional_points"] if l in lat]
    if len(prop) == len(th["proportional_points"]):
        spread = (max(prop) - min(prop)) / min(prop)
        out.append(_verdict("shard_proportionality_spread", spread <= th["proportional_spread_max"],
                            round(spread, 4), th["proportional_spread_max"],
                            "clients-per-shard held constant"))
    else:
        out.append(_verdict("shard_proportionality_spread", None, sorted(lat),
                            th["proportional_spread_max"]))
    return out


def _check_e5(report: dict, th: dict) -> list[dict]:
    out = []
    seq = [s for s in report.get("metrics", {}).get("strong_scaling", [])
           if s.get("transfer_us") is not None]
    if len(seq) < 2:
        return [_verdict("strong_scaling_monotonic", None, seq, th)]
    floor_ok = all(s["payload_bytes"] >= th["min_per_rank_bytes"] for s in seq)
    out.append(_verdict("per_rank_payload_floor", floor_ok,
                        [s["payload_bytes"] for s in seq], th["min_per_rank_bytes"]))
    decreasing = all(b["transfer_us"] < a["transfer_us"] for a, b in zip(seq, seq[1:]))
    out.append(_verdict("strong_scaling_monotonic", decreasing,
                        [{"ranks": s["ranks"], "transfer_us": round(s["transfer_us"], 1)}
                         for s in seq],
                        "per-rank transfer time decreases at each doubling"))
    return out


def _check_e6(report: dict, th: dict) -> list[dict]:
    out = []
    decomp = report.get("metrics", {}).get("inference_components", {})
    tol = th["component_sum_tolerance"]
    for label, entry in sorted(decomp.items()):
        if not label.startswith("networked"):
            continue
        total = entry.get("inference_total")
        parts = [entry.get("send"), entry.get("model_eval"), entry.get("retrieve")]
        if total is None or any(v is None for v in parts):
            out.append(_verdict(f"component_sum[{label}]", None, entry, tol))
            continue
        rel = abs(sum(parts) - total) / total
        out.append(_verdict(f"component_sum[{label}]", rel <= tol, round(rel, 4), tol,
                            "send+eval+retrieve vs per-iteration total"))
    n = th["inline_direction_batch"]
    net = decomp.get(f"networked/n={n}", {}).get("inference_total")
    inl = decomp.get(f"inline/n={n}", {}).get("inference_total")
    if net is None or inl is None:
        out.append(_verdict("inline_direction", None, {"networked": net, "inline": inl}, None))
    else:
        out.append(_verdict("inline_direction", inl <= net,
                            {"networked_us": round(net, 1), "inline_us": round(inl, 1)},
                            f"inline <= networked at n={n}"))
    return out


def _check_e7(report: dict, th: dict) -> list[dict]:
    decomp = report.get("metrics", {}).get("inference_components", {})
    weak = {l: e for l, e in decomp.items() if l.startswith("weak/")}
    if len(weak) < 2:
        return [_flag("weak_inference_efficiency", None, sorted(decomp), th)]
    by_nodes = {e["params"]["nodes"]: e for e in weak.values() if e.get("inference_total")}
    if len(by_nodes) < 2:
        return [_flag("weak_inference_efficiency", None, sorted(decomp), th)]
    ref = by_nodes[min(by_nodes)]["inference_total"]
    worst = min(ref / e["inference_total"] for e in by_nodes.values())
    return [_flag("weak_inference_efficiency", worst >= th["weak_efficiency_flag"],
                  round(worst, 4), th["weak_efficiency_flag"],
                  "informational: desk-scale inference weak scaling")]
