"""Render experiment reports to PNG/SVG figures next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, out_dir: Path, name: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_dir / f"{name}.png", dpi=130, bbox_inches="tight")
    fig.savefig(out_dir / f"{name}.svg", bbox_inches="tight")
    plt.close(fig)


def render_report(report: dict, out_dir: str | Path) -> list[str]:
    out_dir = Path(out_dir)
    exp = report["experiment"]
    made: list[str] = []
    metrics = report.get("metrics", {})

    if "payload_curves" in metrics:
        made += _plot_payload_curves(exp, metrics["payload_curves"], out_dir)
    if "weak_efficiency" in metrics:
        made += _plot_weak_scaling(exp, report, out_dir)
    if "strong_scaling" in metrics:
        made += _plot_strong_scaling(exp, metrics["strong_scaling"], out_dir)
    if "inference_components" in metrics:
        made += _plot_inference(exp, metrics["inference_components"], out_dir)
    if exp in ("E1", "E4") and metrics.get("mean_latency_us"):
        made += _plot_latency_bars(exp, metrics["mean_latency_us"], out_dir)
    return made


def _plot_payload_curves(exp: str, curves: dict, out_dir: Path) -> list[str]:
    fig_t, ax_t = plt.subplots(figsize=(6, 4))
    fig_p, ax_p = plt.subplots(figsize=(6, 4))
    for depl, series in sorted(curves.items()):
        sizes = sorted(int(s) for s in series)
        for comp, style in (("send", "-o"), ("retrieve", "--s")):
            times = [series[str(s)].get(f"{comp}_us") for s in sizes]
            tps = [series[str(s)].get(f"{comp}_mb_s") for s in sizes]
            pairs_t = [(s, t / 1e6) for s, t in zip(sizes, times) if t]
            pairs_p = [(s, t) for s, t in zip(sizes, tps) if t]
            if pairs_t:
                ax_t.loglog(*zip(*pairs_t), style, label=f"{depl} {comp}")
            if pairs_p:
                ax_p.loglog(*zip(*pairs_p), style, label=f"{depl} {comp}")
    ax_t.set_xlabel("payload per rank [bytes]")
    ax_t.set_ylabel("mean time per operation [s]")
    ax_t.set_title(f"{exp}: transfer time vs payload size")
    ax_t.grid(True, which="both", alpha=0.3)
    ax_t.legend()
    ax_p.set_xlabel("payload per rank [bytes]")
    ax_p.set_ylabel("throughput [MB/s]")
    ax_p.set_title(f"{exp}: throughput vs payload size")
    ax_p.grid(True, which="both", alpha=0.3)
    ax_p.legend()
    _save(fig_t, out_dir, f"{exp.lower()}_time_vs_payload")
    _save(fig_p, out_dir, f"{exp.lower()}_throughput_vs_payload")
    return [f"{exp.lower()}_time_vs_payload", f"{exp.lower()}_throughput_vs_payload"]


def _plot_weak_scaling(exp: str, report: dict, out_dir: Path) -> list[str]:
    points = {p["label"]: p for p in report["points"] if p.get("rep", 0) == 0}
    nodes, send, retrieve = [], [], []
    for label, p in sorted(points.items(), key=lambda kv: kv[1].get("params", {}).get("nodes", 0)):
        stats = p.get("stats", {})
        if "send" in stats and "retrieve" in stats:
            nodes.append(p["params"]["nodes"])
            send.append(stats["send"]["mean_op_micros"] / 1e6)
            retrieve.append(stats["retrieve"]["mean_op_micros"] / 1e6)
    if not nodes:
        return []
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(nodes, send, "-o", label="send")
    ax.plot(nodes, retrieve, "--s", label="retrieve")
    ax.axhline(send[0], color="gray", lw=0.8, ls=":", label="ideal (flat)")
    ax.set_xlabel("virtual nodes")
    ax.set_ylabel("mean time per operation [s]")
    ax.set_title(f"{exp}: weak scaling, fixed payload per rank")
    ax.set_xticks(nodes)
    ax.set_ylim(bottom=0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, out_dir, f"{exp.lower()}_weak_scaling")
    return [f"{exp.lower()}_weak_scaling"]


def _plot_strong_scaling(exp: str, seq: list[dict], out_dir: Path) -> list[str]:
    pts = [(s["ranks"], s["transfer_us"] / 1e6) for s in seq if s.get("transfer_us")]
    if not pts:
        return []
    ranks, times = zip(*pts)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(ranks, times, "-o", base=2, label="measured")
    ideal = [times[0] * ranks[0] / r for r in ranks]
    ax.loglog(ranks, ideal, ":", base=2, color="gray", label="ideal 1/N")
    ax.set_xlabel("total ranks")
    ax.set_ylabel("per-rank transfer time per iteration [s]")
    ax.set_title(f"{exp}: strong scaling, fixed total bytes")
    ax.set_xticks(ranks)
    ax.get_xaxis().set_major_formatter(plt.ScalarFormatter())
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, out_dir, f"{exp.lower()}_strong_scaling")
    return [f"{exp.lower()}_strong_scaling"]


def _plot_inference(exp: str, decomp: dict, out_dir: Path) -> list[str]:
    labels = sorted(decomp)
    networked = [l for l in labels if l.startswith("networked") or l.startswith(("weak/", "strong/"))]
    inline = [l for l in labels if l.startswith("inline")]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = range(len(networked))
    bottoms = [0.0] * len(networked)
    for comp, color in (("send", "#4c72b0"), ("model_eval", "#dd8452"), ("retrieve", "#55a868")):
        vals = [(decomp[l].get(comp) or 0.0) / 1e6 for l in networked]
        ax.bar(x, vals, bottom=bottoms, label=comp, color=color, width=0.6)
        bottoms = [b + v for b, v in zip(bottoms, vals)]
    if inline:
        xi = [len(networked) + i for i in range(len(inline))]
        vals = [(decomp[l].get("inline_eval") or 0.0) / 1e6 for l in inline]
        ax.bar(xi, vals, label="inline_eval", color="#c44e52", width=0.6)
        ax.set_xticks(list(x) + xi)
        ax.set_xticklabels(networked + inline, rotation=30, ha="right")
    else:
        ax.set_xticks(list(x))
        ax.set_xticklabels(networked, rotation=30, ha="right")
    ax.set_ylabel("mean time per iteration [s]")
    ax.set_title(f"{exp}: inference cost decomposition")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    _save(fig, out_dir, f"{exp.lower()}_inference_components")
    return [f"{exp.lower()}_inference_components"]


def _plot_latency_bars(exp: str, latency: dict, out_dir: Path) -> list[str]:
    labels = sorted(latency)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(labels)), [latency[l] / 1e3 for l in labels], width=0.6)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("mean transfer latency [ms]")
    ax.set_title(f"{exp}: mean send/retrieve latency per configuration")
    ax.grid(True, axis="y", alpha=0.3)
    _save(fig, out_dir, f"{exp.lower()}_latency")
    return [f"{exp.lower()}_latency"]
