"""Figure rendering for run and sweep artifacts.

Pulls matplotlib with the Agg backend so figures render headless; import
this module only when figures are actually wanted.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Patch

_PACKET_STYLE = {
    "pkt_tx": ("tab:blue", "|", 40),
    "pkt_rx": ("tab:green", ".", 14),
    "pkt_lost": ("tab:red", "x", 22),
    "pkt_overheard": ("0.6", ".", 8),
}
_MARK_LABELS = {
    "trigger_tx": "trigger",
    "optimal_depth": "optimal depth",
    "repos_cmd_tx": "reposition cmd",
}


def timeline_figure(events: list[dict]):
    """Per-node event raster with the coordination moments marked."""
    lanes: list[str] = []
    for d in events:
        node = d.get("node")
        if node and node != "sim" and node not in lanes:
            lanes.append(node)
    lane_y = {name: i for i, name in enumerate(lanes)}

    fig, ax = plt.subplots(figsize=(11, 1.1 * max(len(lanes), 2) + 1.6))
    seen_kinds = []
    for kind, (color, marker, size) in _PACKET_STYLE.items():
        xs = [d["t"] for d in events if d.get("ev") == kind]
        ys = [lane_y[d["node"]] for d in events if d.get("ev") == kind]
        if xs:
            ax.scatter(xs, ys, c=color, marker=marker, s=size, linewidths=1.2, label=kind)
            seen_kinds.append(kind)
    for ev, label in _MARK_LABELS.items():
        ts = [d["t"] for d in events if d.get("ev") == ev]
        if ts:
            ax.axvline(ts[0], color="0.35", lw=0.9, ls="--")
            ax.annotate(
                label,
                (ts[0], len(lanes) - 0.35),
                rotation=90,
                fontsize=8,
                ha="right",
                va="top",
                color="0.25",
            )
    ax.set_yticks(range(len(lanes)), lanes)
    ax.set_ylim(-0.6, len(lanes) - 0.1)
    ax.set_xlabel("time [s]")
    ax.set_title("run timeline")
    if seen_kinds:
        ax.legend(loc="upper left", fontsize=8, ncols=len(seen_kinds))
    ax.grid(axis="x", alpha=0.25)
    fig.tight_layout()
    return fig


def per_boxplot_figure(sweep: dict[float, dict]):
    """Packet-error-rate boxes per range, baseline next to optimized.

    sweep maps range [m] to a monte_carlo() result; boxes are drawn from
    the stored five-number summaries, so raw samples are not needed.
    """
    ranges = sorted(sweep)
    fig, ax = plt.subplots(figsize=(1.6 * max(len(ranges), 3) + 2, 4.2))
    colors = {"baseline": "tab:orange", "optimized": "tab:blue"}
    for offset, phase in ((-0.17, "baseline"), (0.17, "optimized")):
        stats, positions = [], []
        for i, r in enumerate(ranges):
            s = sweep[r]["phases"][phase]["summary"]
            if s is None:
                continue
            stats.append(
                {
                    "med": s["median"],
                    "q1": s["q1"],
                    "q3": s["q3"],
                    "whislo": s["min"],
                    "whishi": s["max"],
                    "label": "",
                }
            )
            positions.append(i + offset)
        if stats:
            art = ax.bxp(stats, positions=positions, widths=0.28, showfliers=False,
                         patch_artist=True)
            for box in art["boxes"]:
                box.set_facecolor(colors[phase])
                box.set_alpha(0.7)
            for med in art["medians"]:
                med.set_color("black")
    ax.set_xticks(range(len(ranges)), [f"{r:g}" for r in ranges])
    ax.set_xlabel("leader-follower range [m]")
    ax.set_ylabel("packet error rate")
    ax.set_ylim(bottom=-0.02)
    ax.set_title("packet error rate by range")
    ax.legend(handles=[Patch(facecolor=c, alpha=0.7, label=p) for p, c in colors.items()],
              fontsize=9)
    ax.grid(axis="y", alpha=0.25)
    fig.tight_layout()
    return fig


def save_figure(fig, path) -> None:
    fig.savefig(path, dpi=120)
    plt.close(fig)
