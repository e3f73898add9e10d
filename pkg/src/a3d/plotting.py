"""Accuracy-versus-cost curves with dimension-coded segments.

Adjacent points on a trade-off curve differ in one or more of the three
factors; the connecting segment is colored by which one changed: red for
spatial, green for temporal, blue for width, black when several changed.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SEGMENT_COLORS = {"spatial": "red", "temporal": "green", "width": "blue",
                  "multiple": "black", "none": "gray"}


def segment_kind(a: dict, b: dict, tol: float = 1e-9) -> str:
    """Which factor changes between two trade-off rows."""
    changed = [name for name, key in
               (("width", "gamma_w"), ("spatial", "gamma_s"), ("temporal", "gamma_t"))
               if abs(a[key] - b[key]) > tol]
    if not changed:
        return "none"
    return changed[0] if len(changed) == 1 else "multiple"


def plot_tradeoff(curves: dict[str, list[dict]], out_path, title: str = ""):
    """curves: label -> trade-off rows (gamma_*, gflops, top1). Rows are drawn
    in cost order; each segment takes the color of its changed dimension."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for label, rows in curves.items():
        pts = sorted(rows, key=lambda r: r["gflops"])
        xs = [r["gflops"] for r in pts]
        ys = [r["top1"] for r in pts]
        ax.plot(xs, ys, "o", markersize=4, label=label)
        for a, b in zip(pts, pts[1:]):
            ax.plot([a["gflops"], b["gflops"]], [a["top1"], b["top1"]],
                    color=SEGMENT_COLORS[segment_kind(a, b)], linewidth=1.5)
    handles = [plt.Line2D([0], [0], color=c, label=k)
               for k, c in SEGMENT_COLORS.items() if k != "none"]
    ax.legend(handles=handles + list(ax.get_legend_handles_labels()[0]), fontsize=8)
    ax.set_xlabel("GFLOPs per view (multiply-adds)")
    ax.set_ylabel("top-1 accuracy (%)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
