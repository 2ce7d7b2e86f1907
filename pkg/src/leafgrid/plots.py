"""Figures written next to the CSV outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import RadialGrid, components, natural_key, sorted_ids  # noqa: E402


def _layout(grid: RadialGrid) -> dict[str, tuple[float, float]]:
    """Layered tree layout: depth on y, leaf order on x."""
    pos = {}
    x_next = 0.0
    for comp in sorted(components(grid), key=lambda c: natural_key(min(c, key=natural_key))):
        if grid.root in comp:
            start = grid.root
        else:
            start = min(comp, key=natural_key)
        parent = {start: None}
        depth = {start: 0}
        order = [start]
        for u in order:
            for w in grid.neighbors(u):
                if w not in parent:
                    parent[w] = u
                    depth[w] = depth[u] + 1
                    order.append(w)
        kids = {u: [] for u in order}
        for u in order[1:]:
            kids[parent[u]].append(u)

        def place(u):
            nonlocal x_next
            ch = sorted_ids(kids[u])
            if not ch:
                pos[u] = (x_next, -depth[u])
                x_next += 1.0
                return
            for c in ch:
                place(c)
            pos[u] = (float(np.mean([pos[c][0] for c in ch])), -depth[u])

        place(start)
        x_next += 1.0
    return pos


def plot_topology(grid: RadialGrid, dest, title: str = "", label_lines: bool = True) -> None:
    pos = _layout(grid)
    width = max(6.0, 0.45 * len(grid.leaves) + 2)
    fig, ax = plt.subplots(figsize=(width, 5))
    for ln in grid.lines:
        (x0, y0), (x1, y1) = pos[ln.a], pos[ln.b]
        ax.plot([x0, x1], [y0, y1], color="0.55", lw=1, zorder=1)
        if label_lines and len(grid.lines) <= 40:
            ax.text((x0 + x1) / 2, (y0 + y1) / 2, f"{ln.r:.3g}", fontsize=6, color="0.3")
    obs = grid.observed
    for b, (x, y) in pos.items():
        if b == grid.root:
            color = "tab:red"
        elif b in obs:
            color = "tab:green"
        else:
            color = "tab:blue"
        ax.scatter([x], [y], s=60, color=color, zorder=2)
        ax.text(x, y - 0.18, b, fontsize=7, ha="center", va="top")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(dest, dpi=120)
    plt.close(fig)


def plot_summary(summary: list[dict], metric: str, dest, ylabel: str | None = None) -> None:
    """Metric against sample count, one line per tolerance, with standard-error bars."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for tol in sorted({s["tolerance"] for s in summary}):
        pts = sorted((s for s in summary if s["tolerance"] == tol), key=lambda s: s["n_samples"])
        xs = [s["n_samples"] for s in pts]
        ys = [s[metric] for s in pts]
        es = [s[f"{metric}_se"] for s in pts]
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=f"tol={tol:g}")
    if any(s["n_samples"] > 0 for s in summary):
        ax.set_xscale("log")
    ax.set_xlabel("samples")
    ax.set_ylabel(ylabel or metric.replace("_", " "))
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(dest, dpi=120)
    plt.close(fig)


def plot_sample_complexity(table: list[dict], slope: float, dest) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = np.array([r["n_buses"] for r in table], float)
    ys = np.array([max(r["n_star"], 1) for r in table], float)
    ax.loglog(xs, ys, "o-", label=f"fitted slope {slope:.2f}")
    ax.set_xlabel("buses")
    ax.set_ylabel("samples for target recovery")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(dest, dpi=120)
    plt.close(fig)
