"""Static report figures written to files (no interactive display)."""

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

FIGURE_NAMES = ("msd_vs_step.png", "msd_vs_neighbors.png", "iterations_vs_sigma.png")


def _label(block):
    if block.algorithm == "stationary-dkf":
        return f"stationary-dkf p={block.p:g}"
    return f"dmckf-dpd sigma={block.sigma:g} p={block.p:g}"


def _unique_blocks(blocks):
    # the baseline block is repeated once per sigma; plot it once per p
    seen, out = set(), []
    for b in blocks:
        key = (b.algorithm, b.p) if b.algorithm == "stationary-dkf" else (b.algorithm, b.sigma, b.p)
        if key not in seen:
            seen.add(key)
            out.append(b)
    return out


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100)


def plot_msd_vs_step(blocks, path):
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot()
    for b in _unique_blocks(blocks):
        per_step = b.sq_error.mean(axis=(0, 2))
        ax.plot(np.arange(1, per_step.size + 1), 10 * np.log10(np.maximum(per_step, 1e-300)),
                label=_label(b), lw=0.8)
    ax.set_xlabel("time step")
    ax.set_ylabel("network MSD (dB)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def plot_msd_vs_neighbors(result, path):
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    groups = {}
    for r in result.summary:
        key = (r.algorithm, r.p) if r.algorithm == "stationary-dkf" else (r.algorithm, r.sigma, r.p)
        groups.setdefault(key, {})[r.node] = (r.neighbors, r.msd_db)
    for key, nodes in groups.items():
        pts = np.array(sorted(nodes.values()))
        name = " ".join(f"{v:g}" if isinstance(v, float) else v for v in key)
        ax.plot(pts[:, 0], pts[:, 1], "o", ms=4, alpha=0.7, label=name)
    ax.set_xlabel("neighbors")
    ax.set_ylabel("node MSD (dB)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def plot_iterations_vs_sigma(blocks, path):
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    by_p = {}
    for b in blocks:
        if b.algorithm == "dmckf-dpd":
            by_p.setdefault(b.p, []).append((b.sigma, float(np.mean(b.iterations))))
    for p, pts in sorted(by_p.items()):
        pts = np.array(sorted(pts))
        ax.plot(pts[:, 0], pts[:, 1], "o-", label=f"p={p:g}")
    ax.set_xscale("log")
    ax.set_xlabel("kernel bandwidth sigma")
    ax.set_ylabel("average iterations per step")
    if by_p:
        ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def render_report(result, directory):
    """Write the standard figure set into ``directory``; returns the paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / name for name in FIGURE_NAMES]
    plot_msd_vs_step(result.blocks, paths[0])
    plot_msd_vs_neighbors(result, paths[1])
    plot_iterations_vs_sigma(result.blocks, paths[2])
    return paths
