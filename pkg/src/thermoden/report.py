"""Figure rendering for run reports.

Every figure lands next to its CSV counterpart; the CSVs stay the canonical
record, the PNGs are for eyeballing. Uses the Agg backend so headless runs
work.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(log, path) -> None:
    """Loss terms over steps (log scale) with dev-MSE markers."""
    steps = [r.step for r in log if r.step > 0]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for attr, label in (("total", "total"), ("mse", "tracking mse"),
                        ("smoothness", "smoothness"), ("slack_y", "output slack")):
        vals = [getattr(r.breakdown, attr) for r in log if r.step > 0]
        if any(v > 0 for v in vals):
            ax1.semilogy(steps, np.maximum(vals, 1e-12), label=label, lw=0.8)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax1.set_title("training loss terms")

    ev = [(r.step, r.dev_open_loop_mse) for r in log if r.dev_open_loop_mse is not None]
    if ev:
        xs, ys = zip(*ev)
        ax2.semilogy(xs, ys, "o-", ms=3)
    ax2.set_xlabel("step")
    ax2.set_ylabel("dev open-loop MSE")
    ax2.set_title("model selection trace")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_open_loop_figure(pred: np.ndarray, ref: np.ndarray, path,
                          channels: int = 6, title: str = "open-loop simulation") -> None:
    """Predicted vs. reference trajectories for the first few output channels."""
    k = min(channels, pred.shape[1])
    fig, axes = plt.subplots(k, 1, figsize=(9, 1.6 * k), sharex=True, squeeze=False)
    t = np.arange(pred.shape[0])
    for i in range(k):
        ax = axes[i, 0]
        ax.plot(t, ref[:, i], color="crimson", lw=0.9, label="reference")
        ax.plot(t, pred[:, i], color="royalblue", lw=0.9, label="model")
        ax.set_ylabel(f"y{i + 1}", fontsize=8)
        if i == 0:
            ax.legend(fontsize=8, loc="upper right")
            ax.set_title(title, fontsize=10)
    axes[-1, 0].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_eigen_figure(report, path) -> None:
    """Complex-plane scatter of dynamics-weight eigenvalues with the unit
    circle and, for bounded weights, the eigenvalue-bound circles."""
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    angles = np.linspace(0, 2 * np.pi, 256)
    ax.plot(np.cos(angles), np.sin(angles), color="steelblue", lw=1.0,
            label="unit circle")
    if report.lambda_min is not None:
        for r, style in ((report.lambda_min, ":"), (report.lambda_max, "--")):
            ax.plot(r * np.cos(angles), r * np.sin(angles), style,
                    color="gray", lw=0.8)
    markers = "ox+sd^v"
    for i, spec in enumerate(report.spectra):
        ev = spec.eigenvalues
        ax.scatter(ev.real, ev.imag, s=18, marker=markers[i % len(markers)],
                   label=spec.source_label, alpha=0.8)
    ax.axhline(0, color="k", lw=0.4)
    ax.axvline(0, color="k", lw=0.4)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_aspect("equal")
    ax.legend(fontsize=7, loc="upper left")
    ax.set_title("dynamics weight eigenvalues")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sweep_figure(results, path, metric: str = "test_open_loop") -> None:
    """Best MSE per horizon, one line per model variant (log-scale y)."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    variants = sorted({(r.structure, r.constrained, r.block_kind)
                       for r in results if not r.error})
    for structure, constrained, block in variants:
        pts = {}
        for r in results:
            if r.error or (r.structure, r.constrained, r.block_kind) != \
                    (structure, constrained, block):
                continue
            val = getattr(r, metric)
            if np.isfinite(val):
                pts[r.horizon] = min(val, pts.get(r.horizon, np.inf))
        if not pts:
            continue
        hs = sorted(pts)
        tag = f"{structure[:6]}/{'con' if constrained else 'unc'}/{block}"
        ax.semilogy(hs, [pts[h] for h in hs], "o-", ms=4, lw=1.0, label=tag)
    ax.set_xlabel("training horizon N")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_xscale("log", base=2)
    ax.legend(fontsize=7)
    ax.set_title("ablation sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
