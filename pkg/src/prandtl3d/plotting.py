"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_norm_series(rows: list[dict], path, lines=("uv_high", "uv_low", "psi", "eta", "mixed_psi", "mixed_eta")):
    """Norm total and its six lines against time, log scale."""
    t = [r["t"] for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for key in ("total",) + tuple(lines):
        y = [r.get(f"norm_{key}", math.nan) for r in rows]
        if any(v > 0 for v in y if math.isfinite(v)):
            ax.semilogy(t, y, lw=2.0 if key == "total" else 1.0, label=key)
    ax.set_xlabel("t")
    ax.set_ylabel("norm")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_apriori(trace, path):
    """Per-epoch required constant for every rho pair."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    t = np.asarray(trace.times)
    for p in trace.pairs:
        r = np.asarray(trace.ratios[p], dtype=float)
        r = np.where(np.isfinite(r), r, np.nan)
        ax.plot(t, r, label=f"rho={p[0]:g}, rho~={p[1]:g}")
    if trace.violation_time is not None:
        ax.axvline(trace.violation_time, color="k", ls="--", lw=1, label="flagged epoch")
    ax.set_xlabel("t")
    ax.set_ylabel("required C_*")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_critical_curve(grid, gamma, path):
    """Height of the critical curve over the torus."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    im = ax.pcolormesh(grid.x, grid.y, np.asarray(gamma).T, shading="nearest")
    fig.colorbar(im, ax=ax, label="gamma(x, y)")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _save(fig, path)


def plot_convergence(results, path):
    """Error against refinement level for each study, log-log."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for res in results:
        lv = np.asarray(res.levels, dtype=float)
        err = np.asarray(res.errors, dtype=float)
        if np.all(err > 0):
            ax.loglog(lv, err, "o-", label=f"{res.label} (min order {res.min_order:.2f})")
    ax.set_xlabel("level")
    ax.set_ylabel("error")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_series(t, ys: dict, path, ylabel: str, log: bool = True):
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for k, y in ys.items():
        (ax.semilogy if log else ax.plot)(t, y, label=k)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    return _save(fig, path)
