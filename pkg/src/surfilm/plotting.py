"""PNG figures for the CLI reports (matplotlib, Agg backend)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns give identical files
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_profiles(snapshots, path, eps=None):
    """h and Gamma against x, one line per snapshot; ``snapshots`` is [(t, x, h, g)]."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    cmap = plt.get_cmap("viridis")
    k = max(1, len(snapshots) - 1)
    for i, (t, x, h, g) in enumerate(snapshots):
        c = cmap(i / k)
        ax1.plot(x, h, color=c, label=f"t={t:.4g}")
        ax2.plot(x, g, color=c)
    if eps is not None:
        ax1.axhline(math.sqrt(eps), color="0.5", ls=":", lw=1)
        ax2.axhline(eps, color="0.5", ls=":", lw=1)
    ax1.set(xlabel="x", ylabel="h", title="film height")
    ax2.set(xlabel="x", ylabel="Gamma", title="surfactant")
    ax1.legend(fontsize=7)
    return _save(fig, path)


def plot_energy(t, L, cum_D, slack, path, label="regularized"):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(t, L, label="L(t)")
    ax1.plot(t, L + cum_D, label="L(t) + int D")
    ax1.axhline(L[0], color="0.5", ls=":", lw=1, label="L(0)")
    ax1.set(xlabel="t", title=f"energy ledger ({label})")
    ax1.legend(fontsize=7)
    ax2.plot(t, slack)
    ax2.axhline(0.0, color="0.5", ls=":", lw=1)
    ax2.set(xlabel="t", ylabel="L(0) - L(t) - int D", title="slack")
    return _save(fig, path)


def plot_sweep(table, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    eps_b = table.column("eps_b")
    for key, style in (("dh_L2_QT", "o-"), ("dgamma_L2_QT", "s-"),
                       ("dh_L2_sup", "o--"), ("dgamma_L2_sup", "s--")):
        if key in table.columns():
            d = table.column(key)
            ok = np.isfinite(d) & (d > 0)
            ax.loglog(eps_b[ok], d[ok], style, label=key)
    ax.invert_xaxis()
    ax.set(xlabel="eps (smaller member)", ylabel="distance", title="eps self-convergence")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_orders(spatial, temporal, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    for c, e in spatial.errors.items():
        ax1.loglog(spatial.sizes, e, "o-", label=c)
    ax1.set(xlabel="cells", ylabel="L2 error at T", title="spatial refinement")
    ax1.legend(fontsize=7)
    for c, e in temporal.errors.items():
        ax2.loglog(temporal.sizes, e, "o-", label=c)
    ax2.set(xlabel="dt", ylabel="distance to dt/2 run", title="temporal refinement")
    ax2.legend(fontsize=7)
    return _save(fig, path)
