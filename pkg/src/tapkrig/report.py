"""Diagnostic figures written as PNG files (matplotlib, Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_variogram(path, v, initial, updated=None):
    """Empirical variogram with the first and the updated small-scale fits."""
    fig, ax = plt.subplots(figsize=(5, 4))
    m = v.nonempty
    ax.plot(v.lags[m], v.gamma[m], "o", color="k", label="empirical")
    h = np.linspace(0.0, v.edges[-1], 200)
    ax.plot(h, initial.variogram(h), "-", label="first fit")
    if updated is not None and updated != initial:
        ax.plot(h, updated.variogram(h), "--", label="after EM")
    ax.set_xlabel("distance")
    ax.set_ylabel("semivariance")
    ax.set_ylim(bottom=0)
    ax.legend(loc="lower right")
    _save(fig, path)


def plot_selection(path, lp, targets, k1, k2):
    """Explained variance and CV error along the penalty path."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.log10(lp.lambdas)
    ax.plot(x, lp.explained_variance, "-", color="C0", label="explained variance")
    for t, k, ls, name in ((targets[0], k1, ":", "first"), (targets[1], k2, "--", "second")):
        ax.axhline(t, color="C1", ls=ls, lw=1)
        ax.axvline(x[k], color="C1", ls=ls, lw=1,
                   label=f"{name} pass: {int(lp.n_active[k])} functions")
    ax.set_xlabel("log10 penalty")
    ax.set_ylabel("variance")
    ax.invert_xaxis()
    if lp.cv_mean is not None:
        ax2 = ax.twinx()
        ax2.errorbar(x, lp.cv_mean, yerr=lp.cv_se, color="C2", lw=0.8, elinewidth=0.5,
                     label="CV error")
        ax2.set_ylabel("CV mean squared error", color="C2")
    ax.legend(loc="center left", fontsize=8)
    _save(fig, path)


def plot_em(path, *states):
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, st in enumerate(states):
        h = np.array([r[4] for r in st.history], float)
        if np.all(np.isnan(h)):
            continue
        ax.plot(np.arange(len(h)), h, label=f"EM run {i + 1}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("log-likelihood")
    ax.legend()
    _save(fig, path)


def plot_maps(path, maps, extent=(0.0, 1.0, 0.0, 1.0)):
    """Panels of ``(ny, nx)`` grids; all but variance panels share one color scale."""
    names = list(maps)
    shared = [n for n in names if "variance" not in n]
    lo = min(float(np.nanmin(maps[n])) for n in shared) if shared else None
    hi = max(float(np.nanmax(maps[n])) for n in shared) if shared else None
    cols = min(len(names), 3)
    rows = int(np.ceil(len(names) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.6 * rows), squeeze=False)
    for ax, n in zip(axes.ravel(), names):
        kw = {} if "variance" in n else {"vmin": lo, "vmax": hi}
        im = ax.imshow(maps[n], origin="lower", extent=extent, cmap="viridis", **kw)
        ax.set_title(n)
        fig.colorbar(im, ax=ax, shrink=0.8)
    for ax in axes.ravel()[len(names):]:
        ax.axis("off")
    fig.tight_layout()
    _save(fig, path)


def plot_param_field(path, field):
    maps = {"first scale": field.a1, "second scale": field.a2, "angle": field.angle,
            "smoothness": field.nu}
    fig, axes = plt.subplots(1, 4, figsize=(15, 3.4))
    ext = (field.xs[0], field.xs[-1], field.ys[0], field.ys[-1])
    for ax, (n, v) in zip(axes, maps.items()):
        im = ax.imshow(v, origin="lower", extent=ext, cmap="viridis")
        ax.set_title(n)
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    _save(fig, path)
