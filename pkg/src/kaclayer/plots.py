"""Figure rendering for the CLI report paths.

Every subcommand that emits delimited data can also render a small
matplotlib figure next to it; these helpers keep the style in one place.
Figures carry no timestamps so identical runs produce identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KW = {"dpi": 130, "bbox_inches": "tight", "metadata": {"Software": None}}


def plot_free_energy(report, path, grid=0.02):
    """Free-energy surface with the two minimizers marked."""
    from . import meanfield

    axis = np.arange(-0.99, 0.99, grid)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    f = meanfield.free_energy(g1.ravel(), g2.ravel(), report.eps).reshape(g1.shape)
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.pcolormesh(axis, axis, (f - report.f_eq).T, shading="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, label="free energy above minimum")
    for s in (1, -1):
        ax.plot(s * report.m_eps, s * report.m_eps, "r+", ms=12, mew=2)
    ax.set_xlabel("layer-1 magnetization")
    ax.set_ylabel("layer-2 magnetization")
    ax.set_title(f"two-layer free energy, eps={report.eps:g}")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_magnetization_sweep(rows, path):
    eps = [r["eps"] for r in rows]
    m = [r["m_eps"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(eps, m, "o-", label="solved")
    xs = np.linspace(min(eps), max(eps), 200)
    ax.plot(xs, np.sqrt(3 * xs), "--", label="sqrt(3 eps)")
    ax.set_xlabel("vertical coupling eps")
    ax.set_ylabel("spontaneous magnetization")
    ax.legend()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_sandwich(rows, path):
    n = [r["n"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    ax1.plot(n, [r["per_site"] for r in rows], "o-", label="per-site log Z")
    ax1.axhline(-rows[0]["phi_hat"], color="k", ls="--", label="free-energy bound")
    ax1.set_xscale("log", base=2)
    ax1.set_xlabel("columns n")
    ax1.legend(fontsize=8)
    ax2.plot(n, [r["gap_scaled"] for r in rows], "s-")
    ax2.set_xscale("log", base=2)
    ax2.set_xlabel("columns n")
    ax2.set_ylabel("gap * n / log n")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_local_limit(rows, path):
    n = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(n, [r["prob_n"] for r in rows], "o-", label="P * n")
    ax.plot(n, [r["prob_n32"] for r in rows], "s-", label="P * n^{3/2}")
    ax.set_xlabel("columns n")
    ax.legend()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_profile(profile, path, m_eps=None):
    """Heatmap of a profile on its region's bounding grid."""
    region = profile.region
    x_lo, x_hi = int(region.xs.min()), int(region.xs.max())
    r_lo, r_hi = int(region.rows.min()), int(region.rows.max())
    grid = np.full((r_hi - r_lo + 1, x_hi - x_lo + 1), np.nan)
    grid[region.rows - r_lo, region.xs - x_lo] = profile.values
    fig, ax = plt.subplots(figsize=(7.5, 2.8))
    im = ax.imshow(grid, aspect="auto", origin="lower", interpolation="nearest",
                   cmap="coolwarm")
    fig.colorbar(im, ax=ax, label="magnetization")
    if m_eps is not None:
        ax.set_title(f"max |m - m_eps| = {np.nanmax(np.abs(grid - m_eps)):.3g}")
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_theta_map(labels, contours, path):
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(labels.big_theta.T, origin="lower", interpolation="nearest",
                   cmap="RdBu", vmin=-1, vmax=1)
    fig.colorbar(im, ax=ax, label="coarse phase label")
    for c in contours:
        ks = [k for k, _ in c.sp]
        js = [j for _, j in c.sp]
        ax.plot(ks, js, "kx", ms=4)
    ax.set_xlabel("rectangle column")
    ax.set_ylabel("rectangle row")
    ax.set_title(f"{len(contours)} contour(s)")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_chain_traces(streams, path, labels=None):
    """Center-spin running means for one or more observable streams."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for pos, stream in enumerate(streams):
        sweeps = [row[0] for row in stream]
        center = np.array([row[1] for row in stream], dtype=float)
        running = np.cumsum(center) / np.arange(1, len(center) + 1)
        name = labels[pos] if labels else f"chain {pos}"
        ax.plot(sweeps, running, label=name)
    ax.set_xlabel("sweep")
    ax.set_ylabel("running mean center spin")
    ax.legend(fontsize=8)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
