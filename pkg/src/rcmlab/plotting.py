"""Report figures. Rendered off-screen with the Agg backend."""

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.4),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}


def _figure():
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(constrained_layout=True)
    return fig, ax


def save_figure(fig, path):
    """Write ``fig`` as PNG without timestamp or version metadata, atomically."""
    tmp = f"{path}.tmp"
    with plt.rc_context(STYLE):
        fig.savefig(tmp, format="png", metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)
    return path


def llt_curve(curve, path):
    fig, ax = _figure()
    ax.loglog(curve.n, curve.errors, "o-", color="k")
    ax.set_xlabel("n")
    ax.set_ylabel("sup-error E_n")
    ax.set_title(f"R = {curve.R}, t in [{curve.T1}, {curve.T2}] ({curve.verdict})")
    ax.set_xticks(curve.n)
    ax.set_xticklabels([str(n) for n in curve.n])
    return save_figure(fig, path)


def kernel_slice(env, values, path, title="p(t, 0, .)"):
    """Heat map of a 2-d field, or a line plot along the first axis otherwise."""
    fig, ax = _figure()
    vals = np.asarray(values)[: env.n_sites]
    if env.d == 2:
        grid = vals.reshape(env.shape)
        lo = env.lo
        ext = (lo - 0.5, lo + env.side - 0.5, lo - 0.5, lo + env.side - 0.5)
        im = ax.imshow(grid.T, origin="lower", extent=ext, cmap="viridis")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x_1")
        ax.set_ylabel("x_2")
    else:
        on_axis = np.all(env.coords[: env.n_sites, 1:] == 0, axis=1) if env.d > 1 else np.ones(env.n_sites, bool)
        x = env.coords[: env.n_sites, 0][on_axis]
        order = np.argsort(x)
        ax.plot(x[order], vals[on_axis][order], color="k")
        ax.set_xlabel("x_1")
    ax.set_title(title)
    return save_figure(fig, path)


def sublinearity(report, path):
    fig, ax = _figure()
    ax.plot(report.radii, report.max_ratio, "o-", label="max |chi| / n")
    ax.plot(report.radii, report.avg_ratio, "s--", label=f"l^{report.exponent:g} average / n")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("radius n")
    ax.set_ylabel("ratio")
    ax.legend()
    return save_figure(fig, path)


def ondiag(report, path):
    fig, ax = _figure()
    ax.plot(report.t_grid, report.scaled_sup, "o-", color="k")
    ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("t^(d/2) sup p(t, 0, x)")
    ax.set_title(f"max/min = {report.ratio:.3g} ({report.verdict})")
    return save_figure(fig, path)


def oscillation(report, path):
    fig, ax = _figure()
    ks = np.arange(len(report.osc))
    osc = np.array(report.osc)
    pos = osc > 0
    ax.semilogy(ks[pos], osc[pos], "o-", color="k")
    ax.set_xlabel("level k")
    ax.set_ylabel("oscillation")
    beta = "undefined" if report.beta_hat is None else f"{report.beta_hat:.3g}"
    ax.set_title(f"base {report.base:g}, fitted exponent {beta}")
    return save_figure(fig, path)


def implied_constants(values, path, name):
    fig, ax = _figure()
    vals = np.asarray(values, dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    ax.plot(np.arange(1, len(vals) + 1), vals, "o", color="k")
    ax.set_xlabel("trial")
    ax.set_ylabel("implied constant")
    ax.set_title(name)
    return save_figure(fig, path)


def endpoint_scatter(points, path, n, t):
    fig, ax = _figure()
    pts = np.asarray(points)
    if pts.shape[1] >= 2:
        k = min(len(pts), 5000)
        ax.plot(pts[:k, 0], pts[:k, 1], ".", ms=1, color="k", alpha=0.4)
        ax.set_aspect("equal")
        ax.set_ylabel("x_2")
    else:
        ax.hist(pts[:, 0], bins=max(10, int(math.sqrt(len(pts)))), color="0.4")
    ax.set_xlabel("x_1")
    ax.set_title(f"rescaled endpoints, n = {n}, t = {t:g}")
    return save_figure(fig, path)
