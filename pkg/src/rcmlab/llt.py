"""Local limit theorem error: rescaled heat kernel versus the Gaussian kernel.

For a diffusion matrix ``M`` the comparison kernel is

    k_M(t, x) = (2 pi t)^(-d/2) det(M)^(-1/2) exp(-<x, M^-1 x> / (2 t)),

the density of a Gaussian with covariance ``M t``. The error at scale ``n``
is the sup over a finite grid of ``|n^d p(n^2 t, 0, floor(n x)) - k_M(t, x)|``.
"""

from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from .corrector import DiffusionMatrix
from .errors import TruncationError, ValidationError
from .kernel import delta, evolve_at

ESCAPE_THRESHOLD = 1e-2
QUENCHED_NOTE = (
    "each curve uses finitely many fixed environment samples; it cannot distinguish "
    "almost-sure convergence from convergence in probability"
)


@dataclass(frozen=True)
class GaussianKernelParams:
    M: np.ndarray
    det: float
    inv: np.ndarray

    @classmethod
    def from_matrix(cls, M):
        if isinstance(M, DiffusionMatrix):
            M = M.M
        M = np.atleast_2d(np.asarray(M, dtype=np.float64))
        if M.shape[0] != M.shape[1]:
            raise ValidationError("M must be square")
        if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValidationError("M must be symmetric")
        M = 0.5 * (M + M.T)
        ev = np.linalg.eigvalsh(M)
        if ev.min() <= 1e-12 * max(1.0, ev.max()):
            raise ValidationError("M must be positive definite", eigenvalues=ev.tolist())
        return cls(M, float(np.prod(ev)), np.linalg.inv(M))

    @property
    def d(self):
        return self.M.shape[0]


def gaussian_kernel(params, t, x):
    """k_M(t, x) for points ``x`` of shape (d,) or (k, d)."""
    if not t > 0:
        raise ValidationError("t must be positive")
    x = np.asarray(x, dtype=np.float64)
    q = np.einsum("...i,ij,...j->...", x, params.inv, x)
    return (2 * math.pi * t) ** (-params.d / 2) / math.sqrt(params.det) * np.exp(-q / (2 * t))


@dataclass(frozen=True)
class LLTGrid:
    """Sampling of the sup: spatial step in rescaled units and time step."""

    x_step: float = 1.0 / 64
    t_step: float = 0.125

    def __post_init__(self):
        if not (self.x_step > 0 and self.t_step > 0):
            raise ValidationError("grid steps must be positive")

    def times(self, T1, T2):
        k = int(math.floor((T2 - T1) / self.t_step + 1e-9))
        ts = T1 + self.t_step * np.arange(k + 1)
        if T2 - ts[-1] > 1e-9 * max(1.0, T2):
            ts = np.append(ts, T2)
        return ts

    def points(self, d, R):
        k = int(math.floor(R / self.x_step + 1e-9))
        axis = self.x_step * np.arange(-k, k + 1)
        pts = np.array(list(itertools.product(axis, repeat=d)))
        return pts[(pts**2).sum(axis=1) <= R * R * (1 + 1e-12)]


def floor_map(n, x):
    """Lattice point [n x] with componentwise floor."""
    return np.floor(n * np.asarray(x, dtype=np.float64)).astype(np.int64)


def escape_estimate(env, params, n, T2, kernel_at_T2=None, R=0.0):
    """Mass that the finite box can misplace on the sampled grid by time n^2 T2.

    Torus: Gaussian mass at distance >= side - n R in some coordinate, i.e.
    mass that can wrap around onto the grid |x| <= R. Box: mass killed at
    the boundary, read off the computed kernel.
    """
    if env.boundary == "box":
        if kernel_at_T2 is None:
            raise ValidationError("box mode needs the kernel at n^2 T2")
        return float(max(0.0, 1.0 - kernel_at_T2.sum()))
    var = np.diag(params.M) * n * n * T2
    gap = env.side - n * R
    if gap <= 0:
        return 1.0
    return float(sum(math.erfc(gap / math.sqrt(2 * v)) for v in var))


def _rescaled(env, n, T1, T2, grid, tol):
    times = grid.times(T1, T2)
    p = evolve_at(env, delta(env), n * n * times, tol)
    return times, p


def _error_records(env, params, n, times, p, pts, long_format):
    d = env.d
    idx = env.site_index(floor_map(n, pts))
    if np.any(idx < 0) or np.any(idx >= env.n_sites):
        raise ValidationError("spatial grid reaches outside the box at this n")
    sup, records = 0.0, []
    for t, pt in zip(times, p):
        resc = n**d * pt[idx]
        g = gaussian_kernel(params, t, pts)
        err = np.abs(resc - g)
        sup = max(sup, float(err.max()))
        if long_format:
            for x, a, b, e in zip(pts, resc, g, err):
                records.append((n, float(t), *map(float, x), float(a), float(b), float(e)))
    return sup, records


def llt_error(env, params, n, R, T1, T2, grid=LLTGrid(), tol=1e-12, threshold=ESCAPE_THRESHOLD,
              long_format=False):
    """E_n = max over the grid of |n^d p(n^2 t, 0, [n x]) - k_M(t, x)|.

    Raises :class:`TruncationError` when the escape estimate exceeds
    ``threshold``. Returns ``(E_n, info)``; ``info`` holds the escape estimate
    and, with ``long_format``, one record per grid point.
    """
    if n < 1 or not (0 < T1 <= T2) or R < 0:
        raise ValidationError("need n >= 1, 0 < T1 <= T2 and R >= 0")
    if params.d != env.d:
        raise ValidationError("M does not match the environment dimension")
    if env.boundary == "torus":
        est = escape_estimate(env, params, n, T2, R=R)
        if est > threshold:
            raise TruncationError(f"escape estimate {est:.3g} exceeds {threshold}", n=n, estimate=est)
    times, p = _rescaled(env, n, T1, T2, grid, tol)
    if env.boundary == "box":
        est = escape_estimate(env, params, n, T2, p[-1])
        if est > threshold:
            raise TruncationError(f"killed mass {est:.3g} exceeds {threshold}", n=n, estimate=est)
    sup, records = _error_records(env, params, n, times, p, grid.points(env.d, R), long_format)
    return sup, {"escape_estimate": est, "records": records}


@dataclass
class LLTErrorCurve:
    n: list
    errors: list
    R: float
    T1: float
    T2: float
    grid: LLTGrid
    escape: list
    mode: str = "quenched"
    records: list = field(default_factory=list)

    @property
    def verdict(self):
        if len(self.errors) < 2:
            return "undefined"
        return "decreasing" if self.errors[-1] < self.errors[0] else "not-decreasing"

    def to_dict(self):
        return {
            "n": self.n,
            "E_n": self.errors,
            "verdict": self.verdict,
            "mode": self.mode,
            "grid": {"R": self.R, "T1": self.T1, "T2": self.T2,
                     "x_step": self.grid.x_step, "t_step": self.grid.t_step},
            "escape_estimate": self.escape,
            "note": QUENCHED_NOTE,
        }


def _check_n_list(n_list):
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValidationError("n_list must be nonempty and strictly increasing")
    return n_list


def convergence_study(env, params, n_list, R, T1, T2, grid=LLTGrid(), tol=1e-12,
                      threshold=ESCAPE_THRESHOLD, long_format=False):
    """E_n for each n on one fixed environment."""
    n_list = _check_n_list(n_list)
    errs, esc, recs = [], [], []
    for n in n_list:
        e, info = llt_error(env, params, n, R, T1, T2, grid, tol, threshold, long_format)
        errs.append(e)
        esc.append(info["escape_estimate"])
        recs.extend(info["records"])
    return LLTErrorCurve(n_list, errs, R, T1, T2, grid, esc, "quenched", recs)


def averaged_study(envs, params, n_list, R, T1, T2, grid=LLTGrid(), tol=1e-12,
                   threshold=ESCAPE_THRESHOLD):
    """E_n for the kernel averaged over several environment samples.

    This compares the annealed (environment-averaged) kernel with k_M, a
    different statement from the quenched study.
    """
    n_list = _check_n_list(n_list)
    if not envs:
        raise ValidationError("need at least one environment")
    d = envs[0].d
    pts = grid.points(d, R)
    errs, esc = [], []
    for n in n_list:
        acc, worst = None, 0.0
        for env in envs:
            if env.boundary == "torus":
                worst = max(worst, escape_estimate(env, params, n, T2, R=R))
            times, p = _rescaled(env, n, T1, T2, grid, tol)
            if env.boundary == "box":
                worst = max(worst, escape_estimate(env, params, n, T2, p[-1]))
            idx = env.site_index(floor_map(n, pts))
            vals = n**d * p[:, idx]
            acc = vals if acc is None else acc + vals
        if worst > threshold:
            raise TruncationError(f"escape estimate {worst:.3g} exceeds {threshold}", n=n, estimate=worst)
        acc /= len(envs)
        g = np.array([gaussian_kernel(params, t, pts) for t in times])
        errs.append(float(np.abs(acc - g).max()))
        esc.append(worst)
    return LLTErrorCurve(n_list, errs, R, T1, T2, grid, esc, f"averaged over {len(envs)} environments")
