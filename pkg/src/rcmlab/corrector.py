"""Periodic corrector, homogenized diffusion matrix and sublinearity statistics.

On a torus the corrector solves, coordinate by coordinate,

    L chi_i(x) = - sum_z z_i C_{x,x+z},

with z the minimal-image displacement. The right-hand side sums to zero over
the torus because every edge contributes +z and -z, so the singular system is
consistent; the gauge chi(0) = 0 fixes the additive constant.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .environment.moments import lp_average
from .errors import ConvergenceError, ValidationError
from .kernel import apply_generator


@dataclass
class CorrectorField:
    chi: np.ndarray                 # (n_sites, d)
    residuals: np.ndarray           # relative residual per coordinate
    iterations: list
    tol: float
    history: list = field(default_factory=list)
    gauge: str = "chi(0)=0"

    def to_dict(self):
        return {
            "gauge": self.gauge,
            "tol": self.tol,
            "residuals": self.residuals.tolist(),
            "iterations": self.iterations,
        }


@dataclass
class DiffusionMatrix:
    M: np.ndarray

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.M)

    def to_dict(self):
        return {"M": self.M.tolist(), "eigenvalues": self.eigenvalues.tolist()}


def _require_torus(env):
    if env.boundary != "torus":
        raise ValidationError("the corrector is defined on a torus environment")


def drift(env):
    """b(x) = sum_z z C_{x,x+z}, shape (n_sites, d)."""
    _, _, z, c = env.adjacency
    b = np.empty((env.n_sites, env.d))
    for i in range(env.d):
        b[:, i] = np.bincount(env.rows, weights=z[:, i] * c, minlength=env.n_sites)
    return b


def pi_norm(r, pi):
    """Dual-weighted norm sqrt(sum r^2 / pi)."""
    return float(np.sqrt(np.sum(r * r / pi)))


def _pcg(matvec, b, pi, tol, max_iter):
    """Jacobi-preconditioned CG for the PSD system with mean-zero data.

    Stops when ||b - A x||_pi <= tol ||b||_pi.
    """
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = pi_norm(b, pi)
    history = [1.0]
    if bnorm == 0:
        return x, 0.0, 0, history
    zv = r / pi
    p = zv.copy()
    rz = r @ zv
    for k in range(1, max_iter + 1):
        Ap = matvec(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = pi_norm(r, pi) / bnorm
        history.append(rel)
        if rel <= tol:
            # recompute the true residual to guard against drift
            r_true = b - matvec(x)
            rel = pi_norm(r_true, pi) / bnorm
            if rel <= tol:
                return x, rel, k, history
            r = r_true
        zv = r / pi
        rz_new = r @ zv
        p = zv + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach relative residual {tol} in {max_iter} iterations",
        history=history[-50:],
    )


def solve_corrector(env, tol=1e-10, max_iter=20000):
    """Corrector chi with chi(0) = 0 on a torus environment."""
    _require_torus(env)
    if not tol > 0:
        raise ValidationError("tol must be positive")
    b = drift(env)
    A = env.inner_matrix
    pi = env.pi

    def matvec(v):
        return pi * v - A @ v

    chi = np.zeros((env.n_sites, env.d))
    residuals, iters, hist = [], [], []
    for i in range(env.d):
        rhs = b[:, i] - b[:, i].mean()
        x, rel, k, h = _pcg(matvec, rhs, pi, tol, max_iter)
        chi[:, i] = x - x[env.origin]
        residuals.append(rel)
        iters.append(k)
        hist.append(h)
    return CorrectorField(chi, np.array(residuals), iters, tol, hist)


def residual_certificate(env, chi):
    """Relative residual ||L chi_i + b_i||_pi / ||b_i||_pi per coordinate.

    Uses :func:`kernel.apply_generator`, not the solver's matvec.
    """
    b = drift(env)
    out = []
    for i in range(env.d):
        r = apply_generator(env, chi[:, i]) + b[:, i]
        bn = pi_norm(b[:, i], env.pi)
        out.append(pi_norm(r, env.pi) / bn if bn > 0 else pi_norm(r, env.pi))
    return np.array(out)


def _chi_array(env, chi):
    chi = chi.chi if isinstance(chi, CorrectorField) else np.asarray(chi, dtype=np.float64)
    if chi.shape != (env.n_sites, env.d):
        raise ValidationError("corrector does not match the environment", shape=list(chi.shape))
    return chi


def corrected_gradients(env, chi):
    """z + chi(x+z) - chi(x) for every stored edge, shape (E, d)."""
    chi = _chi_array(env, chi)
    return env.edge_z + chi[env.edge_j] - chi[env.edge_i]


def diffusion_matrix(env, chi):
    """Spatial average (1/N) sum_x sum_z C (z + grad chi)(z + grad chi)^T."""
    _require_torus(env)
    g = corrected_gradients(env, chi)
    # each unordered edge appears twice in the sum over (x, z)
    M = 2.0 * (g * env.edge_c[:, None]).T @ g / env.n_sites
    M = 0.5 * (M + M.T)
    return DiffusionMatrix(M)


def corrected_energy(env, chi):
    """sum_x sum_z C |z + chi(x+z) - chi(x)|^2."""
    g = corrected_gradients(env, chi)
    return float(2.0 * np.sum(env.edge_c * (g * g).sum(axis=1)))


@dataclass
class SublinearityReport:
    radii: list
    max_ratio: list            # (1/n) max_{B_n} |chi|
    avg_ratio: list            # (1/R) || |chi| ||_{2p/(p-1), B_R}
    exponent: float
    excluded: list
    verdict_max: str
    verdict_avg: str

    def to_dict(self):
        return {
            "radii": self.radii,
            "max_ratio": self.max_ratio,
            "avg_ratio": self.avg_ratio,
            "exponent": self.exponent,
            "excluded": self.excluded,
            "verdict_max": self.verdict_max,
            "verdict_avg": self.verdict_avg,
        }


def _trend(vals):
    if len(vals) < 2:
        return "undefined"
    return "decreasing" if vals[-1] < vals[0] else "not-decreasing"


def sublinearity_report(env, chi, radii, p=math.inf):
    """Sup and averaged sublinearity ratios of |chi| on balls around the origin.

    ``|chi(x)|`` is the Euclidean norm of the vector corrector. Radii beyond
    the torus half-width ``side / 2`` are excluded and listed; balls are taken
    in the minimal-image distance, so radius ``side / 2`` is still well defined.
    """
    chi = _chi_array(env, chi)
    if not p > 1:
        raise ValidationError("p must exceed 1")
    exponent = 2.0 if p == math.inf else 2.0 * p / (p - 1.0)
    mag = np.sqrt((chi * chi).sum(axis=1))
    dist = env.distance_from(np.zeros(env.d, dtype=np.int64))
    radii = sorted(float(r) for r in radii)
    limit = env.side / 2.0 if env.boundary == "torus" else env.radius
    kept = [r for r in radii if 1 <= r <= limit]
    excluded = [r for r in radii if r not in kept]
    a, b = [], []
    for r in kept:
        ball = dist <= r + 1e-12
        a.append(float(mag[ball].max() / r))
        b.append(lp_average(mag[ball], exponent) / r)
    return SublinearityReport(kept, a, b, exponent, excluded, _trend(a), _trend(b))
