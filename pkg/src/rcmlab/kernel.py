"""Heat kernels and caloric functions by uniformization.

For a generator ``G`` with off-diagonal rates bounded by ``Lam = max_x pi_x``,
``P = I + G/Lam`` is nonnegative with row sums at most one, and

    exp(t G) v = sum_k Poisson(k; Lam t) P^k v.

Truncating the series where the Poisson tail drops below ``tol`` gives a
sup-norm error of at most ``tol * ||v||_inf`` because ``||P^k||_inf <= 1``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .errors import ValidationError

SNAP_TOL = 1e-9


# ----------------------------------------------------------------------
# fields and windows
@dataclass
class SpaceTimeField:
    """Values on a uniform time grid ``t0 + k*dt``, ``k = 0..steps``.

    ``values`` has shape ``(steps + 1, len(sites))``; ``sites`` are environment
    site indices (``None`` means all stored sites in order).
    """

    t0: float
    dt: float
    values: np.ndarray
    sites: np.ndarray | None = None

    @property
    def steps(self):
        return self.values.shape[0] - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def t_end(self):
        return self.t0 + self.dt * self.steps

    def index_of(self, t):
        """Grid index nearest to ``t``; raises if ``t`` is outside the grid."""
        if self.dt == 0:
            return 0
        k = (t - self.t0) / self.dt
        if k < -SNAP_TOL or k > self.steps + SNAP_TOL:
            raise ValidationError(f"time {t} outside the field's grid [{self.t0}, {self.t_end}]")
        return int(min(max(round(k), 0), self.steps))

    def window(self, t_lo, t_hi):
        """Grid indices covering [t_lo, t_hi], snapped to the nearest grid times."""
        return np.arange(self.index_of(t_lo), self.index_of(t_hi) + 1)

    def columns(self, site_idx):
        """Column positions of environment sites ``site_idx``."""
        site_idx = np.asarray(site_idx)
        if self.sites is None:
            return site_idx
        pos = np.full(int(max(self.sites.max(), site_idx.max(initial=0))) + 1, -1)
        pos[self.sites] = np.arange(len(self.sites))
        cols = pos[site_idx]
        if np.any(cols < 0):
            raise ValidationError("field is not defined on some requested sites")
        return cols

    def __mul__(self, lam):
        return SpaceTimeField(self.t0, self.dt, self.values * lam, self.sites)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Cylinder:
    """Space-time window ``[t_lo, t_hi] x B_R(center)``."""

    t_lo: float
    t_hi: float
    R: float
    center: tuple = None
    kind: str = "Q"

    def __post_init__(self):
        if not self.t_hi > self.t_lo:
            raise ValidationError("cylinder needs positive temporal depth")
        if self.R < 1:
            raise ValidationError("cylinder radius must be >= 1")

    @classmethod
    def q(cls, t, s, R, center=None):
        """Q_{t,x,s,R} = [t-s, t] x B_R(x)."""
        return cls(t - s, t, R, center, "Q")

    @classmethod
    def q_minus(cls, t0, r, center=None):
        return cls(t0 - r * r, t0, r, center, "Q-")

    @classmethod
    def q_plus(cls, t0, r, center=None):
        return cls(t0, t0 + r * r, r, center, "Q+")

    @classmethod
    def u_minus(cls, t0, r, center=None):
        return cls(t0 - 2 * r * r, t0 - r * r, r, center, "U-")

    @classmethod
    def u_plus(cls, t0, r, center=None):
        return cls(t0 + r * r, t0 + 2 * r * r, r, center, "U+")

    @property
    def depth(self):
        return self.t_hi - self.t_lo

    def center_of(self, d):
        return np.zeros(d, dtype=np.int64) if self.center is None else np.asarray(self.center, dtype=np.int64)

    def to_dict(self):
        return {"kind": self.kind, "t_lo": self.t_lo, "t_hi": self.t_hi, "R": self.R,
                "center": None if self.center is None else list(self.center)}


# ----------------------------------------------------------------------
# generator and Dirichlet form
def apply_generator(env, u, x=None, exterior=None):
    """(L u)(x) = sum_y (u(y) - u(x)) C_{x,y}.

    ``u`` lives on stored sites. Neighbours outside the box take values from
    ``exterior`` (an array over outer sites, default 0: killed). Returns the
    whole field when ``x`` is None, else the value at coordinates ``x``.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != env.n_sites:
        raise ValidationError("u must be defined on every stored site")
    Lu = env.inner_matrix @ u - env.pi * u
    if env.n_total > env.n_sites and exterior is not None:
        Lu = Lu + env.outer_matrix @ np.asarray(exterior, dtype=np.float64)
    if x is None:
        return Lu
    return float(Lu[env.site_index(np.asarray(x))])


def dirichlet_energy(env, f):
    """(1/2) sum_{x,y} (f(x) - f(y))^2 C_{x,y} over pairs of stored sites."""
    f = np.asarray(f, dtype=np.float64)
    inner = (env.edge_i < env.n_sites) & (env.edge_j < env.n_sites)
    i, j, c = env.edge_i[inner], env.edge_j[inner], env.edge_c[inner]
    return float(np.sum(c * (f[i] - f[j]) ** 2))


# ----------------------------------------------------------------------
# uniformization
class Uniformized:
    """exp(t G) for ``G = rate * (P - I)`` by Poisson-weighted powers of ``P``."""

    def __init__(self, G, rate=None):
        G = sp.csr_matrix(G)
        diag = -G.diagonal()
        if rate is None:
            rate = float(diag.max(initial=0.0))
        if not rate > 0:
            raise ValidationError("uniformization rate is zero (no jumps)")
        self.rate = rate
        self.P = (sp.identity(G.shape[0], format="csr") + G / rate).tocsr()
        self.P.eliminate_zeros()
        if self.P.nnz and self.P.data.min() < -1e-12:
            raise ValidationError("uniformization rate below a diagonal rate")

    def weights(self, dt, tol):
        lam = self.rate * dt
        K = int(stats.poisson.isf(tol, lam)) + 1
        K = max(K, 1)
        w = stats.poisson.pmf(np.arange(K + 1), lam)
        return w

    def advance(self, v, dt, tol):
        """Apply exp(dt G) to ``v`` with sup-norm error <= tol * ||v||_inf."""
        if dt == 0:
            return np.array(v, dtype=np.float64, copy=True)
        if dt < 0:
            raise ValidationError("negative time step")
        w = self.weights(dt, tol)
        term = np.array(v, dtype=np.float64, copy=True)
        out = w[0] * term
        for k in range(1, len(w)):
            term = self.P @ term
            out += w[k] * term
        return out


def _check_tol(tol):
    if not tol > 0:
        raise ValidationError("tol must be positive")


def evolve(env, u0, T, tol=1e-12, steps=1, t0=0.0):
    """Solve d/dt u = L u on the stored sites from ``u0`` over ``[t0, t0+T]``.

    Torus mode conserves mass. In box mode jumps leaving the box are killed.
    Returns the solution on ``steps + 1`` uniformly spaced times; the total
    sup-norm error is at most ``tol * ||u0||_inf``.
    """
    _check_tol(tol)
    if not T > 0:
        raise ValidationError("T must be positive")
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape[0] != env.n_sites:
        raise ValidationError("u0 must be defined on every stored site")
    prop = Uniformized(env.generator_matrix())
    dt = T / steps
    out = np.empty((steps + 1, env.n_sites))
    out[0] = u0
    for k in range(steps):
        out[k + 1] = prop.advance(out[k], dt, tol / steps)
    return SpaceTimeField(t0, dt, out)


def evolve_at(env, u0, times, tol=1e-12):
    """Solution of the heat equation at increasing ``times`` (starting from 0)."""
    _check_tol(tol)
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValidationError("times must be nonnegative and nondecreasing")
    prop = Uniformized(env.generator_matrix())
    v = np.asarray(u0, dtype=np.float64).copy()
    t_prev, out = 0.0, []
    per_step = tol / max(len(times), 1)
    for t in times:
        v = prop.advance(v, t - t_prev, per_step)
        out.append(v.copy())
        t_prev = t
    return np.array(out)


def delta(env, x=None):
    u = np.zeros(env.n_sites)
    u[env.origin if x is None else env.site_index(np.asarray(x))] = 1.0
    return u


def heat_kernel(env, t, x=None, tol=1e-12):
    """p(t, x, .) with respect to counting measure (killed at box exits)."""
    if t < 0:
        raise ValidationError("t must be nonnegative")
    u0 = delta(env, x)
    if t == 0:
        return u0
    return evolve(env, u0, t, tol).values[-1]


# ----------------------------------------------------------------------
# caloric functions on cylinders
def reachable_exterior(env, region):
    """Sites outside ``region`` joined to it by a stored edge."""
    mask = np.zeros(env.n_total, dtype=bool)
    mask[region] = True
    W = env.conductance_matrix[region]
    cols = np.unique(W.indices)
    return cols[~mask[cols]]


def _exterior_values(exterior, k, n_total):
    if isinstance(exterior, SpaceTimeField):
        vals = exterior.values[min(k, exterior.steps)]
        if exterior.sites is not None:
            full = np.full(n_total, np.nan)
            full[exterior.sites] = vals
            return full
        return vals
    return np.asarray(exterior, dtype=np.float64)


def solve_caloric(env, cyl, initial, exterior, dt=None, tol=1e-12):
    """Solve d/dt u = L u on ``cyl`` with frozen exterior data.

    ``initial`` gives u on B_R at the bottom time (an array over stored sites,
    or over the ball's sites in ``env.ball`` order). ``exterior`` gives u on
    every site reachable from the ball, as an array over all ``env.n_total``
    sites (time independent) or a :class:`SpaceTimeField` on the same time grid
    as the solution. Exterior values are held fixed on each grid step at their
    value at the step's start. NaN marks an unprescribed site.

    Returns the solution on the ball's sites over ``[t_lo, t_hi]``.
    """
    _check_tol(tol)
    d = env.d
    region = env.ball(cyl.R, cyl.center_of(d))
    if dt is None:
        dt = cyl.depth / max(1, int(math.ceil(cyl.depth)))
    steps = int(round(cyl.depth / dt))
    if steps < 1 or abs(steps * dt - cyl.depth) > SNAP_TOL * max(1.0, cyl.depth):
        raise ValidationError("dt must divide the cylinder's temporal depth")
    ext = reachable_exterior(env, region)

    first = _exterior_values(exterior, 0, env.n_total)
    if first.shape[0] != env.n_total:
        raise ValidationError("exterior data must cover all environment sites (NaN = unspecified)")
    for k in range(steps if isinstance(exterior, SpaceTimeField) else 1):
        vals = _exterior_values(exterior, k, env.n_total)
        bad = ext[~np.isfinite(vals[ext])]
        if len(bad):
            raise ValidationError(
                "exterior data missing at reachable sites",
                sites=env.coords[bad].tolist()[:20],
            )

    init = np.asarray(initial, dtype=np.float64)
    if init.shape[0] == env.n_sites:
        init = init[region]
    elif init.shape[0] != len(region):
        raise ValidationError("initial data has the wrong length")

    n_in, n_ext = len(region), len(ext)
    W = env.conductance_matrix[region]
    A = W[:, region]
    E = W[:, ext]
    pi = env.pi[region]
    top = sp.hstack([A - sp.diags(pi), E])
    bottom = sp.csr_matrix((n_ext, n_in + n_ext))
    prop = Uniformized(sp.vstack([top, bottom]).tocsr(), rate=float(pi.max()))

    out = np.empty((steps + 1, n_in))
    out[0] = init
    state = np.empty(n_in + n_ext)
    for k in range(steps):
        state[:n_in] = out[k]
        state[n_in:] = _exterior_values(exterior, k, env.n_total)[ext]
        out[k + 1] = prop.advance(state, dt, tol / steps)[:n_in]
    return SpaceTimeField(cyl.t_lo, dt, out, sites=region)


def killed_kernel(env, cyl, start, dt=None, tol=1e-12):
    """Heat kernel from ``start`` at the cylinder's bottom time, killed outside B_R."""
    region = env.ball(cyl.R, cyl.center_of(env.d))
    init = np.zeros(env.n_sites)
    idx = env.site_index(np.asarray(start))
    if idx not in set(region.tolist()):
        raise ValidationError("start site must lie in the cylinder's ball")
    init[idx] = 1.0
    return solve_caloric(env, cyl, init, np.zeros(env.n_total), dt=dt, tol=tol)


# ----------------------------------------------------------------------
@dataclass
class OnDiagReport:
    t_grid: list
    scaled_sup: list
    excluded: list
    ratio: float
    factor: float
    verdict: str
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "t_grid": self.t_grid,
            "scaled_sup": self.scaled_sup,
            "excluded": self.excluded,
            "max_over_min": self.ratio,
            "factor": self.factor,
            "verdict": self.verdict,
            **self.meta,
        }


def ondiag_check(env, t_grid, factor=3.0, x0=None, tol=1e-12):
    """S(t) = t^(d/2) sup_{B_{sqrt(t)/4}} p(t, x0, .) over a grid of times.

    Times whose ball B_{sqrt(t)/4} exceeds the box radius are excluded and
    listed. The verdict is ``bounded`` when max S / min S <= ``factor``.
    """
    t_grid = sorted(float(t) for t in t_grid)
    if any(t <= 0 for t in t_grid):
        raise ValidationError("on-diagonal check needs t > 0")
    center = np.zeros(env.d, dtype=np.int64) if x0 is None else np.asarray(x0, dtype=np.int64)
    kept = [t for t in t_grid if math.sqrt(t) / 4 <= env.radius]
    excluded = [t for t in t_grid if t not in kept]
    fields = evolve_at(env, delta(env, center), kept, tol) if kept else []
    S = []
    for t, p in zip(kept, fields):
        ball = env.ball(math.sqrt(t) / 4, center)
        S.append(float(t ** (env.d / 2) * p[ball].max()))
    ratio = max(S) / min(S) if S else math.nan
    verdict = "bounded" if S and ratio <= factor else ("undefined" if not S else "unbounded")
    return OnDiagReport(kept, S, excluded, ratio, factor, verdict, {"tol": tol, "x0": center.tolist()})
