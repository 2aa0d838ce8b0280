"""Audits of functional inequalities on sampled environments.

Every audit returns an :class:`InequalityReport` with the left-hand side, the
itemized right-hand side and the smallest constant that makes the inequality
hold for the given data ("implied constant"). The constants in the
underlying inequalities are not explicit, so verdicts compare the implied
constant against a caller-supplied ceiling (infinite by default, i.e. the
audit checks finiteness).
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import trapezoid

from .environment.exponents import INF, ExponentSet, check_assumptions
from .environment.moments import lp_average, moment_product, moments, tail_field
from .errors import ValidationError
from .kernel import Cylinder, SpaceTimeField, solve_caloric
from .rng import stream

REL_TOL = 1e-12


# ----------------------------------------------------------------------
# norms
@dataclass(frozen=True)
class NormSpec:
    """Normalized l^p norm in space and, optionally, L^p' in time.

    ``region`` holds environment site indices (``None``: every site the field
    is defined on); ``window`` restricts a space-time field to ``[t_lo, t_hi]``.
    """

    p: float
    p_time: float | None = None
    region: tuple | None = None
    window: tuple | None = None

    def __post_init__(self):
        for v in (self.p, self.p_time):
            if v is not None and not v >= 1:
                raise ValidationError("norm exponents must lie in [1, inf]", p=self.p, p_time=self.p_time)
        if self.region is not None and len(self.region) == 0:
            raise ValidationError("empty region")


def _time_average(vals, times, p):
    """((1/|I|) int_I vals^p dt)^(1/p) by the trapezoid rule; max for p = inf."""
    vals = np.asarray(vals, dtype=np.float64)
    if p == INF:
        return float(vals.max())
    if len(vals) == 1:
        return float(vals[0])
    span = times[-1] - times[0]
    return float((trapezoid(vals**p, times) / span) ** (1.0 / p))


def norm(f, spec):
    """Evaluate ``spec`` on a lattice field (array) or a :class:`SpaceTimeField`."""
    if isinstance(f, SpaceTimeField):
        cols = slice(None) if spec.region is None else f.columns(np.asarray(spec.region))
        idx = np.arange(f.steps + 1) if spec.window is None else f.window(*spec.window)
        vals = f.values[idx][:, cols]
        if vals.size == 0:
            raise ValidationError("empty region")
        spatial = np.array([lp_average(row, spec.p) for row in vals])
        return _time_average(spatial, f.times[idx], INF if spec.p_time is None else spec.p_time)
    f = np.asarray(f, dtype=np.float64)
    if spec.region is not None:
        f = f[np.asarray(spec.region)]
    return lp_average(f, spec.p)


# ----------------------------------------------------------------------
@dataclass
class InequalityReport:
    name: str
    lhs: float
    rhs: dict
    implied_constant: float
    ceiling: float = INF
    meta: dict = field(default_factory=dict)

    @property
    def verdict(self):
        c = self.implied_constant
        if math.isnan(c):
            return "undefined"
        return "pass" if c >= 0 and c <= self.ceiling and math.isfinite(c) else "fail"

    def to_dict(self):
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": dict(self.rhs),
            "implied_constant": self.implied_constant,
            "ceiling": self.ceiling,
            "verdict": self.verdict,
            "meta": self.meta,
        }


def _ratio(num, den):
    """num / den with 0/0 = 0 and positive/0 = inf."""
    if num <= 0:
        return 0.0
    return INF if den <= 0 else num / den


def _check_radius(env, R):
    if R < 1:
        raise ValidationError("R must be >= 1")
    if R > env.radius:
        raise ValidationError(f"R = {R} exceeds the box radius {env.radius}")


def _nn_pairs(env, region):
    """Nearest-neighbour edges with both ends in ``region`` (unordered)."""
    inside = np.zeros(env.n_total, dtype=bool)
    inside[region] = True
    nn = (env.edge_z**2).sum(axis=1) == 1
    keep = nn & inside[env.edge_i] & inside[env.edge_j]
    return env.edge_i[keep], env.edge_j[keep], env.edge_c[keep]


def _nu_on(env, region, nu):
    nu = moments(env).nu if nu is None else np.asarray(nu, dtype=np.float64)
    vals = nu[region]
    if np.any(~np.isfinite(vals)):
        raise ValidationError("nu is infinite on the ball (a nearest-neighbour bond is missing)")
    if np.any(vals <= 0):
        raise ValidationError("nu must be strictly positive on the ball")
    return vals


def _field_on(env, u):
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != env.n_sites:
        raise ValidationError("u must be defined on every stored site")
    return u


def sobolev_audit(env, u, R, exponents, nu=None, ceiling=INF):
    """Sobolev-type inequality on B_R:

        ||u^2||_{rho,B} <= C |B|^(2/d) ||nu||_{q,B} (1/|B|) sum_{x,y in B, |x-y|=1} (u(x)-u(y))^2 C_xy
                           + ||u^2||_{p_*,B}

    with the sum over ordered pairs. The implied constant is
    ``max(lhs - norm_term, 0) / energy_term``.
    """
    e = exponents
    rep = check_assumptions(e)
    if not rep.sobolev:
        raise ValidationError(
            "exponents violate (1 - 1/d)/p + 1/q <= 1/d",
            lhs=(1 - 1 / e.d) / e.p + (0 if e.q == INF else 1 / e.q), rhs=1 / e.d,
        )
    if e.rho == INF:
        raise ValidationError("rho is infinite for these exponents (d - 2 + d/q = 0)")
    _check_radius(env, R)
    u = _field_on(env, u)
    ball = env.ball(R)
    size = len(ball)
    nu_b = _nu_on(env, ball, nu)
    i, j, c = _nn_pairs(env, ball)
    energy = 2.0 * float(np.sum(c * (u[i] - u[j]) ** 2)) / size
    u2 = u[ball] ** 2
    lhs = lp_average(u2, e.rho)
    energy_term = size ** (2.0 / e.d) * lp_average(nu_b, e.q) * energy
    norm_term = lp_average(u2, e.p_star)
    excess = lhs - norm_term
    if excess <= REL_TOL * max(lhs, norm_term):
        excess = 0.0
    return InequalityReport(
        "sobolev",
        lhs,
        {"energy_term": energy_term, "norm_term": norm_term},
        _ratio(excess, energy_term),
        ceiling,
        {"R": R, "ball_size": size, "rho": e.rho, "p_star": e.p_star, "p": e.p, "q": e.q, "d": e.d},
    )


# ----------------------------------------------------------------------
PROFILES = {
    "constant": lambda r, R: np.ones_like(r),
    "linear": lambda r, R: np.clip(1.0 - r / R, 0.0, None),
    "quadratic": lambda r, R: np.clip(1.0 - (r / R) ** 2, 0.0, None),
}


def _profile(phi, R):
    if isinstance(phi, str):
        if phi not in PROFILES:
            raise ValidationError(f"unknown profile {phi!r}", known=sorted(PROFILES))
        base = PROFILES[phi]
        return lambda r: base(np.asarray(r, dtype=np.float64), R)
    return phi


def check_profile(phi, R, samples=4097):
    """Reject profiles that are negative or increase anywhere on [0, R]."""
    r = np.linspace(0.0, R, samples)
    vals = np.asarray(phi(r), dtype=np.float64)
    if np.any(~np.isfinite(vals)) or np.any(vals < 0):
        raise ValidationError("profile must be finite and nonnegative")
    if np.any(np.diff(vals) > 1e-12 * max(1.0, float(np.abs(vals).max()))):
        k = int(np.argmax(np.diff(vals)))
        raise ValidationError("profile must be nonincreasing", at=float(r[k]))


def poincare_audit(env, u, R, phi="linear", nu=None, ceiling=INF):
    """Weighted Poincare inequality with weight eta = phi(|x|) on B_R:

        sum eta^2 |u - mean_eta2 u|^2 <= C |B|^(2/d) ||nu||_{d/2,B} D(u) / |B|,

    D(u) = sum_{x,y in B, |x-y|=1} (u(x)-u(y))^2 max(eta(x)^2, eta(y)^2) C_xy
    (ordered pairs). ``phi`` is a callable of the radius or a profile name.
    """
    _check_radius(env, R)
    phi_fn = _profile(phi, R)
    check_profile(phi_fn, R)
    u = _field_on(env, u)
    ball = env.ball(R)
    size = len(ball)
    nu_b = _nu_on(env, ball, nu)
    eta2 = np.zeros(env.n_total)
    eta2[ball] = np.asarray(phi_fn(env.distance_from(np.zeros(env.d, dtype=np.int64))[ball])) ** 2
    w = eta2[ball]
    if w.sum() <= 0:
        raise ValidationError("weight vanishes on the ball")
    mean = float(np.sum(u[ball] * w) / w.sum())
    lhs = float(np.sum(w * (u[ball] - mean) ** 2))
    i, j, c = _nn_pairs(env, ball)
    D = 2.0 * float(np.sum(c * (u[i] - u[j]) ** 2 * np.maximum(eta2[i], eta2[j])))
    energy_term = size ** (2.0 / env.d) * lp_average(nu_b, env.d / 2.0) * D / size
    if lhs <= REL_TOL * float(np.sum(w * u[ball] ** 2)):
        lhs_eff = 0.0
    else:
        lhs_eff = lhs
    return InequalityReport(
        "poincare",
        lhs,
        {"energy_term": energy_term, "weighted_mean": mean},
        _ratio(lhs_eff, energy_term),
        ceiling,
        {"R": R, "ball_size": size, "profile": phi if isinstance(phi, str) else "callable", "d": env.d},
    )


# ----------------------------------------------------------------------
# weak parabolic Harnack inequality
@dataclass(frozen=True)
class DataSpec:
    """Initial and exterior data for a caloric solve on [-2R^2, 2R^2] x B_R.

    ``initial``: "constant" (``value`` everywhere), "delta" (mass ``value`` at
    ``start``) or "random" (i.i.d. uniform on [0, value] from ``seed``/``trial``).
    Outside B_R the solution is frozen at ``exterior_value`` on sites with
    ``|y| > exterior_min_radius`` and 0 elsewhere; a negative value produces a
    nonzero tail of the negative part.
    """

    initial: str = "delta"
    value: float = 1.0
    start: tuple | None = None
    exterior_value: float = 0.0
    exterior_min_radius: float = 0.0
    seed: int = 0
    trial: int = 0

    def __post_init__(self):
        if self.initial not in ("constant", "delta", "random"):
            raise ValidationError(f"unknown initial data {self.initial!r}")
        if self.value < 0:
            raise ValidationError("initial data must be nonnegative")

    def initial_field(self, env, ball):
        u = np.zeros(env.n_sites)
        if self.initial == "constant":
            u[ball] = self.value
        elif self.initial == "delta":
            start = np.zeros(env.d, dtype=np.int64) if self.start is None else np.asarray(self.start)
            idx = env.site_index(start)
            if idx not in set(ball.tolist()):
                raise ValidationError("delta start must lie in B_R", start=list(map(int, start)))
            u[idx] = self.value
        else:
            gen = stream(self.seed, "trials", self.trial)
            u[ball] = gen.uniform(0.0, self.value, len(ball))
        return u

    def exterior_field(self, env, ball):
        ext = np.zeros(env.n_total)
        if self.exterior_value != 0:
            z = env.displacement(np.zeros(env.d, dtype=np.int64), env.coords)
            far = np.sqrt((z.astype(np.float64) ** 2).sum(axis=1)) > self.exterior_min_radius
            ext[far] = self.exterior_value
        ext[ball] = np.nan  # inside values come from the solve
        return ext

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _check_wphi(env, t0, r, R):
    if not (2 <= r and r < R / 4):
        raise ValidationError("need 2 <= r < R/4", r=r, R=R)
    if not (t0 - 4 * r * r >= -R * R - 1e-12 and t0 + 4 * r * r <= R * R + 1e-12):
        raise ValidationError("need [t0 - 4r^2, t0 + 4r^2] inside [-R^2, R^2]", t0=t0, r=r, R=R)
    _check_radius(env, R)


def _snap(f, lo, hi):
    idx = f.window(lo, hi)
    return idx, {"requested": [lo, hi], "snapped": [float(f.times[idx[0]]), float(f.times[idx[-1]])]}


def wphi_from_field(env, u, exterior, t0, r, R, p, ceiling=INF, meta=None):
    """Audit the weak parabolic Harnack inequality for a solved field.

    ``u`` is a :class:`SpaceTimeField` on the sites of B_R covering
    [t0 - 4r^2, t0 + 4r^2]; ``exterior`` holds the (time-independent) values
    outside B_R used in the tail of the negative part.
    """
    _check_wphi(env, t0, r, R)
    if np.any(u.values < 0):
        k, j = np.unravel_index(int(np.argmin(u.values)), u.values.shape)
        raise ValidationError(
            "u is negative on the solved cylinder",
            time=float(u.times[k]), site=env.coords[u.sites[j]].tolist(), value=float(u.values[k, j]),
        )
    small = env.ball(r)
    cols_r = u.columns(small)
    idx_m, snap_m = _snap(u, t0 - 2 * r * r, t0 - r * r)
    idx_p, snap_p = _snap(u, t0 + r * r, t0 + 2 * r * r)
    idx_t, snap_t = _snap(u, t0 - 4 * r * r, t0 + 4 * r * r)

    sums = u.values[idx_m][:, cols_r].sum(axis=1)
    times = u.times[idx_m]
    integral = float(trapezoid(sums, times)) if len(idx_m) > 1 else float(sums[0]) * r * r
    lhs = integral / (r * r * len(small))
    inf_plus = float(u.values[idx_p][:, cols_r].min())

    ext = np.nan_to_num(np.asarray(exterior, dtype=np.float64), nan=0.0)
    neg_ext = np.maximum(-ext, 0.0)
    two_r = env.ball(2 * r)
    sup_tail = 0.0
    if np.any(neg_ext > 0):
        for k in idx_t:
            full = neg_ext.copy()
            full[u.sites] = np.maximum(-u.values[k], 0.0)
            tf = tail_field(env, full, R)
            sup_tail = max(sup_tail, lp_average(tf[two_r], p))
    tail_term = (r / R) ** 2 * sup_tail
    denom = inf_plus + tail_term
    return InequalityReport(
        "wphi",
        lhs,
        {"inf_u_plus": inf_plus, "tail_term": tail_term, "sup_tail_norm": sup_tail},
        _ratio(lhs, denom) if lhs > 0 else 0.0,
        ceiling,
        {
            "t0": t0, "r": r, "R": R, "p": p, "dt": u.dt,
            "windows": {"U-": snap_m, "U+": snap_p, "tail": snap_t},
            **(meta or {}),
        },
    )


def wphi_report(env, t0, r, R, data_spec, exponents, dt=None, tol=1e-12, ceiling=INF):
    """Solve on [-2R^2, 2R^2] x B_R from ``data_spec`` and audit the inequality.

    The default time step is r^2/16, so every window edge lies on the grid
    when ``t0`` is a multiple of it.
    """
    _check_wphi(env, t0, r, R)
    if dt is None:
        dt = r * r / 16.0
    cyl = Cylinder(-2.0 * R * R, 2.0 * R * R, R)
    ball = env.ball(R)
    init = data_spec.initial_field(env, ball)
    ext = data_spec.exterior_field(env, ball)
    u = solve_caloric(env, cyl, init, ext, dt=dt, tol=tol)
    return wphi_from_field(
        env, u, ext, t0, r, R, exponents.p, ceiling,
        meta={"data_spec": data_spec.to_dict(), "tol": tol, "M0_p": exponents.p, "M0_q": exponents.q},
    )


# ----------------------------------------------------------------------
# maximal inequality
def maximal_report(env, u, n, m, theta, theta_p, exponents, kappa1=1.0, outside_sup=None, ceiling=INF):
    """Maximal inequality for a caloric field ``u`` on a window ending at time 0:

        max_{Q_{theta' n^2, theta' n}} |u| <= C ( n^-(m-2) ||u||_{inf,inf,[-n^2,0] x box}
                                               + (M_n / (theta - theta')^(m+3))^kappa1 ||u||_{1,1,Q_{theta n^2, theta n}} )

    with Q_{s,R} = [-s, 0] x B_R and M_n the product of moment norms on
    B_{theta n}. The sup over the lattice is taken over the field's sites
    together with ``outside_sup`` (the largest |u| prescribed outside them);
    without it the report flags the truncation.
    """
    if not (0.5 <= theta_p < theta < 1):
        raise ValidationError("need 1/2 <= theta' < theta < 1", theta=theta, theta_p=theta_p)
    if n < 1 or m < 2:
        raise ValidationError("need n >= 1 and m >= 2")
    e = exponents
    if theta * n > env.radius:
        raise ValidationError("theta n exceeds the box radius")
    ball_p = env.ball(theta_p * n)
    ball_t = env.ball(theta * n)
    idx_lhs, snap_lhs = _snap(u, -theta_p * n * n, 0.0)
    idx_sup, snap_sup = _snap(u, -float(n * n), 0.0)
    idx_avg, snap_avg = _snap(u, -theta * n * n, 0.0)

    lhs = float(np.abs(u.values[idx_lhs][:, u.columns(ball_p)]).max())
    sup_all = float(np.abs(u.values[idx_sup]).max())
    truncated = outside_sup is None
    if not truncated:
        sup_all = max(sup_all, float(outside_sup))
    l1 = norm(u, NormSpec(1.0, 1.0, tuple(ball_t.tolist()), (-theta * n * n, 0.0)))

    prof = moments(env, m_list=(m,))
    Mn = moment_product(env, prof, e.p, e.q, m, theta * n)
    first = n ** (-(m - 2.0)) * sup_all
    weight = (Mn / (theta - theta_p) ** (m + 3)) ** kappa1
    second = weight * l1
    return InequalityReport(
        "maximal",
        lhs,
        {"sup_term": first, "average_term": second, "M_n": Mn, "l11_norm": l1, "sup_norm": sup_all},
        _ratio(lhs, first + second),
        ceiling,
        {
            "n": n, "m": m, "theta": theta, "theta_prime": theta_p, "kappa1": kappa1,
            "p": e.p, "q": e.q, "sup_truncated_to_box": truncated,
            "windows": {"lhs": snap_lhs, "sup": snap_sup, "average": snap_avg},
        },
    )


# ----------------------------------------------------------------------
# Hoelder oscillation decay
@dataclass
class HolderReport:
    R: float
    base: float
    radii: list
    osc: list
    beta_hat: float | None
    verdict: str
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "R": self.R, "base": self.base, "radii": self.radii, "osc": self.osc,
            "beta_hat": self.beta_hat, "beta_defined": self.beta_hat is not None,
            "verdict": self.verdict, **self.meta,
        }


def holder_report(env, u, R, shrink_base=6.0):
    """Oscillation of ``u`` over Q(rho) = [-rho^2/2, rho^2/2] x B_rho, rho = R base^-k.

    Levels run while ``rho > 2``. The decay exponent is fitted by least squares
    on log osc_k against k (undefined when fewer than two levels have positive
    oscillation).
    """
    if not shrink_base > 1:
        raise ValidationError("shrink base must exceed 1")
    _check_radius(env, R)
    if np.any(u.values < 0):
        raise ValidationError("u must be nonnegative")
    radii, osc, snaps = [], [], []
    rho = float(R)
    while rho > 2:
        idx, snap = _snap(u, -rho * rho / 2, rho * rho / 2)
        vals = u.values[idx][:, u.columns(env.ball(rho))]
        radii.append(rho)
        snaps.append(snap)
        osc.append(float(vals.max() - vals.min()))
        rho /= shrink_base
    ks = np.arange(len(osc))
    pos = np.array(osc) > 0
    beta = None
    if pos.sum() >= 2:
        slope = np.polyfit(ks[pos], np.log(np.array(osc)[pos]), 1)[0]
        beta = float(-slope / math.log(shrink_base))
    mono = all(b <= a for a, b in zip(osc, osc[1:]))
    return HolderReport(float(R), float(shrink_base), radii, osc, beta,
                        "nonincreasing" if mono else "increasing", {"dt": u.dt, "windows": snaps})


def caloric_from_delta(env, R, start=None, dt=None, tol=1e-12):
    """Killed heat kernel on [-2R^2, 2R^2] x B_R started at the bottom time."""
    spec = DataSpec("delta", 1.0, None if start is None else tuple(start))
    cyl = Cylinder(-2.0 * R * R, 2.0 * R * R, R)
    ball = env.ball(R)
    return solve_caloric(env, cyl, spec.initial_field(env, ball), spec.exterior_field(env, ball),
                         dt=dt if dt is not None else max(0.5, R * R / 256.0), tol=tol)


def exponents_for(env, p, q, m=None):
    return ExponentSet(env.d, p, q, m, env.meta.get("s"))


def random_field(env, R, kind, gen):
    """Random test field on the stored sites.

    ``"iid"``: independent standard normals. ``"smooth"``: a random constant
    plus four plane waves with wave numbers up to 3 pi / R, which gives fields
    with small Dirichlet energy relative to their size.
    """
    if kind == "iid":
        return gen.standard_normal(env.n_sites)
    if kind != "smooth":
        raise ValidationError(f"unknown field kind {kind!r}")
    x = env.coords[: env.n_sites].astype(np.float64)
    u = np.full(env.n_sites, gen.normal())
    for _ in range(4):
        k = gen.uniform(-3.0, 3.0, env.d) * math.pi / R
        u += gen.normal() * np.cos(x @ k + gen.uniform(0.0, 2 * math.pi))
    return u
