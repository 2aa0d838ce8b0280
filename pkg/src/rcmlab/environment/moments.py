"""Per-site moment functionals and the tail operator."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .exponents import INF


def lp_average(f, p):
    """Normalized l^p average (1/|A| sum |f|^p)^(1/p); max for p = inf."""
    f = np.abs(np.asarray(f, dtype=np.float64))
    if f.size == 0:
        raise ValidationError("empty region")
    if p == INF:
        return float(f.max())
    if np.any(np.isinf(f)):
        return INF
    top = f.max()
    if top == 0:
        return 0.0
    # scale by the max so tiny or huge entries neither underflow nor overflow
    return float(top * np.mean((f / top) ** p) ** (1.0 / p))


@dataclass
class MomentProfile:
    """Per-site moments on the stored sites of an environment."""

    mu: np.ndarray
    nu: np.ndarray
    mu_m: dict
    mu_star: np.ndarray | None
    nu_missing: np.ndarray
    norms: dict = field(default_factory=dict)

    def summary(self):
        return {
            "mu_max": float(self.mu.max()),
            "nu_max": float(self.nu.max()),
            "sites_missing_nn_bond": int(self.nu_missing.sum()),
            **self.norms,
        }


def _nn_mask(z):
    return (z**2).sum(axis=1) == 1


def moments(env, m_list=(), p=None, q=None):
    """Moment functionals per stored site.

    ``mu(x) = sum_z |z|^2 C_{x,x+z}``, ``nu(x) = sum_{|z|=1} 1/C_{x,x+z}``
    (infinite when a unit bond is missing), ``mu_m`` for each ``m`` in
    ``m_list`` and, if ``p`` is given, ``mu_*(x) = sum_z |z|^gamma C^(2p/(p+1))``
    with ``gamma = (d(p-1)+4p)/(p+1)``.

    With ``p`` and ``q`` the box norms of mu and nu are reported along with
    ``M0 = max_k ||max(mu,1)||_{p,B_k} ||max(nu,1)||_{q,B_k}`` over balls
    ``B_k``, ``k = 1..radius`` around the origin.
    """
    _, _, z, c = env.adjacency
    rows = env.rows
    n = env.n_sites
    z2 = (z.astype(np.float64) ** 2).sum(axis=1)
    norm = np.sqrt(z2)

    mu = np.bincount(rows, weights=z2 * c, minlength=n)
    nn = _nn_mask(z)
    nn_count = np.bincount(rows[nn], minlength=n)
    nu = np.bincount(rows[nn], weights=1.0 / c[nn], minlength=n)
    missing = nn_count < 2 * env.d
    nu[missing] = np.inf

    mu_m = {}
    for m in m_list:
        mu_m[float(m)] = np.bincount(rows, weights=norm**m * c, minlength=n)

    mu_star = None
    if p is not None:
        if not p > 1:
            raise ValidationError("mu_* needs p > 1")
        if p == INF:
            gamma, power = env.d + 4.0, 2.0
        else:
            gamma = (env.d * (p - 1) + 4 * p) / (1 + p)
            power = 2 * p / (p + 1)
        mu_star = np.bincount(rows, weights=norm**gamma * c**power, minlength=n)

    prof = MomentProfile(mu=mu, nu=nu, mu_m=mu_m, mu_star=mu_star, nu_missing=missing)
    if p is not None and q is not None:
        prof.norms = {
            "mu_p_norm": lp_average(mu, p),
            "nu_q_norm": lp_average(nu, q),
            "M0": moment_aggregate(env, mu, nu, p, q),
        }
    return prof


def moment_aggregate(env, mu, nu, p, q, radii=None):
    """max over k of ||max(mu,1)||_{p,B_k} * ||max(nu,1)||_{q,B_k}."""
    if radii is None:
        radii = range(1, env.radius + 1)
    dist = env.distance_from(np.zeros(env.d, dtype=np.int64))
    best = 0.0
    for k in radii:
        ball = dist <= k + 1e-12
        val = lp_average(np.maximum(mu[ball], 1.0), p) * lp_average(np.maximum(nu[ball], 1.0), q)
        best = max(best, val)
    return best


def moment_product(env, prof, p, q, m, radius):
    """M_n = ||max(mu,1)||_p ||max(mu_m,1)||_p ||max(nu,1)||_q on B_radius."""
    ball = env.ball(radius)
    return (
        lp_average(np.maximum(prof.mu[ball], 1.0), p)
        * lp_average(np.maximum(prof.mu_m[float(m)][ball], 1.0), p)
        * lp_average(np.maximum(prof.nu[ball], 1.0), q)
    )


def tail_field(env, u, R, outer=None):
    """Tail(u, R)(x) = R^2 sum_{|y-x| > R} u(y) C_{x,y} for every stored x.

    ``u`` holds values on stored sites. Outer sites (box mode) take the values
    in ``outer`` when given and contribute zero otherwise.
    """
    if R < 1:
        raise ValidationError("R must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] == env.n_total:
        full = u
    else:
        if u.shape[0] != env.n_sites:
            raise ValidationError("u must be defined on every stored site")
        full = np.zeros(env.n_total)
        full[: env.n_sites] = u
        if outer is not None:
            full[env.n_sites :] = outer
    _, nbr, z, c = env.adjacency
    far = (z.astype(np.float64) ** 2).sum(axis=1) > R * R * (1 + 1e-12)
    w = np.where(far, full[nbr] * c, 0.0)
    return R * R * np.bincount(env.rows, weights=w, minlength=env.n_sites)


def tail(env, u, R, x):
    """Tail(u, R) at the site with coordinates ``x``."""
    idx = env.site_index(np.asarray(x, dtype=np.int64))
    if idx < 0 or idx >= env.n_sites:
        raise ValidationError("x is not a stored site")
    if R < 1:
        raise ValidationError("R must be >= 1")
    indptr, nbr, z, c = env.adjacency
    a, b = indptr[idx], indptr[idx + 1]
    u = np.asarray(u, dtype=np.float64)
    vals = np.zeros(b - a)
    inside = nbr[a:b] < u.shape[0]
    vals[inside] = u[nbr[a:b][inside]]
    far = (z[a:b].astype(np.float64) ** 2).sum(axis=1) > R * R * (1 + 1e-12)
    return float(R * R * np.sum(vals[far] * c[a:b][far]))


def truncated_tail_note(env):
    if env.boundary == "box":
        return "edges leaving the box contribute zero unless exterior values are supplied"
    return None

