"""Samplers for the two conductance families.

Long-range percolation opens the edge {x, y} with probability
``min(1, |x-y|^-(d+s))``. The polynomial family sets
``C = xi / |x-y|^(d+s)`` with i.i.d. ``xi`` on long bonds and ``xi = 1`` on
nearest-neighbour bonds.

Randomness is keyed per offset shell: the edge ``{x, x+z}`` with ``z`` in the
positive half-space draws entry ``x`` of the stream ``(seed, z)``. Shells are
independent, so they may be generated in any order or in parallel.
"""

from concurrent.futures import ThreadPoolExecutor
import math

import numpy as np
from scipy import stats
from scipy.special import gamma as gamma_fn

from ..errors import ValidationError
from ..rng import stream
from .model import Environment, lattice_lo, max_offset_component

DROP_THRESHOLD = 1e-14


def half_space_offsets(d, ell_max, max_component=None):
    """Nonzero offsets z with |z| <= ell_max whose first nonzero entry is positive.

    Sorted by |z|^2 then lexicographically.
    """
    r = int(math.floor(ell_max + 1e-12))
    if max_component is not None:
        r = min(r, max_component)
    if r < 1:
        return np.zeros((0, d), dtype=np.int64)
    grid = np.indices((2 * r + 1,) * d).reshape(d, -1).T - r
    norm2 = (grid**2).sum(axis=1)
    keep = (norm2 > 0) & (norm2 <= ell_max**2 + 1e-9)
    nz = grid != 0
    first = np.argmax(nz, axis=1)
    keep &= grid[np.arange(len(grid)), first] > 0
    grid, norm2 = grid[keep], norm2[keep]
    order = np.lexsort(tuple(grid.T[::-1]) + (norm2,))
    return grid[order].astype(np.int64)


def _anchor_grid(d, L, boundary, side, ell_max):
    """Lattice points that may anchor an edge, in a fixed C-order layout."""
    lo = lattice_lo(L, boundary, side)
    if boundary == "torus":
        width, start = side, lo
    else:
        pad = int(math.ceil(ell_max))
        width, start = side + 2 * pad, lo - pad
    return np.indices((width,) * d).reshape(d, -1).T + start


def _anchors_for(z, grid, L, boundary, side):
    if boundary == "torus":
        return np.ones(len(grid), dtype=bool)
    lo = lattice_lo(L, boundary, side)
    hi = lo + side
    in_x = np.all((grid >= lo) & (grid < hi), axis=1)
    y = grid + z
    in_y = np.all((y >= lo) & (y < hi), axis=1)
    return in_x | in_y


def _check_common(d, L, boundary, ell_max, side):
    if boundary not in ("box", "torus"):
        raise ValidationError(f"unknown boundary {boundary!r}")
    if d < 1:
        raise ValidationError("d must be >= 1")
    if L < 2 and side is None:
        raise ValidationError("L must be >= 2")
    if side is None:
        side = 2 * L + 1 if boundary == "box" else 2 * L
    if ell_max is None:
        ell_max = float(min(2 * L, max(1, (side - 1) // 2))) if boundary == "torus" else float(2 * L)
    if ell_max < 1:
        raise ValidationError("ell_max must be >= 1 (nearest-neighbour bonds are required)")
    if boundary == "torus" and ell_max > 2 * L:
        raise ValidationError("ell_max > 2L on the torus: an edge would wrap onto itself")
    return side, float(ell_max)


def _run_shells(offsets, work, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, offsets))
    else:
        parts = [work(z) for z in offsets]
    xs = [p[0] for p in parts]
    cs = [p[1] for p in parts]
    zs = [np.broadcast_to(z, (len(p[0]), len(z))) for z, p in zip(offsets, parts)]
    d = offsets.shape[1]
    if not xs:
        return np.zeros((0, d), dtype=np.int64), np.zeros((0, d), dtype=np.int64), np.zeros(0)
    return np.concatenate(xs), np.concatenate(zs), np.concatenate(cs)


def dropped_second_moment(d, s, ell_max, included, mean_xi=1.0, percolation=True):
    """Expected sum of |z|^2 C_{0,z} over offsets not generated.

    ``included`` are the generated half-space offsets. Offsets up to
    ``8 * ell_max`` are summed exactly, the rest by the radial integral.
    """
    R = max(8.0 * ell_max, 16.0)
    r = int(math.floor(R))
    grid = np.indices((2 * r + 1,) * d).reshape(d, -1).T - r
    n2 = (grid**2).sum(axis=1).astype(np.float64)
    grid, n2 = grid[(n2 > 0) & (n2 <= R * R)], n2[(n2 > 0) & (n2 <= R * R)]
    norm = np.sqrt(n2)
    if percolation:
        w = np.minimum(1.0, norm ** (-(d + s)))
    else:
        w = np.where(norm == 1.0, 1.0, mean_xi * norm ** (-(d + s)))
    inc = {tuple(z) for z in included} | {tuple(-z) for z in included}
    missing = np.array([tuple(z) not in inc for z in grid])
    total = float((n2 * w)[missing].sum())
    area = 2 * math.pi ** (d / 2) / gamma_fn(d / 2)
    total += mean_xi * area * R ** (2 - s) / (s - 2) if s > 2 else math.inf
    return total


def gen_long_range_percolation(d, s, L, boundary="torus", ell_max=None, seed=0, *, side=None, threads=1):
    """Long-range percolation: edges open independently with prob min(1, |z|^-(d+s))."""
    if not s > 0:
        raise ValidationError("s must be positive")
    side, ell_max = _check_common(d, L, boundary, ell_max, side)
    offsets = half_space_offsets(d, ell_max, max_offset_component(boundary, side))
    grid = _anchor_grid(d, L, boundary, side, ell_max)

    def work(z):
        norm = math.sqrt(float((z**2).sum()))
        prob = min(1.0, norm ** (-(d + s)))
        anchors = _anchors_for(z, grid, L, boundary, side)
        u = stream(seed, "edges", *z).random(len(grid))
        open_ = anchors & (u < prob)
        return grid[open_], np.ones(int(open_.sum()))

    x, z, c = _run_shells(offsets, work, threads)
    meta = {
        "model": "lrp",
        "s": float(s),
        "xi_spec": None,
        "seed": int(seed),
        "dropped_second_moment": dropped_second_moment(d, s, ell_max, offsets) if s > 2 else None,
    }
    return Environment.from_edges(d, L, boundary, x, z, c, side=side, ell_max=ell_max, meta=meta)


class _PointMass:
    def __init__(self, value):
        self.value = value

    def rvs(self, size, random_state=None):
        return np.full(size, self.value)

    def mean(self):
        return self.value

    def support(self):
        return self.value, self.value


def xi_distribution(xi_spec):
    """Frozen scipy distribution for ``xi_spec``.

    ``xi_spec`` is ``{"name": <scipy.stats name>, "params": {...}}`` or
    ``{"name": "constant", "value": v}``. An optional ``"moment"`` entry
    records the integrability exponent the caller vouches for.
    """
    if not isinstance(xi_spec, dict) or "name" not in xi_spec:
        raise ValidationError("xi_spec must be a mapping with a 'name' entry")
    name = xi_spec["name"]
    if name == "constant":
        v = float(xi_spec.get("value", 1.0))
        if v < 0:
            raise ValidationError("xi must be nonnegative")
        return _PointMass(v)
    try:
        family = getattr(stats, name)
    except AttributeError:
        raise ValidationError(f"unknown distribution {name!r}") from None
    dist = family(**xi_spec.get("params", {}))
    if dist.support()[0] < 0:
        raise ValidationError(f"xi distribution {name!r} admits negative values")
    return dist


def gen_polynomial_conductance(d, s, xi_spec, L, boundary="torus", ell_max=None, seed=0, *, side=None, threads=1):
    """Polynomial conductances C = xi / |z|^(d+s), xi = 1 on unit bonds."""
    if not s > 2:
        raise ValidationError("s must exceed 2")
    dist = xi_distribution(xi_spec)
    side, ell_max = _check_common(d, L, boundary, ell_max, side)
    offsets = half_space_offsets(d, ell_max, max_offset_component(boundary, side))
    grid = _anchor_grid(d, L, boundary, side, ell_max)

    def work(z):
        n2 = int((z**2).sum())
        anchors = _anchors_for(z, grid, L, boundary, side)
        if n2 == 1:
            return grid[anchors], np.ones(int(anchors.sum()))
        xi = np.asarray(dist.rvs(size=len(grid), random_state=stream(seed, "xi", *z)), dtype=np.float64)
        c = xi * float(n2) ** (-(d + s) / 2.0)
        keep = anchors & (c > DROP_THRESHOLD)
        return grid[keep], c[keep]

    x, z, c = _run_shells(offsets, work, threads)
    meta = {
        "model": "poly",
        "s": float(s),
        "xi_spec": xi_spec,
        "seed": int(seed),
        "dropped_second_moment": dropped_second_moment(d, s, ell_max, offsets, mean_xi=float(dist.mean()), percolation=False),
    }
    return Environment.from_edges(d, L, boundary, x, z, c, side=side, ell_max=ell_max, meta=meta)


def constant_environment(d, L, boundary="torus", *, side=None, weights=None):
    """Translation-invariant conductances ``C_{x,x+z} = weights[z]``.

    ``weights`` maps half-space offsets (tuples) to conductances and defaults
    to unit nearest-neighbour bonds.
    """
    if side is None:
        side = 2 * L + 1 if boundary == "box" else 2 * L
    if weights is None:
        weights = {tuple(int(i == k) for i in range(d)): 1.0 for k in range(d)}
    pad = max(int(math.ceil(math.sqrt(sum(v * v for v in z)))) for z in weights)
    grid = _anchor_grid(d, L, boundary, side, pad)
    xs, zs, cs = [], [], []
    for z, w in weights.items():
        z = np.asarray(z, dtype=np.int64)
        anchors = _anchors_for(z, grid, L, boundary, side)
        xs.append(grid[anchors])
        zs.append(np.broadcast_to(z, (int(anchors.sum()), d)))
        cs.append(np.full(int(anchors.sum()), float(w)))
    ell = max(math.sqrt(sum(v * v for v in z)) for z in weights)
    meta = {"model": "constant", "s": None, "xi_spec": None, "seed": None,
            "weights": {",".join(map(str, k)): float(v) for k, v in weights.items()}}
    return Environment.from_edges(d, L, boundary, np.concatenate(xs), np.concatenate(zs), np.concatenate(cs),
                                  side=side, ell_max=ell, meta=meta)
