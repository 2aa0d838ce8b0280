"""The conductance field on a finite box or torus."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError

BOUNDARIES = ("box", "torus")


def lattice_lo(L, boundary, side):
    return -L if boundary == "box" else -(side // 2)


def max_offset_component(boundary, side):
    """Largest |z_i| whose minimal image on the torus is unambiguous."""
    if boundary == "box":
        return None
    return (side - 1) // 2


@dataclass(frozen=True, eq=False)
class Environment:
    """Symmetric nonnegative conductances on a finite window of Z^d.

    Sites ``0..n_sites-1`` are the stored lattice points: the box
    ``{-L..L}^d`` or the torus ``{lo..lo+side-1}^d`` in C order. In box mode
    the edges from stored sites to the lattice outside the box are kept too,
    and their far endpoints are appended as *outer* sites
    ``n_sites..n_total-1``. The walk and the heat kernel are killed there.

    Each unordered edge is stored once as ``(edge_i, edge_j)`` with the
    displacement ``edge_z`` from ``i`` to ``j`` (the minimal image on the
    torus) and conductance ``edge_c > 0``.
    """

    d: int
    L: int
    boundary: str
    side: int
    ell_max: float
    coords: np.ndarray
    n_sites: int
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_z: np.ndarray
    edge_c: np.ndarray
    meta: dict = field(default_factory=dict)

    # ------------------------------------------------------------------
    # construction
    @classmethod
    def from_edges(cls, d, L, boundary, x, z, c, *, side=None, ell_max=None, meta=None):
        """Build an environment from edges given as start points and offsets.

        ``x`` (E, d) are lattice points, ``z`` (E, d) integer displacements and
        ``c`` (E,) conductances. Each unordered pair must appear once. Zero
        conductances are dropped.
        """
        if boundary not in BOUNDARIES:
            raise ValidationError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
        d = int(d)
        L = int(L)
        if d < 1:
            raise ValidationError("d must be >= 1")
        if side is None:
            side = 2 * L + 1 if boundary == "box" else 2 * L
        side = int(side)
        if boundary == "box" and side != 2 * L + 1:
            raise ValidationError("box mode has side 2L+1")
        if side < 3:
            raise ValidationError("need at least 3 sites per axis")
        x = np.asarray(x, dtype=np.int64).reshape(-1, d)
        z = np.asarray(z, dtype=np.int64).reshape(-1, d)
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        if not (len(x) == len(z) == len(c)):
            raise ValidationError("edge arrays differ in length")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValidationError("conductances must be finite and nonnegative")
        if np.any(np.all(z == 0, axis=1)):
            raise ValidationError("self-loops are not allowed")
        keep = c > 0
        x, z, c = x[keep], z[keep], c[keep]
        if ell_max is not None and len(z) and np.sqrt((z**2).sum(1)).max() > ell_max + 1e-9:
            raise ValidationError("edge longer than the declared jump cutoff ell_max")

        lo = lattice_lo(L, boundary, side)
        shape = (side,) * d
        grid = np.indices(shape).reshape(d, -1).T + lo
        n_sites = grid.shape[0]

        if boundary == "torus":
            comp = max_offset_component(boundary, side)
            if np.any(np.abs(z) > comp):
                raise ValidationError(
                    "torus edge displacement exceeds the unambiguous minimal image",
                    limit=comp,
                )
            x = (x - lo) % side + lo
            y = (x + z - lo) % side + lo
        else:
            y = x + z

        inside_x = np.all((x >= lo) & (x < lo + side), axis=1)
        inside_y = np.all((y >= lo) & (y < lo + side), axis=1)
        if not np.all(inside_x | inside_y):
            raise ValidationError("every edge needs at least one endpoint in the box")

        # canonical orientation: x < y lexicographically
        swap = _lex_less(y, x)
        x, y = np.where(swap[:, None], y, x), np.where(swap[:, None], x, y)
        z = np.where(swap[:, None], -z, z)
        inside_x, inside_y = np.where(swap, inside_y, inside_x), np.where(swap, inside_x, inside_y)

        outer = np.concatenate([x[~inside_x], y[~inside_y]])
        if len(outer):
            outer = np.unique(outer, axis=0)
            outer = outer[np.lexsort(tuple(outer.T[::-1]))]
        else:
            outer = np.zeros((0, d), dtype=np.int64)
        coords = np.concatenate([grid, outer]).astype(np.int64)

        env = cls(
            d=d,
            L=L,
            boundary=boundary,
            side=side,
            ell_max=float(ell_max) if ell_max is not None else float(np.sqrt((z**2).sum(1)).max(initial=1.0)),
            coords=coords,
            n_sites=n_sites,
            edge_i=np.zeros(0, dtype=np.int64),
            edge_j=np.zeros(0, dtype=np.int64),
            edge_z=z,
            edge_c=c,
            meta=dict(meta or {}),
        )
        i = env.site_index(x)
        j = env.site_index(y)
        order = np.lexsort(tuple(y.T[::-1]) + tuple(x.T[::-1]))
        i, j, z, c = i[order], j[order], z[order], c[order]
        pairs = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)
        if len(pairs) and len(np.unique(pairs, axis=0)) != len(pairs):
            raise ValidationError("duplicate unordered edge")
        object.__setattr__(env, "edge_i", i)
        object.__setattr__(env, "edge_j", j)
        object.__setattr__(env, "edge_z", z)
        object.__setattr__(env, "edge_c", c)
        env.validate()
        return env

    def validate(self):
        pi = self.pi
        if np.any(pi <= 0):
            bad = self.coords[np.flatnonzero(pi <= 0)[:10]]
            raise ValidationError("isolated sites (pi_x = 0)", sites=bad.tolist())

    # ------------------------------------------------------------------
    # geometry
    @property
    def lo(self):
        return lattice_lo(self.L, self.boundary, self.side)

    @property
    def n_total(self):
        return self.coords.shape[0]

    @property
    def n_edges(self):
        return self.edge_c.shape[0]

    @property
    def shape(self):
        return (self.side,) * self.d

    @property
    def origin(self):
        return int(self.site_index(np.zeros(self.d, dtype=np.int64)))

    @property
    def radius(self):
        """Largest R such that the ball B_R(0) does not wrap or leave the box."""
        return self.L if self.boundary == "box" else (self.side - 1) // 2

    def site_index(self, pts):
        """Index of lattice points (wrapped on the torus); -1 if not stored."""
        pts = np.asarray(pts, dtype=np.int64)
        single = pts.ndim == 1
        pts = pts.reshape(-1, self.d)
        lo, side = self.lo, self.side
        if self.boundary == "torus":
            pts = (pts - lo) % side + lo
        inside = np.all((pts >= lo) & (pts < lo + side), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        if np.any(inside):
            out[inside] = np.ravel_multi_index(tuple((pts[inside] - lo).T), self.shape)
        if np.any(~inside) and self.n_total > self.n_sites:
            keys = self._outer_keys
            q = self._extended_keys(pts[~inside])
            pos = np.searchsorted(keys, q)
            pos = np.clip(pos, 0, len(keys) - 1)
            hit = (keys[pos] == q) & (q >= 0)
            out[np.flatnonzero(~inside)[hit]] = self.n_sites + pos[hit]
        return int(out[0]) if single else out

    def _extended_keys(self, pts):
        pad = int(np.ceil(self.ell_max)) + 1
        ext = self.side + 2 * pad
        shifted = pts - (self.lo - pad)
        ok = np.all((shifted >= 0) & (shifted < ext), axis=1)
        keys = np.full(len(pts), -1, dtype=np.int64)
        if np.any(ok):
            keys[ok] = np.ravel_multi_index(tuple(shifted[ok].T), (ext,) * self.d)
        return keys

    @cached_property
    def _outer_keys(self):
        return self._extended_keys(self.coords[self.n_sites:])

    def displacement(self, x, y):
        """Displacement y - x, reduced to the minimal image on the torus."""
        z = np.asarray(y, dtype=np.int64) - np.asarray(x, dtype=np.int64)
        if self.boundary == "torus":
            h = self.side // 2
            z = (z + h) % self.side - h
        return z

    def distance_from(self, center):
        """Euclidean (minimal-image) distance from ``center`` to every stored site."""
        z = self.displacement(np.asarray(center, dtype=np.int64), self.coords[: self.n_sites])
        return np.sqrt((z.astype(np.float64) ** 2).sum(axis=1))

    def ball(self, R, center=None):
        """Indices of stored sites in B_R(center) = {y : |y - center| <= R}."""
        if center is None:
            center = np.zeros(self.d, dtype=np.int64)
        return np.flatnonzero(self.distance_from(center) <= R + 1e-12)

    # ------------------------------------------------------------------
    # derived operators
    @cached_property
    def edge_length(self):
        return np.sqrt((self.edge_z.astype(np.float64) ** 2).sum(axis=1))

    @cached_property
    def adjacency(self):
        """Per-site incidence lists over stored sites (CSR layout).

        Returns ``(indptr, nbr, z, c)``: for site ``x`` the entries
        ``indptr[x]:indptr[x+1]`` list its neighbours, displacement to them
        and conductance. Neighbours may be outer sites.
        """
        src = np.concatenate([self.edge_i, self.edge_j])
        dst = np.concatenate([self.edge_j, self.edge_i])
        z = np.concatenate([self.edge_z, -self.edge_z])
        c = np.concatenate([self.edge_c, self.edge_c])
        keep = src < self.n_sites
        src, dst, z, c = src[keep], dst[keep], z[keep], c[keep]
        order = np.lexsort((dst, src))
        src, dst, z, c = src[order], dst[order], z[order], c[order]
        indptr = np.zeros(self.n_sites + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=self.n_sites), out=indptr[1:])
        for arr in (indptr, dst, z, c):
            arr.setflags(write=False)
        return indptr, dst, z, c

    @cached_property
    def rows(self):
        """Row index of every adjacency entry."""
        indptr = self.adjacency[0]
        return np.repeat(np.arange(self.n_sites), np.diff(indptr))

    @cached_property
    def pi(self):
        """pi_x = sum_y C_{x,y} for stored sites (outer edges included)."""
        c = self.adjacency[3]
        return np.bincount(self.rows, weights=c, minlength=self.n_sites)

    @cached_property
    def conductance_matrix(self):
        """Sparse (n_sites, n_total) matrix of C_{x,y}."""
        indptr, nbr, _, c = self.adjacency
        return sp.csr_matrix((c, nbr, indptr), shape=(self.n_sites, self.n_total))

    @cached_property
    def inner_matrix(self):
        return self.conductance_matrix[:, : self.n_sites].tocsr()

    @cached_property
    def outer_matrix(self):
        return self.conductance_matrix[:, self.n_sites :].tocsr()

    def generator_matrix(self):
        """L restricted to stored sites; exits from the box are killed."""
        return (self.inner_matrix - sp.diags(self.pi)).tocsr()

    @cached_property
    def alias_tables(self):
        """Walker alias tables aligned with :attr:`adjacency`.

        Returns ``(prob, alias)`` where ``alias`` holds positions local to the
        owning row.
        """
        indptr, _, _, c = self.adjacency
        prob = np.empty(len(c))
        alias = np.zeros(len(c), dtype=np.int64)
        for x in range(self.n_sites):
            a, b = indptr[x], indptr[x + 1]
            k = b - a
            scaled = c[a:b] * (k / c[a:b].sum())
            small = [i for i in range(k) if scaled[i] < 1.0]
            large = [i for i in range(k) if scaled[i] >= 1.0]
            while small and large:
                s, g = small.pop(), large.pop()
                prob[a + s] = scaled[s]
                alias[a + s] = g
                scaled[g] -= 1.0 - scaled[s]
                (small if scaled[g] < 1.0 else large).append(g)
            for i in small + large:
                prob[a + i] = 1.0
                alias[a + i] = i
        return prob, alias

    # ------------------------------------------------------------------
    def scaled(self, lam):
        """Copy with every conductance multiplied by ``lam > 0``."""
        if not lam > 0:
            raise ValidationError("scale factor must be positive")
        env = Environment(
            d=self.d, L=self.L, boundary=self.boundary, side=self.side, ell_max=self.ell_max,
            coords=self.coords, n_sites=self.n_sites, edge_i=self.edge_i, edge_j=self.edge_j,
            edge_z=self.edge_z, edge_c=self.edge_c * lam, meta={**self.meta, "scaled_by": float(lam)},
        )
        return env

    def edge_records(self):
        """Yield ``(x, y, c)`` per edge in lexicographic order, x < y."""
        for i, j, c in zip(self.edge_i, self.edge_j, self.edge_c):
            yield self.coords[i], self.coords[j], float(c)

    def header(self):
        m = self.meta
        return {
            "format_version": 1,
            "d": self.d,
            "L": self.L,
            "boundary": self.boundary,
            "side": self.side,
            "model": m.get("model"),
            "s": m.get("s"),
            "xi_spec": m.get("xi_spec"),
            "seed": m.get("seed"),
            "ell_max": self.ell_max,
        }

    def __repr__(self):
        return (
            f"Environment(d={self.d}, boundary={self.boundary!r}, side={self.side}, "
            f"n_sites={self.n_sites}, n_edges={self.n_edges}, model={self.meta.get('model')!r})"
        )


def _lex_less(a, b):
    """Row-wise lexicographic a < b."""
    diff = a != b
    first = np.argmax(diff, axis=1)
    rows = np.arange(len(a))
    return diff.any(axis=1) & (a[rows, first] < b[rows, first])

