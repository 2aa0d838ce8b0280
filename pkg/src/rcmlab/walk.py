"""Variable speed random walk: holding time Exp(pi_x), jump to y w.p. C_{x,y}/pi_x.

Single trajectories use one keyed stream per ``stream_id``. Batch estimators
split their ``N`` walkers into fixed-size chunks, each with its own keyed
stream, and simulate a chunk in lockstep; results therefore do not depend on
the number of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import RCMError, ValidationError
from .rng import stream

CHUNK = 1 << 15


@dataclass
class Trajectory:
    start: int
    times: np.ndarray          # jump times, strictly increasing
    sites: np.ndarray          # site index after each jump
    displacement: np.ndarray   # unwrapped position after each jump, (k, d)
    horizon: float
    killed: bool = False

    def position_at(self, t):
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.start if k == 0 else int(self.sites[k - 1])


def _sample_neighbour(env, x, u1, u2):
    """Alias-table draw of a neighbour entry for sites ``x`` (vectorized)."""
    indptr = env.adjacency[0]
    prob, alias = env.alias_tables
    start = indptr[x]
    deg = indptr[x + 1] - start
    k = np.minimum((u1 * deg).astype(np.int64), deg - 1)
    j = start + k
    return np.where(u2 < prob[j], j, start + alias[j])


def sample_path(env, x0, T, stream_id, seed=None):
    """One VSRW trajectory on ``[0, T]`` started at coordinates ``x0``.

    In box mode a jump to a site outside the box kills the walk; the
    trajectory then ends with ``killed=True`` at that jump.
    """
    if not T > 0:
        raise ValidationError("T must be positive")
    seed = _seed(env, seed)
    x = env.site_index(np.asarray(x0)) if np.ndim(x0) else int(x0)
    start = x
    if x < 0 or x >= env.n_sites:
        raise ValidationError("start must be a stored site")
    _, nbr, z, _ = env.adjacency
    pi = env.pi
    gen = stream(seed, "walk", stream_id)
    t, pos = 0.0, np.zeros(env.d, dtype=np.int64)
    times, sites, disp = [], [], []
    killed = False
    while True:
        if pi[x] <= 0:
            raise RCMError("walk reached a site with pi_x = 0")
        t += gen.exponential(1.0 / pi[x])
        if t > T:
            break
        u1, u2 = gen.random(2)
        j = int(_sample_neighbour(env, np.array([x]), np.array([u1]), np.array([u2]))[0])
        pos = pos + z[j]
        x = int(nbr[j])
        times.append(t)
        sites.append(x)
        disp.append(pos.copy())
        if x >= env.n_sites:
            killed = True
            break
    return Trajectory(
        start=start,
        times=np.array(times),
        sites=np.array(sites, dtype=np.int64),
        displacement=np.array(disp, dtype=np.int64).reshape(-1, env.d),
        horizon=float(T),
        killed=killed,
    )


def _simulate_chunk(env, x0, T, n, gen):
    """Endpoints of ``n`` independent walks run in lockstep."""
    _, nbr, z, _ = env.adjacency
    pi = env.pi
    pos = np.full(n, x0, dtype=np.int64)
    disp = np.zeros((n, env.d), dtype=np.int64)
    clock = np.zeros(n)
    killed = np.zeros(n, dtype=bool)
    active = np.arange(n)
    while len(active):
        clock[active] += gen.exponential(size=len(active)) / pi[pos[active]]
        active = active[clock[active] <= T]
        if not len(active):
            break
        u = gen.random((2, len(active)))
        j = _sample_neighbour(env, pos[active], u[0], u[1])
        pos[active] = nbr[j]
        disp[active] += z[j]
        dead = pos[active] >= env.n_sites
        killed[active[dead]] = True
        active = active[~dead]
    return pos, disp, killed


def _batched(env, x0, T, N, seed, base_stream, threads):
    if N < 1:
        raise ValidationError("N must be >= 1")
    if not T > 0:
        raise ValidationError("t must be positive")
    sizes = [min(CHUNK, N - k) for k in range(0, N, CHUNK)]

    def work(k):
        gen = stream(seed, "walk-batch", base_stream, k)
        return _simulate_chunk(env, x0, T, sizes[k], gen)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(k) for k in range(len(sizes))]
    pos = np.concatenate([p[0] for p in parts])
    disp = np.concatenate([p[1] for p in parts])
    killed = np.concatenate([p[2] for p in parts])
    return pos, disp, killed


@dataclass
class EmpiricalKernel:
    t: float
    N: int
    probs: np.ndarray          # per stored site
    killed_fraction: float
    meta: dict = field(default_factory=dict)

    def entries(self, env):
        nz = np.flatnonzero(self.probs)
        return [{"x": env.coords[i].tolist(), "prob": float(self.probs[i])} for i in nz]

    def to_dict(self, env):
        return {"t": self.t, "N": self.N, "killed_fraction": self.killed_fraction,
                "entries": self.entries(env), **self.meta}


def _seed(env, seed):
    if seed is not None:
        return int(seed)
    return int(env.meta.get("seed") or 0)


def empirical_kernel(env, t, N, base_stream=0, seed=None, x0=None, threads=1):
    """Endpoint histogram of ``N`` walks from ``x0`` (default origin) at time ``t``.

    Probabilities over the box plus ``killed_fraction`` sum to one.
    """
    seed = _seed(env, seed)
    start = env.origin if x0 is None else env.site_index(np.asarray(x0))
    pos, _, killed = _batched(env, start, t, N, seed, base_stream, threads)
    counts = np.bincount(pos[~killed], minlength=env.n_sites)[: env.n_sites]
    return EmpiricalKernel(
        t=float(t), N=int(N), probs=counts / N, killed_fraction=float(killed.sum() / N),
        meta={"seed": seed, "base_stream": base_stream},
    )


@dataclass
class ScaledSamples:
    n: int
    t: float
    points: np.ndarray           # surviving rescaled endpoints, (N_alive, d)
    killed_fraction: float
    warnings: list

    def covariance(self):
        return np.cov(self.points.T, bias=False).reshape(self.points.shape[1], -1)


def scaled_endpoint_samples(env, n, t, N, base_stream=0, seed=None, threads=1):
    """Draws of n^-1 X_{n^2 t} from the origin (unwrapped on the torus)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    seed = _seed(env, seed)
    T = n * n * t
    warnings = []
    spread = math.sqrt(T * float(env.pi.max()) * env.ell_max**2)
    if spread > env.radius:
        warnings.append(
            f"diffusive range sqrt(n^2 t * max pi * ell_max^2) = {spread:.3g} exceeds box radius {env.radius}"
        )
    _, disp, killed = _batched(env, env.origin, T, N, seed, base_stream, threads)
    frac = float(killed.mean())
    if frac > 0:
        warnings.append(f"{frac:.3g} of the walks were killed at the box boundary")
    return ScaledSamples(int(n), float(t), disp[~killed] / n, frac, warnings)


def mean_square_displacement(env, t, N, base_stream=0, seed=None, threads=1):
    """Sample mean and standard error of |X_t|^2 (unwrapped) over surviving walks."""
    s = scaled_endpoint_samples(env, 1, t, N, base_stream, seed, threads)
    r2 = (s.points**2).sum(axis=1)
    return float(r2.mean()), float(r2.std(ddof=1) / math.sqrt(len(r2)))
