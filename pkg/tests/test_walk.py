import math

import numpy as np
import pytest

from rcmlab.environment import constant_environment, gen_long_range_percolation
from rcmlab.errors import ValidationError
from rcmlab.kernel import heat_kernel
from rcmlab.walk import (
    CHUNK,
    empirical_kernel,
    mean_square_displacement,
    sample_path,
    scaled_endpoint_samples,
)


@pytest.fixture(scope="module")
def lrp_small():
    return gen_long_range_percolation(2, 1.5, 6, "torus", ell_max=5, seed=2)


def _assert_valid(env, tr):
    assert np.all(np.diff(tr.times) > 0)
    assert len(tr.times) == 0 or tr.times[-1] <= tr.horizon
    W = env.conductance_matrix
    prev, disp = tr.start, np.zeros(env.d, dtype=np.int64)
    for site, pos in zip(tr.sites, tr.displacement):
        assert W[prev, site] > 0
        step = pos - disp
        assert np.array_equal(env.displacement(env.coords[prev], env.coords[site]), step) or env.boundary == "box"
        prev, disp = site, pos


def test_path_validity(lrp_small, perc_box):
    for env in (lrp_small, perc_box):
        for k in range(50):
            _assert_valid(env, sample_path(env, [0, 0], 5.0, k))


def test_killed_path_ends_outside(perc_box):
    killed = [sample_path(perc_box, [4, 4], 50.0, k) for k in range(30)]
    killed = [tr for tr in killed if tr.killed]
    assert killed
    assert all(tr.sites[-1] >= perc_box.n_sites for tr in killed)


def test_path_determinism(lrp_small):
    a = sample_path(lrp_small, [0, 0], 10.0, 3)
    b = sample_path(lrp_small, [0, 0], 10.0, 3)
    c = sample_path(lrp_small, [0, 0], 10.0, 4)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.sites, b.sites)
    assert not np.array_equal(a.times[:5], c.times[:5])
    assert a.position_at(0.0) == a.start and a.position_at(10.0) == a.sites[-1]


def test_rate_scaling_coupled(lrp_small):
    fast = lrp_small.scaled(4.0)
    a = sample_path(lrp_small, [0, 0], 8.0, 1, seed=0)
    b = sample_path(fast, [0, 0], 2.0, 1, seed=0)
    assert np.array_equal(a.sites, b.sites)
    np.testing.assert_allclose(b.times, a.times / 4.0, rtol=1e-12)


def test_rate_scaling_statistical(lrp_small):
    lam = 3.0
    fast = lrp_small.scaled(lam)
    x0 = lrp_small.origin
    pi0 = lrp_small.pi[x0]
    nbrs = {}
    hold = {"slow": [], "fast": []}
    for name, env, offset in (("slow", lrp_small, 0), ("fast", fast, 100000)):
        counts = {}
        # horizon of ~20 mean holding times: a first jump is all but certain
        horizon = 20.0 / env.pi[x0]
        for k in range(10000):
            tr = sample_path(env, x0, horizon, offset + k, seed=1)
            hold[name].append(tr.times[0])
            counts[int(tr.sites[0])] = counts.get(int(tr.sites[0]), 0) + 1
        nbrs[name] = counts
    n = 10000
    for h, rate in ((hold["slow"], pi0), (hold["fast"], lam * pi0)):
        assert abs(np.mean(h) - 1 / rate) <= 3 / rate / math.sqrt(n)
    # first-jump law unchanged: compare each neighbour frequency
    for y in set(nbrs["slow"]) | set(nbrs["fast"]):
        a, b = nbrs["slow"].get(y, 0), nbrs["fast"].get(y, 0)
        assert abs(a - b) <= 4 * math.sqrt(a + b + 1)


def test_holding_times_have_mean_one_over_pi(lrp_small):
    # about T * mean(pi) jumps
    tr = sample_path(lrp_small, [0, 0], 1.1e5 / lrp_small.pi.mean(), 0)
    sites = np.concatenate([[tr.start], tr.sites[:-1]])
    holds = np.diff(np.concatenate([[0.0], tr.times]))
    assert len(holds) >= 1e5
    scaled = holds * lrp_small.pi[sites]
    assert abs(scaled.mean() - 1) <= 3 / math.sqrt(len(scaled))
    here = sites == lrp_small.origin
    h0 = holds[here]
    assert abs(h0.mean() - 1 / lrp_small.pi[lrp_small.origin]) <= 3 / lrp_small.pi[lrp_small.origin] / math.sqrt(len(h0))


def test_mean_square_displacement_constant_lattice():
    env = constant_environment(2, 32, "torus")
    t = 2.0
    mean, se = mean_square_displacement(env, t, 100000, seed=1)
    assert abs(mean - 4 * t) <= 3 * se


def test_msd_monotone(lrp_small):
    m1, s1 = mean_square_displacement(lrp_small, 1.0, 20000, base_stream=0)
    m2, s2 = mean_square_displacement(lrp_small, 4.0, 20000, base_stream=1)
    assert m1 <= m2 + 3 * math.hypot(s1, s2)


# ----------------------------------------------------------------------
def test_tiny_time_keeps_mass_at_origin(lrp_small):
    k = empirical_kernel(lrp_small, 1e-9, 10000)
    assert k.probs[lrp_small.origin] >= 1 - 1e-6


def test_empirical_kernel_total_variation():
    env = constant_environment(2, 4, "box")
    k = empirical_kernel(env, 1.0, 10**6, seed=5)
    p = heat_kernel(env, 1.0)
    assert abs(k.probs.sum() + k.killed_fraction - 1) <= 1e-12
    tv = 0.5 * (np.abs(k.probs - p).sum() + abs(k.killed_fraction - (1 - p.sum())))
    assert tv <= 0.01


def test_reflection_symmetry():
    env = constant_environment(2, 6, "torus")
    k = empirical_kernel(env, 2.0, 200000, seed=2)
    counts = k.probs * k.N
    mirror = env.site_index(-env.coords[: env.n_sites])
    diff = np.abs(counts - counts[mirror])
    assert np.all(diff <= 5 * np.sqrt(counts + counts[mirror] + 1))


def test_thread_count_does_not_change_results(lrp_small):
    N = 2 * CHUNK + 123
    a = empirical_kernel(lrp_small, 2.0, N, threads=1)
    b = empirical_kernel(lrp_small, 2.0, N, threads=4)
    assert np.array_equal(a.probs, b.probs)
    s1 = scaled_endpoint_samples(lrp_small, 2, 0.5, N, threads=1)
    s4 = scaled_endpoint_samples(lrp_small, 2, 0.5, N, threads=4)
    assert np.array_equal(s1.points, s4.points)


def test_empirical_kernel_serialization(lrp_small):
    k = empirical_kernel(lrp_small, 0.5, 1000)
    d = k.to_dict(lrp_small)
    assert d["N"] == 1000 and sum(e["prob"] for e in d["entries"]) == pytest.approx(1.0, abs=1e-12)


# ----------------------------------------------------------------------
def test_n_one_gives_raw_endpoints(lrp_small):
    raw = scaled_endpoint_samples(lrp_small, 1, 4.0, 5000)
    half = scaled_endpoint_samples(lrp_small, 2, 1.0, 5000)
    assert np.all(raw.points == np.round(raw.points))
    assert np.array_equal(raw.points, 2 * half.points)


def test_scaled_covariance_constant_lattice():
    env = constant_environment(2, 64, "torus")
    N = 100000
    s = scaled_endpoint_samples(env, 8, 1.0, N, seed=3)
    assert not s.warnings
    cov = s.covariance()
    var_se = 2.0 * math.sqrt(2.0 / N)
    assert abs(cov[0, 0] - 2) <= 3 * var_se and abs(cov[1, 1] - 2) <= 3 * var_se
    assert abs(cov[0, 1]) <= 3 * 2.0 / math.sqrt(N)
    mean = s.points.mean(axis=0)
    assert np.all(np.abs(mean) <= 3 * math.sqrt(2.0 / N))


def test_scaled_samples_warn_on_small_box(perc_box):
    s = scaled_endpoint_samples(perc_box, 4, 1.0, 2000)
    assert s.killed_fraction > 0
    assert len(s.warnings) == 2


def test_preconditions(lrp_small):
    with pytest.raises(ValidationError):
        sample_path(lrp_small, [0, 0], 0.0, 1)
    with pytest.raises(ValidationError):
        empirical_kernel(lrp_small, 1.0, 0)
    with pytest.raises(ValidationError):
        scaled_endpoint_samples(lrp_small, 0, 1.0, 10)
