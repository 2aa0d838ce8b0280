import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from rcmlab.environment import (
    Environment,
    ExponentSet,
    check_assumptions,
    constant_environment,
    gen_long_range_percolation,
    gen_polynomial_conductance,
    load_environment,
    moments,
    save_environment,
    tail,
    tail_field,
)
from rcmlab.environment.io import dumps_jsonl
from rcmlab.errors import ValidationError

UNIFORM02 = {"name": "uniform", "params": {"loc": 0.0, "scale": 2.0}}


def _edge_set(env):
    return {(tuple(x), tuple(y), c) for x, y, c in env.edge_records()}


def _nn_edges(env):
    nn = (env.edge_z**2).sum(axis=1) == 1
    return env.edge_c[nn]


# ----------------------------------------------------------------------
# generation
def test_percolation_nearest_neighbour_bonds_always_open():
    for seed in range(3):
        env = gen_long_range_percolation(2, 5.0, 8, "torus", ell_max=6, seed=seed)
        assert np.all(_nn_edges(env) == 1.0)
        assert len(_nn_edges(env)) == 2 * env.n_sites
        assert not moments(env).nu_missing.any()


def test_generation_is_deterministic_and_seed_sensitive():
    a = gen_long_range_percolation(2, 1.0, 10, "torus", ell_max=8, seed=11)
    b = gen_long_range_percolation(2, 1.0, 10, "torus", ell_max=8, seed=11)
    c = gen_long_range_percolation(2, 1.0, 10, "torus", ell_max=8, seed=12)
    assert _edge_set(a) == _edge_set(b)
    assert _edge_set(a) != _edge_set(c)


def test_generation_independent_of_threads():
    a = gen_polynomial_conductance(2, 3.0, UNIFORM02, 10, "torus", ell_max=6, seed=2, threads=1)
    b = gen_polynomial_conductance(2, 3.0, UNIFORM02, 10, "torus", ell_max=6, seed=2, threads=4)
    assert dumps_jsonl(a) == dumps_jsonl(b)


def test_percolation_open_frequency_at_distance_two():
    # two half-space offsets of length 2, one draw per anchor: 2 * 708^2 ~ 1e6 draws
    env = gen_long_range_percolation(2, 5.0, 354, "torus", ell_max=2, seed=1)
    draws = 2 * env.n_sites
    opened = int(np.sum((env.edge_z**2).sum(axis=1) == 4))
    p = 2.0**-7
    sigma = math.sqrt(draws * p * (1 - p))
    assert abs(opened - draws * p) <= 3 * sigma


def test_polynomial_mean_conductance_at_distance_three():
    env = gen_polynomial_conductance(2, 4.0, UNIFORM02, 112, "torus", ell_max=3, seed=4)
    draws = 2 * env.n_sites
    on_shell = (env.edge_z**2).sum(axis=1) == 9
    mean = env.edge_c[on_shell].sum() / draws
    sigma = (2.0 / math.sqrt(12.0)) / 729.0 / math.sqrt(draws)
    assert abs(mean - 1 / 729) <= 3 * sigma


def test_polynomial_unit_bonds_are_one():
    env = gen_polynomial_conductance(2, 3.0, {"name": "expon"}, 6, "torus", seed=0)
    assert np.all(_nn_edges(env) == 1.0)
    long = (env.edge_z**2).sum(axis=1) > 1
    n2 = (env.edge_z[long] ** 2).sum(axis=1)
    assert np.all(env.edge_c[long] <= 50 * n2 ** (-2.5))


def test_degenerate_xi_reduces_to_nearest_neighbour_lattice():
    env = gen_polynomial_conductance(2, 3.0, {"name": "constant", "value": 0.0}, 5, "torus", seed=9)
    ref = constant_environment(2, 5, "torus")
    assert _edge_set(env) == _edge_set(ref)


def test_generation_preconditions():
    with pytest.raises(ValidationError):
        gen_long_range_percolation(2, 5.0, 4, "torus", ell_max=9)
    with pytest.raises(ValidationError):
        gen_polynomial_conductance(2, 3.0, {"name": "norm"}, 4, "torus")
    with pytest.raises(ValidationError):
        gen_polynomial_conductance(2, 2.0, UNIFORM02, 4, "torus")
    with pytest.raises(ValidationError):
        gen_long_range_percolation(2, 0.0, 4, "torus")
    with pytest.raises(ValidationError):
        gen_long_range_percolation(2, 5.0, 4, "sphere")


@pytest.mark.parametrize("boundary", ["torus", "box"])
def test_symmetry_and_positive_pi(boundary):
    env = gen_polynomial_conductance(2, 2.5, UNIFORM02, 6, boundary, ell_max=5, seed=8)
    W = env.inner_matrix
    assert (W != W.T).nnz == 0
    assert np.all(env.pi >= 2 * env.d)
    # each unordered pair is stored once
    pairs = {(min(i, j), max(i, j)) for i, j in zip(env.edge_i, env.edge_j)}
    assert len(pairs) == env.n_edges


def test_torus_identification_and_minimal_image():
    env = gen_long_range_percolation(2, 1.0, 5, "torus", ell_max=4, seed=1)
    x = np.array([1, -2])
    for e in np.eye(2, dtype=np.int64):
        assert env.site_index(x + env.side * e) == env.site_index(x)
    assert np.abs(env.edge_z).max() <= (env.side - 1) // 2
    for (i, j, z) in zip(env.edge_i, env.edge_j, env.edge_z):
        assert np.array_equal(env.displacement(env.coords[i], env.coords[j]), z)


def test_box_mode_keeps_edges_leaving_the_box():
    env = gen_long_range_percolation(2, 1.0, 4, "box", ell_max=3, seed=1)
    assert env.n_total > env.n_sites
    assert np.all((env.edge_i < env.n_sites) | (env.edge_j < env.n_sites))


def test_isolated_site_rejected():
    with pytest.raises(ValidationError):
        Environment.from_edges(2, 2, "torus", [[0, 0]], [[1, 0]], [1.0])


# ----------------------------------------------------------------------
# persistence
@pytest.mark.parametrize("suffix", [".jsonl", ".npz"])
def test_roundtrip(tmp_path, suffix):
    env = gen_polynomial_conductance(2, 3.0, UNIFORM02, 5, "box", ell_max=4, seed=3)
    path = tmp_path / f"env{suffix}"
    save_environment(env, path)
    back = load_environment(path)
    assert dumps_jsonl(back) == dumps_jsonl(env)
    assert back.header() == env.header()
    assert np.array_equal(back.edge_c, env.edge_c)


def test_jsonl_is_lexicographic_and_byte_stable(tmp_path):
    env = gen_long_range_percolation(2, 2.0, 4, "torus", ell_max=3, seed=2)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_environment(env, a)
    save_environment(load_environment(a), b)
    assert a.read_bytes() == b.read_bytes()
    keys = [tuple(x) + tuple(y) for x, y, _ in env.edge_records()]
    assert keys == sorted(keys)


# ----------------------------------------------------------------------
# moments and tail
def _with_extra_edge(c=0.5):
    base = constant_environment(2, 6, "box")
    x = np.concatenate([base.coords[base.edge_i], [[0, 0]]])
    z = np.concatenate([base.edge_z, [[3, 0]]])
    cc = np.concatenate([base.edge_c, [c]])
    return Environment.from_edges(2, 6, "box", x, z, cc)


def test_moments_constant_lattice():
    env = constant_environment(2, 4, "torus")
    prof = moments(env, m_list=(4,), p=3.0)
    assert np.all(prof.mu == 4) and np.all(prof.nu == 4)
    assert np.all(prof.mu_m[4.0] == 4) and np.all(prof.mu_star == 4)


def test_moments_extra_edge():
    env = _with_extra_edge()
    prof = moments(env)
    for x in ([0, 0], [3, 0]):
        assert prof.mu[env.site_index(np.array(x))] == pytest.approx(8.5, abs=1e-15)


def test_mu_star_exponents():
    # (d(p-1) + 4p)/(p+1) at d = 2, p = 3 is (4 + 12)/4
    e = ExponentSet(2, 3.0, math.inf)
    assert e.gamma == 4.0 and e.c_power == 1.5


def test_nu_infinite_when_bond_missing():
    base = constant_environment(2, 3, "torus")
    keep = np.arange(base.n_edges) != 0
    env = Environment.from_edges(2, 3, "torus", base.coords[base.edge_i][keep], base.edge_z[keep], base.edge_c[keep])
    prof = moments(env)
    assert prof.nu_missing.sum() == 2
    assert np.isinf(prof.nu[prof.nu_missing]).all()


def test_moments_match_brute_force(perc_box):
    env = gen_polynomial_conductance(2, 2.5, UNIFORM02, 5, "box", ell_max=4, seed=6)
    for e in (env, perc_box):
        prof = moments(e, m_list=(4.0,), p=3.0)
        mu, nu, mum, mus = oracles.moments(e, 4.0, 3.0)
        for a, b in ((prof.mu, mu), (prof.nu, nu), (prof.mu_m[4.0], mum), (prof.mu_star, mus)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


def test_tail_examples():
    env = constant_environment(2, 4, "box")
    x = np.array([0, 0])
    assert tail(env, np.zeros(env.n_sites), 2, x) == 0.0
    assert tail(env, np.ones(env.n_sites), 2, x) == 0.0
    env = _with_extra_edge()
    assert tail(env, np.ones(env.n_sites), 2, x) == pytest.approx(2.0, abs=1e-15)


def test_tail_matches_brute_force(rng):
    envs = [
        gen_polynomial_conductance(2, 2.5, UNIFORM02, 5, "torus", ell_max=5, seed=1),
        gen_long_range_percolation(2, 1.0, 5, "box", ell_max=4, seed=2),
    ]
    for k in range(100):
        env = envs[k % 2]
        u = rng.normal(size=env.n_sites)
        R = float(rng.uniform(1.0, 4.5))
        x = int(rng.integers(env.n_sites))
        ref = oracles.tail(env, u, R, x)
        got = tail(env, u, R, env.coords[x])
        assert got == pytest.approx(ref, rel=1e-12, abs=1e-300)
        assert tail_field(env, u, R)[x] == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_tail_preconditions(const_torus4):
    with pytest.raises(ValidationError):
        tail(const_torus4, np.ones(const_torus4.n_sites), 0.5, [0, 0])


# ----------------------------------------------------------------------
# exponents
def test_assumption_examples():
    inf = math.inf
    assert check_assumptions(ExponentSet(2, inf, inf)).ergodic_moment
    rep = check_assumptions(ExponentSet(2, 3.0, inf))
    assert rep.llt_first and rep.llt_second and rep.q_infinite_note
    assert ExponentSet(2, 3.0, 2.0).rho == 2.0
    assert ExponentSet(2, 3.0, inf).rho == inf


def test_derived_exponents():
    e = ExponentSet(3, 4.0, 6.0)
    assert e.p_star == pytest.approx(4 / 3)
    assert e.rho == pytest.approx(3 / (1 + 0.5))
    assert e.kappa == pytest.approx((e.rho - 1) / e.rho)
    assert e.theta == pytest.approx((1 + e.kappa) / e.p_star)
    assert e.gamma0 == pytest.approx(e.gamma * (e.p + 1) / (2 * e.p))
    assert ExponentSet(2, math.inf, 3.0).p_star == 1.0


@pytest.mark.parametrize("p,q", [(1.0, 2.0), (2.0, 0.5)])
def test_exponent_range(p, q):
    with pytest.raises(ValidationError):
        ExponentSet(2, p, q)


def test_boundary_cases_are_exact():
    # (1 - 1/2)/2 + 1/4 = 1/2 exactly: the non-strict condition holds
    assert check_assumptions(ExponentSet(2, 2.0, 4.0)).sobolev
    # 1/3 + 2/3 = 1 is not < 1
    assert not check_assumptions(ExponentSet(2, 3.0, 1.5)).ergodic_moment


exponent = st.one_of(
    st.fractions(min_value=Fraction(51, 50), max_value=20, max_denominator=50).map(float),
    st.just(math.inf),
)


@given(d=st.integers(2, 5), p=exponent, q=exponent, dp=exponent, dq=exponent)
def test_assumptions_monotone(d, p, q, dp, dq):
    small = check_assumptions(ExponentSet(d, p, q)).to_dict()
    big = check_assumptions(ExponentSet(d, max(p, dp), max(q, dq))).to_dict()
    for key in ("ergodic_moment", "llt_first", "llt_second", "sobolev"):
        assert big[key] or not small[key]
