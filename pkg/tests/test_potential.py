import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfcw.errors import DomainError
from rfcw.meso import build_partition, lumped_chain
from rfcw.model import FieldDistribution, SystemParams, sample_field
from rfcw.potential import (ReversibleChain, bk_lower_bound, bounds_record, communication_height,
                            dirichlet_upper_bound, expected_hitting_times, green_identity_check,
                            harmonic_flow, mean_hitting_time, solve_potential, thomson_lower_bound,
                            validate_flow)
from rfcw.studies import random_chain


def birth_death(log_mu, log_c):
    n = len(log_mu)
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return ReversibleChain(np.asarray(log_mu), edges, np.asarray(log_c))


def bd_chain(gen, n):
    log_mu = gen.normal(0, 1.5, n)
    log_c = np.minimum(log_mu[:-1], log_mu[1:]) + np.log(gen.uniform(0.05, 0.5, n - 1))
    return birth_death(log_mu, log_c)


@given(st.integers(0, 10_000), st.integers(2, 40))
def test_birth_death_capacity_and_time_closed_forms(seed, n):
    ch = bd_chain(np.random.default_rng(seed), n)
    c = np.exp(ch.log_c)
    mu = np.exp(ch.log_mu)
    sol = solve_potential(ch, [0], [n - 1])
    assert sol.cap == pytest.approx(1.0 / math.fsum(1.0 / c), rel=1e-10)
    # from a single point nu is the point mass: E_0 tau = sum_k mu[0..k] / c(k, k+1)
    expected = math.fsum(np.cumsum(mu)[:-1] / c)
    assert mean_hitting_time(ch, [0], [n - 1]).mean == pytest.approx(expected, rel=1e-10)
    assert expected_hitting_times(ch, [n - 1])[0] == pytest.approx(expected, rel=1e-10)


@given(st.integers(0, 10_000), st.integers(4, 60))
def test_capacity_symmetry_and_two_evaluations(seed, n):
    gen = np.random.default_rng(seed)
    ch = random_chain(gen, n)
    A, B = [0], [n - 1]
    s1 = solve_potential(ch, A, B)
    s2 = solve_potential(ch, B, A)
    assert s1.log_cap == pytest.approx(s2.log_cap, abs=1e-9)
    assert s1.cap_discrepancy < 1e-9
    assert np.allclose(s1.h + s2.h, 1.0, atol=1e-9)
    assert np.all((s1.h >= -1e-12) & (s1.h <= 1 + 1e-12))
    assert s1.residual < 1e-8


@given(st.integers(0, 10_000), st.integers(4, 60))
def test_thomson_below_capacity_below_dirichlet(seed, n):
    gen = np.random.default_rng(seed)
    ch = random_chain(gen, n)
    A, B = [0], [n - 1]
    sol = solve_potential(ch, A, B)
    flow = harmonic_flow(ch, sol)
    assert validate_flow(ch, flow, tol=1e-9)
    # the harmonic flow attains both bounds
    assert thomson_lower_bound(ch, flow) == pytest.approx(sol.log_cap, abs=1e-8)
    assert dirichlet_upper_bound(ch, sol.h, A, B) == pytest.approx(sol.log_cap, abs=1e-8)
    # a perturbed test function only raises the Dirichlet form
    u = np.clip(sol.h + gen.normal(0, 0.05, n), 0, 1)
    u[A], u[B] = 1.0, 0.0
    assert dirichlet_upper_bound(ch, u, A, B) >= sol.log_cap - 1e-10
    # a perturbed unit flow only lowers the Thomson value
    uniform_flow = flow.scaled(1.0)
    uniform_flow.value = uniform_flow.value * gen.uniform(0.9, 1.1, uniform_flow.value.size)
    if validate_flow(ch, uniform_flow, tol=1e-6):
        assert thomson_lower_bound(ch, uniform_flow) <= sol.log_cap + 1e-10


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(4, 25))
def test_berman_konsowa_is_exact_for_the_harmonic_flow(seed, n):
    gen = np.random.default_rng(seed)
    ch = random_chain(gen, n)
    sol = solve_potential(ch, [0], [n - 1])
    bk = bk_lower_bound(ch, harmonic_flow(ch, sol), mode="exact")
    assert bk.log_value == pytest.approx(sol.log_cap, abs=1e-8)
    mc = bk_lower_bound(ch, harmonic_flow(ch, sol), mode="monte_carlo", paths=200, seed=1)
    assert mc.log_value == pytest.approx(sol.log_cap, abs=1e-8)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(3, 40))
def test_green_function_identity(seed, n):
    ch = random_chain(np.random.default_rng(seed), n)
    assert green_identity_check(ch, 0, [n - 1]) < 1e-8


def test_green_identity_domain():
    ch = random_chain(np.random.default_rng(0), 5)
    with pytest.raises(DomainError):
        green_identity_check(ch, 4, [4])


def test_solvers_agree_on_a_lumped_chain():
    f = sample_field(FieldDistribution.two_valued(0.2), 120, 1)
    ch = lumped_chain(build_partition(f, 2), SystemParams(120, 1.5))
    A, B = [0], [ch.n_states - 1]
    caps = {m: solve_potential(ch, A, B, method=m).log_cap for m in ("dense", "direct", "cg")}
    assert caps["direct"] == pytest.approx(caps["dense"], abs=1e-9)
    assert caps["cg"] == pytest.approx(caps["dense"], abs=1e-7)


def test_window_solve_is_close_to_full_solve():
    f = sample_field(FieldDistribution.two_valued(0.2), 200, 1)
    ch = lumped_chain(build_partition(f, 2), SystemParams(200, 1.5))
    A, B = [0], [ch.n_states - 1]
    full = solve_potential(ch, A, B)
    win = solve_potential(ch, A, B, window=(40, 25))
    assert win.windowed
    assert win.log_cap == pytest.approx(full.log_cap, abs=1e-8)
    tf = mean_hitting_time(ch, A, B, solution=full).log_mean
    tw = mean_hitting_time(ch, A, B, solution=win).log_mean
    assert tw == pytest.approx(tf, abs=1e-6)


def test_communication_height_of_birth_death():
    ch = birth_death([0.0, -1.0, 0.0], [-3.0, -5.0])
    assert communication_height(ch, [0], [2]) == -5.0


def test_rejects_malformed_chains():
    with pytest.raises(DomainError):
        ReversibleChain(np.zeros(2), [[0, 0]], [0.0])
    with pytest.raises(DomainError):
        ReversibleChain(np.zeros(2), [[0, 2]], [0.0])
    with pytest.raises(DomainError):
        ReversibleChain(np.zeros(2), [[0, 1]], [0.0, 1.0])


def test_dirichlet_bound_rejects_bad_test_functions():
    ch = birth_death([0.0, 0.0, 0.0], [-1.0, -1.0])
    with pytest.raises(DomainError):
        dirichlet_upper_bound(ch, [0.5, 0.5, 0.0], [0], [2])
    with pytest.raises(DomainError):
        dirichlet_upper_bound(ch, [1.0, 1.5, 0.0], [0], [2])


def test_bounds_record_fields():
    ch = birth_death([0.0, 0.0, 0.0], [-1.0, -1.0])
    sol = solve_potential(ch, [0], [2])
    rec = bounds_record(sol, lower=-2.0, upper=0.0)
    assert set(rec) == {"cap_log", "lower_log", "upper_log", "residual", "method", "iterations"}
    assert rec["cap_log"] == pytest.approx(-1.0 - math.log(2.0))
