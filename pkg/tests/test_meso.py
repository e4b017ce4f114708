import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfcw.errors import DomainError, NotASaddleError
from rfcw.landscape import Landscape1D
from rfcw.meso import (MesoGrid, MesoLandscape, build_partition, export_edge_list, grid_total, layer_states,
                       lumped_chain, lumped_log_weights, meso_saddle, min_energy_curve,
                       secular_lhs, secular_roots)
from rfcw.kramers import gamma_bar
from rfcw.model import (FieldDistribution, SystemParams, all_configurations, hamiltonian, microscopic_chain,
                        sample_field)
from rfcw.potential import mean_hitting_time, solve_potential


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(5, 300))
def test_partition_invariants(seed, n, N):
    f = sample_field(FieldDistribution.uniform(-0.5, 0.5), N, seed)
    p = build_partition(f, n)
    assert p.n <= n
    assert p.rho.sum() == pytest.approx(1.0, abs=1e-12)
    assert sorted(np.concatenate(p.blocks).tolist()) == list(range(N))
    assert np.all(np.diff(p.hbar) > 0)
    for l, b in enumerate(p.blocks):
        assert np.all(p.label[b] == l)
        assert p.htilde[b].sum() == pytest.approx(0.0, abs=1e-12)
        assert np.all(p.h[b] >= p.edges_h[0] - 1e-15) and np.all(p.h[b] <= p.edges_h[-1] + 1e-15)


def test_partition_rejects_bad_n():
    with pytest.raises(DomainError):
        build_partition(np.zeros(4), 0)


def test_two_valued_field_is_block_constant_at_n2():
    f = sample_field(FieldDistribution.two_valued(0.2), 50, 3)
    p = build_partition(f, 2)
    assert p.n == 2 and p.block_constant
    assert p.hbar.tolist() == pytest.approx([-0.2, 0.2])


def lumped_by_brute_force(f, p, beta):
    N = f.N
    conf = all_configurations(N)
    H = np.array([hamiltonian(c, f.h) for c in conf])
    logw = -N * math.log(2) - beta * H
    k = p.up_counts(conf)
    grid = MesoGrid(p.sizes, N)
    out = np.full(grid.n_states, -np.inf)
    idx = grid.index(k)
    np.logaddexp.at(out, idx, logw)
    return out


def test_lumped_weights_equal_summed_microscopic_weights():
    f = sample_field(FieldDistribution.two_valued(0.2), 10, 5)
    p = build_partition(f, 2)
    params = SystemParams(10, 1.3)
    assert np.allclose(lumped_log_weights(p, params), lumped_by_brute_force(f, p, 1.3), atol=1e-12)


def test_lumped_chain_matches_microscopic_chain_for_block_constant_field():
    f = sample_field(FieldDistribution.two_valued(0.2), 10, 5)
    p = build_partition(f, 2)
    params = SystemParams(10, 1.6)
    lc = lumped_chain(p, params)
    assert lc.meta["exact"]
    mc = microscopic_chain(f, params)
    conf = all_configurations(10)
    lab = MesoGrid(p.sizes, 10).index(p.up_counts(conf))
    k = MesoGrid(p.sizes, 10).counts()
    A_l = np.flatnonzero(k.sum(axis=1) == 0)
    B_l = np.flatnonzero(k.sum(axis=1) == 10)
    A_m = np.flatnonzero(np.isin(lab, A_l))
    B_m = np.flatnonzero(np.isin(lab, B_l))
    cap_l = solve_potential(lc, A_l, B_l).log_cap
    cap_m = solve_potential(mc, A_m, B_m).log_cap
    assert cap_l == pytest.approx(cap_m, abs=1e-10)
    t_l = mean_hitting_time(lc, A_l, B_l).log_mean
    t_m = mean_hitting_time(mc, A_m, B_m).log_mean
    assert t_l == pytest.approx(t_m, abs=1e-10)


def test_one_block_lumped_chain_is_birth_death():
    f = sample_field(FieldDistribution.constant(0.0), 40, 0)
    lc = lumped_chain(build_partition(f, 1), SystemParams(40, 1.5))
    assert lc.n_states == 41 and lc.n_edges == 40
    assert np.all(lc.edges[:, 1] - lc.edges[:, 0] == 1)
    assert lc.check_substochastic() <= 1e-12


def test_layer_states_and_grid_total():
    f = sample_field(FieldDistribution.two_valued(0.2), 12, 0)
    lc = lumped_chain(build_partition(f, 2), SystemParams(12, 1.5))
    s = layer_states(lc, 0.0)
    assert np.allclose(lc.coords[s].sum(axis=1), 0.0)
    assert grid_total(12, 0.04) == 0.0
    assert grid_total(12, 0.1) == pytest.approx(1 / 6)
    assert grid_total(12, 5.0) == 1.0


def test_export_edge_list(tmp_path):
    f = sample_field(FieldDistribution.two_valued(0.2), 6, 0)
    lc = lumped_chain(build_partition(f, 2), SystemParams(6, 1.5))
    export_edge_list(lc, tmp_path / "e.txt")
    lines = (tmp_path / "e.txt").read_text().splitlines()
    legend = (tmp_path / "e.legend").read_text().splitlines()
    assert len(lines) == lc.n_edges
    assert len(legend) == lc.n_states + 1
    a, b, c = lines[0].split()
    assert float(c) == lc.log_c[0]


@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=8), st.data())
def test_secular_roots_are_eigenvalues(d, data):
    w = data.draw(st.lists(st.floats(0.05, 2.0), min_size=len(d), max_size=len(d)))
    d, w = np.array(d), np.array(w)
    roots = secular_roots(d, w)
    M = np.diag(d) - np.outer(np.sqrt(w), np.sqrt(w))
    assert np.allclose(roots, np.linalg.eigvalsh(M), atol=1e-9 * (1 + np.abs(d).max()))


def test_secular_roots_merge_equal_poles():
    roots = secular_roots([1.0, 1.0, 2.0], [0.5, 0.5, 0.5])
    assert np.sum(np.isclose(roots, 1.0)) == 1
    M = np.diag([1.0, 1.0, 2.0]) - 0.5 * np.ones((3, 3))
    assert np.allclose(roots, np.linalg.eigvalsh(M), atol=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(1.2, 2.5))
def test_saddle_spectral_identities(seed, n, beta):
    f = sample_field(FieldDistribution.uniform(-0.2, 0.2), 400, seed)
    land = Landscape1D.from_field(SystemParams(400, beta), f)
    z = [c for c in land.critical_points() if c.kind == "maximum"]
    if not z:
        return
    p = build_partition(f, n)
    sd = meso_saddle(z[0], p, beta)
    assert sd.z_star_meso.sum() == pytest.approx(z[0].m_star, abs=1e-9)
    assert sd.det_A == pytest.approx(np.linalg.det(sd.A), rel=1e-9, abs=1e-12)
    ev = np.linalg.eigvalsh(sd.B)
    assert np.allclose(ev, sd.gamma_hat, atol=1e-9)
    # v solves A R v = gamma_1 v with sum r v^2 = 1, so sqrt(r) v is the unit eigenvector of B
    assert np.allclose(sd.A @ sd.v_check, sd.gamma1 * sd.v, atol=1e-9)
    u = np.sqrt(sd.r) * sd.v
    assert np.allclose(sd.B @ u, sd.gamma1 * u, atol=1e-9)
    assert np.linalg.norm(u) == pytest.approx(1.0)
    assert np.all(sd.v > 0)
    # the negative root sits below every pole
    assert sd.gamma1 < 0 < np.min(sd.r * sd.lambda_hat)
    assert secular_lhs(sd.r * sd.lambda_hat, sd.r, sd.gamma1) == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 10_000), st.floats(0.05, 0.3), st.floats(0.2, 0.8), st.floats(1.5, 3.0))
def test_two_block_eigenvalue_equals_gamma_bar_for_two_valued_field(seed, a, p1, beta):
    dist = FieldDistribution.two_valued(a, p1)
    f = sample_field(dist, 500, seed)
    part = build_partition(f, 2)
    if part.n < 2:
        return
    land = Landscape1D.from_field(SystemParams(500, beta), f)
    sad = [c for c in land.critical_points() if c.kind == "maximum"]
    if len(sad) != 1:
        return
    g = gamma_bar(sad[0], f, beta, partition=part)
    assert g.gamma_hat1_finite_n == pytest.approx(g.gamma_bar1, rel=1e-9, abs=1e-12)


def test_one_block_saddle_reduces_to_curvature():
    f = sample_field(FieldDistribution.constant(0.0), 300, 0)
    sd = meso_saddle(0.0, build_partition(f, 1), 1.5)
    assert sd.A[0, 0] == pytest.approx(-1 + 1 / 1.5)
    assert sd.r[0] == pytest.approx(0.5)
    assert sd.gamma1 == pytest.approx(0.5 * (-1 + 1 / 1.5))


def test_not_a_saddle_at_high_temperature():
    f = sample_field(FieldDistribution.constant(0.0), 100, 0)
    with pytest.raises(NotASaddleError):
        meso_saddle(0.0, build_partition(f, 2), 0.8)


@settings(max_examples=15)
@given(st.integers(0, 1000), st.floats(-0.8, 0.8))
def test_min_energy_curve_minimizes_free_energy_on_the_layer(seed, m):
    f = sample_field(FieldDistribution.uniform(-0.3, 0.3), 200, seed)
    p = build_partition(f, 3)
    land = MesoLandscape(p, SystemParams(200, 1.5))
    x = min_energy_curve(m, p, 1.5)
    assert x.sum() == pytest.approx(m, abs=1e-12)
    base = land.free_energy(x)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        d = rng.normal(size=p.n)
        d -= d.mean()
        d *= 1e-3
        assert land.free_energy(x + d) >= base - 1e-12
