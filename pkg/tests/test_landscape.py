import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfcw.errors import NoDeeperMinimumError
from rfcw.landscape import Landscape1D, logcosh
from rfcw.meso import build_partition, lumped_log_weights
from rfcw.model import FieldDistribution, SystemParams, sample_field

# mpmath (30 digits) oracles
M_STAR_H0_B15 = 0.85855963664011036214649051833
F_STAR_H0_B15 = -0.076796112587663150278315830323
A_STAR_H0_B15 = 1.53605621760913436182686620836
M_STAR_H0_B2 = 0.957504024077268740676501530502
ROOTS_C005_B15 = (-0.818822539437953654669918482976, -0.152392836148161952722715567823,
                  0.886314367175917432574794239907)
F_ROOTS_C005_B15 = (-0.0347944736459010627081040177174, 0.00377929060382561323482938565084,
                    -0.12045455182355907546429736366)


def zero_field_landscape(beta, N=1000):
    return Landscape1D.from_distribution(SystemParams(N, beta), FieldDistribution.constant(0.0))


def test_logcosh_large_arguments():
    x = np.array([0.0, 1.0, 800.0, -800.0])
    assert np.allclose(logcosh(x), [0.0, math.log(math.cosh(1.0)), 800 - math.log(2), 800 - math.log(2)])


def test_zero_field_critical_points():
    land = zero_field_landscape(1.5)
    cps = land.critical_points()
    assert [c.kind for c in cps] == ["minimum", "maximum", "minimum"]
    assert cps[2].m_star == pytest.approx(M_STAR_H0_B15, abs=1e-12)
    assert cps[0].m_star == pytest.approx(-M_STAR_H0_B15, abs=1e-12)
    assert cps[1].m_star == pytest.approx(0.0, abs=1e-12)
    assert cps[2].F_value == pytest.approx(F_STAR_H0_B15, abs=1e-12)
    assert cps[2].curvature_a == pytest.approx(A_STAR_H0_B15, rel=1e-9)
    assert cps[1].curvature_a == pytest.approx(-1 + 1 / 1.5, rel=1e-12)
    cps2 = zero_field_landscape(2.0).critical_points()
    assert cps2[2].m_star == pytest.approx(M_STAR_H0_B2, abs=1e-12)


def test_constant_field_three_critical_points():
    land = Landscape1D.from_distribution(SystemParams(500, 1.5), FieldDistribution.constant(0.05))
    cps = land.critical_points()
    assert [c.kind for c in cps] == ["minimum", "maximum", "minimum"]
    for cp, m, F in zip(cps, ROOTS_C005_B15, F_ROOTS_C005_B15):
        assert cp.m_star == pytest.approx(m, abs=1e-11)
        assert cp.F_value == pytest.approx(F, abs=1e-11)
    bar = land.barrier()
    assert bar.start.m_star == pytest.approx(ROOTS_C005_B15[0], abs=1e-11)
    assert bar.target.m_star == pytest.approx(ROOTS_C005_B15[2], abs=1e-11)
    assert bar.delta_F == pytest.approx(F_ROOTS_C005_B15[1] - F_ROOTS_C005_B15[0], abs=1e-11)


def test_high_temperature_single_minimum():
    land = zero_field_landscape(0.5)
    cps = land.critical_points()
    assert len(cps) == 1 and cps[0].kind == "minimum"
    with pytest.raises(NoDeeperMinimumError):
        land.barrier()
    with pytest.raises(NoDeeperMinimumError):
        land.transition_barrier()


def test_symmetric_wells_use_fallback_barrier():
    land = zero_field_landscape(1.5)
    with pytest.raises(NoDeeperMinimumError):
        land.barrier()
    bar = land.transition_barrier()
    assert bar.start.m_star < 0 < bar.target.m_star
    assert bar.delta_F == pytest.approx(-F_STAR_H0_B15, abs=1e-12)


@given(st.floats(-0.95, 0.95), st.floats(0.6, 3.0))
def test_free_energy_forms_agree_at_zero_field(m, beta):
    land = zero_field_landscape(beta)
    I = 0.5 * ((1 + m) * math.log1p(m) + (1 - m) * math.log1p(-m))
    assert float(land.free_energy(m)) == pytest.approx(-0.5 * m * m + I / beta, abs=1e-10)


@given(st.integers(0, 10_000), st.floats(1.1, 2.5))
def test_critical_form_matches_free_energy_at_critical_points(seed, beta):
    f = sample_field(FieldDistribution.uniform(-0.3, 0.3), 60, seed)
    land = Landscape1D.from_field(SystemParams(60, beta), f)
    for cp in land.critical_points():
        assert float(land.free_energy_critical_form(cp.m_star)) == pytest.approx(cp.F_value, abs=1e-9)
        assert float(land.phi(cp.m_star)) == pytest.approx(0.0, abs=1e-10)


@given(st.integers(0, 10_000))
def test_legendre_is_convex_conjugate(seed):
    f = sample_field(FieldDistribution.uniform(-0.5, 0.5), 40, seed)
    land = Landscape1D.from_field(SystemParams(40, 1.0), f)
    m = np.linspace(-0.9, 0.9, 13)
    I, t, I2 = land.legendre(m)
    # dual check: I(m) = sup_t [t m - U(t)], attained at t*
    for mi, Ii, ti in zip(m, I, t):
        grid = ti + np.linspace(-0.05, 0.05, 11)
        vals = [g * mi - land.log_mgf(g)[0] for g in grid]
        assert Ii == pytest.approx(max(vals), abs=1e-9)
    assert np.all(I2 > 0)


def test_gibbs_point_asymptotic_matches_lumped_weights():
    # one block: Z Q(m) = binom(N, k) 2^-N exp(beta N (m^2/2 + hbar m)) for a constant field
    errs = []
    for N in (200, 800, 3200):
        f = sample_field(FieldDistribution.constant(0.05), N, 0)
        params = SystemParams(N, 1.5)
        land = Landscape1D.from_field(params, f)
        cp = land.minima()[-1]
        part = build_partition(f, 1)
        k = np.array([[round((cp.m_star + 1) * N / 2)]])
        m_grid = (2 * k[0, 0] - N) / N
        exact = float(lumped_log_weights(part, params, k)[0])
        # shift the exact weight to m* using the curvature of F
        exact += 0.5 * params.beta * N * cp.curvature_a * (m_grid - cp.m_star) ** 2
        errs.append(abs(land.log_gibbs_point_asymptotic(cp) - exact))
    assert errs[-1] < 2e-3
    assert errs[0] > errs[-1]


def test_table_columns(tmp_path):
    land = zero_field_landscape(1.5)
    rows = land.table([-1.0, 0.0, 0.5, 1.0])
    assert rows.shape == (4, 4)
    assert abs(rows[0, 0]) < 1 and abs(rows[-1, 0]) < 1  # clamped
    assert rows[1, 3] == pytest.approx(-1 + 1 / 1.5)
    land.write_csv(tmp_path / "t.csv", [0.0, 0.5])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "m,F,I,a" and len(lines) == 3


def test_analytic_and_empirical_landscapes_agree_for_large_N():
    dist = FieldDistribution.two_valued(0.2)
    f = sample_field(dist, 200_000, 1)
    emp = Landscape1D.from_field(SystemParams(f.N, 1.5), f)
    ana = Landscape1D.from_distribution(SystemParams(f.N, 1.5), dist)
    a = [c.m_star for c in emp.critical_points()]
    b = [c.m_star for c in ana.critical_points()]
    assert np.allclose(a, b, atol=5e-3)
