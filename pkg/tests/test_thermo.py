import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from axijet.thermo import (QUINTIC, ClosureError, GasClosure, G_eps, G_eps_quadrature,
                           Phi_eps, critical_quantities, dG_dz, ellipticity_report, g_eps,
                           invert_density, invert_density_dt, invert_density_dz, lambda_eps,
                           lambda_eps_inverse, momentum)

# reference values from 30-digit bisection and quadrature on 2 rho^2 (1 - rho) = t
RHO_025 = 0.809016994374947424
G_016_VOLUME = 1.10916323034917040
G_016_ENERGY = 0.0838898647795561744
LAM2_04 = 0.0935762520763110889


@pytest.fixture
def unit_gas():
    return GasClosure.constant(2.0, 1.0, 1.0, 1.0, 0.05)


def bumpy_gas(eps=0.02):
    Q = 0.5
    return GasClosure.from_functions(
        2.0, eps, Q,
        lambda z: 1.0 + 0.05 * np.sin(np.pi * z / Q) ** 2,
        lambda z: 0.05 * np.pi / Q * np.sin(2 * np.pi * z / Q),
        lambda z: 1.0 + 0.03 * (z / Q) ** 2 * (3 - 2 * z / Q),
        lambda z: 0.03 * 6 * (z / Q) * (1 - z / Q) / Q)


def test_momentum_examples(unit_gas):
    assert momentum(2.0 / 3.0, 0.5, unit_gas) == pytest.approx(8.0 / 27.0, abs=1e-14)
    assert momentum(0.9, 0.5, unit_gas) == pytest.approx(0.162, abs=1e-14)
    assert momentum(1.0, 0.5, unit_gas) == pytest.approx(0.0, abs=1e-14)


def test_critical_quantities():
    cq = critical_quantities(np.array([0.3]), GasClosure.constant(2.0, 1.0, 1.0, 1.0, 0.05))
    assert cq.rho_crit[0] == pytest.approx(2.0 / 3.0, rel=1e-14)
    assert cq.rho_max[0] == pytest.approx(1.0, rel=1e-14)
    assert cq.t_crit[0] == pytest.approx(8.0 / 27.0, rel=1e-14)
    g3 = GasClosure.constant(3.0, 2.0, 1.0, 1.0, 0.05)
    assert critical_quantities(np.array([0.1]), g3).t_crit[0] == pytest.approx(2.0, rel=1e-14)


def test_critical_momentum_is_max_of_momentum():
    gas = bumpy_gas()
    z = np.linspace(0.0, gas.Q, 7)
    cq = critical_quantities(z, gas)
    assert np.abs(momentum(cq.rho_crit, z, gas) - cq.t_crit).max() < 1e-12


def test_invert_density_examples(unit_gas):
    assert invert_density(0.0, 0.2, unit_gas) == pytest.approx(1.0, abs=1e-14)
    assert invert_density(0.25, 0.2, unit_gas) == pytest.approx(1.0 / RHO_025, rel=1e-12)
    assert invert_density(0.16, 0.2, unit_gas) == pytest.approx(G_016_VOLUME, rel=1e-12)


def test_invert_density_rejects_sonic(unit_gas):
    with pytest.raises(ClosureError):
        invert_density(8.0 / 27.0, 0.2, unit_gas)
    with pytest.raises(ClosureError):
        invert_density(-1e-3, 0.2, unit_gas)


def test_dg_dt_at_rest(unit_gas):
    assert invert_density_dt(0.0, 0.3, unit_gas) == pytest.approx(0.5, rel=1e-12)


def test_dg_dt_matches_finite_difference_and_is_positive():
    gas = bumpy_gas()
    z = np.linspace(0.0, gas.Q, 9)
    tc = critical_quantities(z, gas).t_crit
    for frac in (0.1, 0.5, 0.9):
        t = frac * tc
        h = 1e-6
        fd = (invert_density(t + h, z, gas) - invert_density(t - h, z, gas)) / (2 * h)
        d = invert_density_dt(t, z, gas)
        assert np.all(d >= 0.0)
        assert np.abs(fd - d).max() < 1e-6 * np.abs(d).max()


def test_dg_dz_matches_finite_difference():
    gas = bumpy_gas()
    z = np.linspace(0.05, 0.95, 7) * gas.Q
    t = 0.5 * critical_quantities(z, gas).t_crit
    h = 1e-6 * gas.Q
    fd = (invert_density(t, z + h, gas) - invert_density(t, z - h, gas)) / (2 * h)
    d = invert_density_dz(t, z, gas)
    assert np.abs(fd - d).max() < 1e-6 * max(1.0, np.abs(d).max())


def test_truncation_profile():
    s = np.linspace(-2.0, 0.0, 4001)
    w, dw, d2w = QUINTIC.derivs(s)
    assert np.all(w[s <= -1.0] == 1.0) and np.all(w[s >= -0.5] == 0.0)
    assert np.all(np.diff(w) <= 0.0)
    assert QUINTIC.derivative_bound() > 8.0  # measured, see decisions ledger


def test_g_eps_blend(unit_gas):
    tc = 8.0 / 27.0
    eps = unit_gas.eps
    # t = 0.25 lies below t_c - eps only for eps < 0.0463
    narrow = unit_gas.with_eps(0.04)
    assert g_eps(0.25, 0.3, narrow)[0] == pytest.approx(1.0 / RHO_025, rel=1e-12)
    assert g_eps(0.25, 0.3, unit_gas)[0] > 1.0 / RHO_025
    t_low = np.linspace(0.0, tc - eps, 20)
    assert np.array_equal(g_eps(t_low, 0.3, unit_gas)[0], invert_density(t_low, 0.3, unit_gas))
    t_high = np.linspace(tc - 0.5 * eps, 2.0, 20)
    assert np.all(g_eps(t_high, 0.3, unit_gas)[0] == unit_gas.gstar)


def test_energy_density_examples(unit_gas):
    assert G_eps(0.0, unit_gas.Q, unit_gas) == pytest.approx(0.0, abs=1e-15)
    assert G_eps(0.0, 0.3, unit_gas) == pytest.approx(0.0, abs=1e-15)
    assert G_eps(0.16, unit_gas.Q, unit_gas) == pytest.approx(G_016_ENERGY, rel=1e-10)


def test_energy_density_matches_quadrature():
    gas = bumpy_gas()
    for t, z in [(0.05, 0.1), (0.2, 0.3), (0.28, 0.45), (0.4, 0.2)]:
        assert G_eps(t, z, gas) == pytest.approx(G_eps_quadrature(t, z, gas), rel=1e-9, abs=1e-12)


def test_dG_dz():
    assert np.all(dG_dz(np.linspace(0, 1, 11), 0.3, GasClosure.constant(2, 1, 1, 1, 0.05)) == 0.0)
    gas = bumpy_gas()
    assert np.all(dG_dz(np.linspace(0, 0.2, 5), -0.1, gas) == 0.0)
    t = np.array([0.02, 0.1, 0.15])
    z = np.array([0.1, 0.25, 0.4])
    errs = []
    for h in (2e-3, 1e-3, 5e-4):
        fd = (G_eps(t, z + h, gas) - G_eps(t, z - h, gas)) / (2 * h)
        errs.append(np.abs(fd - dG_dz(t, z, gas)).max())
    assert errs[-1] < 1e-5
    # second order: halving h divides the error by about 4
    for a, b in zip(errs, errs[1:]):
        assert 3.5 < a / b < 4.5


def test_lambda_eps(unit_gas):
    assert lambda_eps(0.0, unit_gas) == 0.0
    assert lambda_eps(0.4, unit_gas) ** 2 == pytest.approx(LAM2_04, rel=1e-10)
    L = np.linspace(0.0, 0.99 * np.sqrt(8.0 / 27.0), 25)
    lam = np.array([lambda_eps(v, unit_gas) for v in L])
    assert np.all(np.diff(lam) > 0.0)
    assert lambda_eps_inverse(lambda_eps(0.3, unit_gas), unit_gas) == pytest.approx(0.3, rel=1e-10)


def test_phi_slope_window(unit_gas):
    rep = ellipticity_report(unit_gas)
    t = np.linspace(0.0, 0.6, 301)
    h = 1e-7
    slope = (Phi_eps(t + h, 0.5, unit_gas) - Phi_eps(np.maximum(t - h, 0), 0.5, unit_gas)) \
        / (t + h - np.maximum(t - h, 0))
    assert slope.min() >= 0.5 * rep.C_star * (1 - 1e-6)


def test_closure_validation():
    with pytest.raises(ClosureError):
        GasClosure.constant(1.0, 1.0, 1.0, 1.0, 0.05)
    with pytest.raises(ClosureError):
        GasClosure.constant(2.0, 1.0, 1.0, 1.0, 0.1)  # eps above t_c / 4
    with pytest.raises(ClosureError):
        GasClosure.constant(2.0, 1.0, 1.0, -1.0, 0.05)


def test_profiles_extend_by_constants():
    gas = bumpy_gas()
    p = gas.profiles(np.array([-0.2, 0.0, gas.Q, gas.Q + 0.3]))
    assert p[0, 0] == pytest.approx(p[0, 1]) and p[1, 0] == 0.0
    assert p[3, 3] == pytest.approx(p[3, 2]) and p[4, 3] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(0.0, 1.0))
def test_inversion_round_trip_property(frac, zfrac):
    gas = bumpy_gas()
    z = np.array([zfrac * gas.Q])
    tc = critical_quantities(z, gas).t_crit
    t = frac * tc
    rho = 1.0 / invert_density(t, z, gas)
    assert abs(momentum(rho, z, gas) - t)[0] <= 1e-10 * max(1.0, tc[0])
