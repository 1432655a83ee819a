import warnings

import numpy as np
import pytest

from axijet.geometry import (Nozzle, boundary_data, build_grid, strip_boundary_data,
                             strip_domain)
from axijet.solver import (cell_momentum, discrete_energy, initial_guess,
                           local_energy, minimize, nodal_relax, prolong, validate_structure)
from axijet.thermo import GasClosure

Q = 0.02
LAMBDA = 0.0468


@pytest.fixture(scope="module")
def gas():
    return GasClosure.constant(2.0, 1.0, 1.0, Q, 0.02)


@pytest.fixture(scope="module")
def coarse_jet(gas):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = build_grid(Nozzle.tangent(2.0), 1.0, 3.0, 1 / 16, 1 / 16)
    bd = boundary_data(d, Q, LAMBDA)
    f, rep = minimize(d, bd, gas)
    return d, bd, f, rep


def test_initial_guess_bounds(coarse_jet):
    d, bd, _, _ = coarse_jet
    psi = initial_guess(d, bd)
    assert np.all((psi >= 0.0) & (psi <= Q))
    off = ~d.interior
    assert np.array_equal(psi[off], bd.values[off])


def test_minimize_jet(coarse_jet, gas):
    d, bd, f, rep = coarse_jet
    assert rep.converged and rep.energy_monotone
    assert rep.energy == pytest.approx(discrete_energy(f.psi, d, gas, f.lam2), rel=1e-14)
    assert np.all((f.psi >= 0.0) & (f.psi <= Q))
    off = ~d.interior
    assert np.array_equal(f.psi[off], bd.values[off])
    assert f.plug_mask(d).any()
    s = validate_structure(f, d, gas, H_star=bd.H_star)
    assert s["monotone_x"] and s["plug_suffix"] and s["subsonic"]
    assert s["plug_above_H_star"]


def test_minimizer_is_nodewise_optimal(coarse_jet, gas):
    d, bd, f, _ = coarse_jet
    rng = np.random.default_rng(3)
    jj, ii = np.nonzero(d.interior & (f.psi < Q))
    for k in rng.choice(jj.size, 20, replace=False):
        node = (jj[k], ii[k])
        v = f.psi[node]
        best = nodal_relax(f, node, d, gas)
        assert abs(best - v) <= 1e-7 * Q
        e0 = local_energy(f, node, v, d, gas)
        for dv in (-1e-4 * Q, 1e-4 * Q):
            assert local_energy(f, node, min(v + dv, Q), d, gas) >= e0 - 1e-18


def test_minimize_deterministic(coarse_jet, gas):
    d, bd, f, _ = coarse_jet
    f2, _ = minimize(d, bd, gas)
    assert np.array_equal(f.psi, f2.psi)


def test_strip_is_x_independent(gas):
    d = strip_domain(1.0, 1.0, 1 / 16, 1 / 16)
    prof = lambda y: Q * np.asarray(y) ** 2
    bd = strip_boundary_data(d, prof, Q)
    f, rep = minimize(d, bd, gas, lam2=0.0)
    assert rep.converged
    inner = f.psi[1:-1, 1:-1]
    assert np.abs(inner - inner[:, :1]).max() <= 1e-9 * Q


def test_prolong_keeps_boundary(coarse_jet):
    d, bd, f, _ = coarse_jet
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fine = build_grid(Nozzle.tangent(2.0), 1.0, 3.0, 1 / 32, 1 / 32)
    bdf = boundary_data(fine, Q, LAMBDA)
    p = prolong(f.psi, d, fine, bdf)
    off = ~fine.interior
    assert np.array_equal(p[off], bdf.values[off])
    assert np.all((p >= 0.0) & (p <= Q))
    # coincident nodes carry the coarse values
    both = fine.interior[::2, ::2] & d.interior
    assert np.allclose(p[::2, ::2][both], f.psi[both], atol=1e-15)


def test_cell_momentum_uniform():
    d = strip_domain(1.0, 1.0, 1 / 8, 1 / 8)
    psi = np.broadcast_to(0.3 * d.x[None, :], d.shape).copy()
    t = cell_momentum(psi, d)
    yc = 0.5 * (d.y[1:] + d.y[:-1])
    assert np.allclose(t, (0.3 / yc[:, None]) ** 2)
