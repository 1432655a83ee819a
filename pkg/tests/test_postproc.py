import os

import numpy as np
import pytest

from axijet.fit import extract_free_boundary
from axijet.geometry import strip_domain
from axijet.postproc import (FIELD_COLUMNS, SUMMARY_KEYS, PostprocError, column_mass_flux,
                             downstream_state, export, outer_pressure, read_fields_csv,
                             read_summary, recover_fields)
from axijet.solver import StreamField
from axijet.thermo import GasClosure
from axijet.upstream import build_stream_profiles, preset, solve_upstream

# 30-digit oracles for gamma = 2, B = S = 1
RHO0_04 = 0.901580554275311454  # 2 rho^2 (1 - rho) = 0.16 on the subsonic branch
P_OUT_04 = 0.406423747923688911
G_016 = 1.10916323034917040
Q_032 = 1.01192885125388139  # upstream mass flux at pbar = 0.32, Hbar = 2
H_LOW_04 = 2.24936530076139632  # Hbar sqrt(rhobar ubar / Lambda) at Lambda = 0.4


def uniform_strip(c=0.4, Q=0.08, n=16):
    """psi = c y^2 / 2 on a strip of height sqrt(2 Q / c) rounded to the grid."""
    d = strip_domain(1.0, 1.0, 1 / n, 1 / n)
    Y = np.broadcast_to(d.y[:, None], d.shape)
    psi = np.minimum(0.5 * c * Y**2, Q)
    gas = GasClosure.constant(2.0, 1.0, 1.0, Q, 0.02)
    return StreamField(psi.copy(), Q, 0.4, 0.0, 0.02), d, gas


def test_outer_pressure():
    gas = GasClosure.constant(2.0, 1.0, 1.0, 0.02, 0.02)
    rho0, p = outer_pressure(0.4, gas)
    assert rho0 == pytest.approx(RHO0_04, rel=1e-12)
    assert p == pytest.approx(P_OUT_04, rel=1e-12)
    assert outer_pressure(0.0, gas) == pytest.approx((1.0, 0.5), rel=1e-14)
    with pytest.raises(PostprocError):
        outer_pressure(np.sqrt(8 / 27), gas)
    # p_out decreases with Lambda
    ps = [outer_pressure(L, gas)[1] for L in np.linspace(0.0, 0.5, 20)]
    assert np.all(np.diff(ps) < 0.0)


def test_downstream_constant_profile():
    prof = preset("constant")
    st = solve_upstream(prof, Q_032)
    gas = build_stream_profiles(st, 0.02)
    down = downstream_state(0.4, gas, prof, st)
    assert down.H_low == pytest.approx(H_LOW_04, rel=1e-8)
    assert down.mass_flux == pytest.approx(Q_032, abs=1e-8)
    assert down.theta_residual <= 1e-8
    s = np.linspace(0.0, down.H_low, 9)
    assert np.allclose(down.rho(s), RHO0_04, rtol=1e-10)
    assert np.allclose(down.rho(s) * down.u(s), 0.4, rtol=1e-10)
    assert np.allclose(down.psi(s), 0.2 * s**2, rtol=1e-8, atol=1e-12)
    assert down.psi(np.array([3.0]))[0] == pytest.approx(Q_032, rel=1e-8)


def test_recover_uniform_flow():
    field, d, gas = uniform_strip()
    sol = recover_fields(field, d, gas)
    w = sol.wet & (np.arange(d.shape[0])[:, None] > 1) & (np.arange(d.shape[0])[:, None] < 6)
    assert np.allclose(sol.rho[w], 1 / G_016, rtol=1e-10)
    assert np.allclose(sol.u[w], 0.4 * G_016, rtol=1e-10)
    assert np.allclose(sol.v[w], 0.0, atol=1e-14)
    assert np.allclose(sol.omega[sol.wet], 0.0)
    # axis value from the quadratic fit
    assert np.allclose(sol.u[0, :], 0.4 * G_016, rtol=1e-10)
    assert sol.bernoulli_residual <= 1e-9
    assert np.all(sol.mach[sol.wet] < 1.0)
    assert np.all(np.isnan(sol.rho[~sol.wet]))


def test_recover_rejects_sonic():
    field, d, gas = uniform_strip(c=0.7, Q=0.3)
    with pytest.raises(PostprocError, match="sonic"):
        recover_fields(field, d, gas)


def test_column_mass_flux_telescopes():
    field, d, gas = uniform_strip()
    x, f = column_mass_flux(field, d)
    assert x.size == d.shape[1]
    assert np.allclose(f, field.Q, rtol=1e-14)
    x2, f2 = column_mass_flux(field, d, consistent=False)
    assert np.allclose(f2, f, rtol=0.05)


def summary_for(field):
    return {k: float(n) for n, k in enumerate(SUMMARY_KEYS)}


def test_export_round_trip(tmp_path):
    field, d, gas = uniform_strip()
    sol = recover_fields(field, d, gas)
    sol.boundary = extract_free_boundary(field, d)
    export(sol, tmp_path, summary_for(field))
    names = sorted(os.listdir(tmp_path))
    assert names == ["boundary.csv", "boundary_tail.csv", "fields.csv", "psi_grid.dat",
                     "summary.txt", "upsilon.dat"]
    cols = read_fields_csv(tmp_path / "fields.csv")
    assert tuple(cols) == FIELD_COLUMNS
    jj, ii = np.nonzero(sol.wet)
    assert np.array_equal(cols["psi"], sol.psi[jj, ii])
    assert np.array_equal(cols["u"], sol.u[jj, ii])
    summ = read_summary(tmp_path / "summary.txt")
    assert list(summ) == list(SUMMARY_KEYS)
    raw = (tmp_path / "fields.csv").read_bytes()
    assert b"\r" not in raw


def test_export_empty_boundary_keeps_header(tmp_path):
    field, d, gas = uniform_strip()
    field.psi[:] = np.minimum(field.psi, 0.5 * field.Q)
    field.psi[-1] = field.Q
    sol = recover_fields(field, d, gas)
    sol.boundary = extract_free_boundary(field, d)
    assert sol.boundary.empty
    export(sol, tmp_path, summary_for(field))
    assert (tmp_path / "boundary.csv").read_text() == "y,Upsilon\n"
    assert (tmp_path / "boundary_tail.csv").read_text() == "x,f\n"


def test_export_needs_summary_keys(tmp_path):
    field, d, gas = uniform_strip()
    sol = recover_fields(field, d, gas)
    with pytest.raises(PostprocError, match="summary lacks"):
        export(sol, tmp_path, {"Q": 1.0})
