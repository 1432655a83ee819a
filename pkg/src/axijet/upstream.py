"""Incoming flow far upstream in the nozzle.

Given the Bernoulli and entropy profiles across the upstream section, the
mass flux Q fixes a constant pressure p, and with it density, speed, the
upstream stream function and the map from stream values back to heights.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, optimize

from .thermo import GasClosure, dG_dz, invert_density


class UpstreamError(ValueError):
    """No admissible subsonic upstream state."""


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UpstreamProfiles:
    """B(y), S(y) across [0, Hbar] with first and second derivatives.

    Each of ``B`` and ``S`` maps an array of heights to a tuple
    (value, slope, curvature).
    """

    gamma: float
    Hbar: float
    B: Callable
    S: Callable
    name: str = "custom"

    def __post_init__(self):
        y = np.linspace(0.0, self.Hbar, 2001)
        B, dB, _ = self.B(y)
        S, dS, _ = self.S(y)
        if B.min() <= 0.0 or S.min() <= 0.0:
            raise UpstreamError("profiles must be positive")
        scale = max(1.0, np.abs(dB).max(), np.abs(dS).max())
        tol = 1e-8 * scale
        if abs(dB[0]) > tol or dB[-1] < -tol or abs(dS[0]) > tol or abs(dS[-1]) > tol:
            warnings.warn("upstream profiles violate the end-slope conditions", stacklevel=2)

    # derived quantities -----------------------------------------------------

    def D(self, y):
        """B S^(-1/gamma)."""
        return self.B(y)[0] * self.S(y)[0] ** (-1.0 / self.gamma)

    def D_bounds(self, n=4001):
        """Extremes of D, refined locally around the sampled extremes."""
        y = np.linspace(0.0, self.Hbar, n)
        d = self.D(y)
        out = []
        for sign, k in ((1.0, int(d.argmin())), (-1.0, int(d.argmax()))):
            a, b = y[max(k - 1, 0)], y[min(k + 1, n - 1)]
            r = optimize.minimize_scalar(lambda s: sign * self.D(np.array([s]))[0],
                                         bounds=(a, b), method="bounded",
                                         options={"xatol": 1e-14})
            out.append(min(sign * d[k], sign * float(r.fun)) * sign)
        return out[0], out[1]

    @property
    def kappa(self):
        """sup |B''| / y^2 + sup |S''| / y^2 over the sampled section."""
        y = np.linspace(0.0, self.Hbar, 4001)[1:]
        return float(np.max(np.abs(self.B(y)[2]) / y**2) + np.max(np.abs(self.S(y)[2]) / y**2))

    # constructors -----------------------------------------------------------

    @classmethod
    def from_tables(cls, gamma, yB, Bvals, yS, Svals, name="table"):
        """Clamped cubic splines through (y, value) samples."""
        yB = np.asarray(yB, float)
        yS = np.asarray(yS, float)
        for y in (yB, yS):
            if y[0] != 0.0 or np.any(np.diff(y) <= 0.0):
                raise UpstreamError("profile tables need strictly increasing y from 0")
        if yB[-1] != yS[-1]:
            raise UpstreamError("both tables must end at Hbar")
        sB = interpolate.CubicSpline(yB, Bvals, bc_type=((1, 0.0), (2, 0.0)))
        sS = interpolate.CubicSpline(yS, Svals, bc_type=((1, 0.0), (1, 0.0)))
        return cls(gamma, float(yB[-1]), _spline_triple(sB), _spline_triple(sS), name)


def _spline_triple(sp):
    def f(y):
        y = np.asarray(y, float)
        return sp(y), sp(y, 1), sp(y, 2)
    return f


def _poly_profile(c0, terms, Hbar):
    """c0 + sum_k a_k (y/Hbar)^p_k with derivatives."""
    def f(y):
        y = np.asarray(y, float)
        eta = y / Hbar
        v = np.full_like(y, c0)
        d1 = np.zeros_like(y)
        d2 = np.zeros_like(y)
        for a, p in terms:
            v = v + a * eta**p
            d1 = d1 + a * p * eta ** (p - 1) / Hbar
            d2 = d2 + a * p * (p - 1) * eta ** (p - 2) / Hbar**2
        return v, d1, d2
    return f


def preset(name, gamma=2.0, Hbar=2.0, B0=1.0, S0=1.0, bump_B=5e-4, bump_S=5e-4):
    """Built-in profile families.

    ``constant``           B = B0, S = S0
    ``quadratic-bump``     B = B0 + b eta^4, S = S0 + s (3 eta^4 - 2 eta^6)
    ``isentropic-bump``    B = B0 + b eta^4, S = S0
    with eta = y / Hbar.  All satisfy B'(0) = S'(0) = S'(Hbar) = 0, B'(Hbar) >= 0.
    """
    if name == "constant":
        B = _poly_profile(B0, [], Hbar)
        S = _poly_profile(S0, [], Hbar)
    elif name == "quadratic-bump":
        B = _poly_profile(B0, [(bump_B, 4)], Hbar)
        S = _poly_profile(S0, [(3.0 * bump_S, 4), (-2.0 * bump_S, 6)], Hbar)
    elif name == "isentropic-bump":
        B = _poly_profile(B0, [(bump_B, 4)], Hbar)
        S = _poly_profile(S0, [], Hbar)
    else:
        raise ValueError(f"unknown preset {name!r}")
    return UpstreamProfiles(gamma, Hbar, B, S, name)


PRESETS = ("constant", "quadratic-bump", "isentropic-bump")


# ---------------------------------------------------------------------------
# pressure window and mass flux
# ---------------------------------------------------------------------------

def p_sonic(d, gamma):
    return (gamma - 1.0) / gamma * (2.0 * d / (gamma + 1.0)) ** (gamma / (gamma - 1.0))


def p_stagnation(d, gamma):
    return (gamma - 1.0) / gamma * d ** (gamma / (gamma - 1.0))


def admissible_pressure_window(profiles: UpstreamProfiles):
    """(p_low, p_high) for which the whole section stays subsonic with u > 0."""
    Dlo, Dhi = profiles.D_bounds()
    lo = p_sonic(Dhi, profiles.gamma)
    hi = p_stagnation(Dlo, profiles.gamma)
    if lo >= hi:
        raise UpstreamError("window empty: profiles too non-uniform")
    return lo, hi


def density_speed(pbar, profiles: UpstreamProfiles, y):
    g = profiles.gamma
    S = profiles.S(y)[0]
    B = profiles.B(y)[0]
    rho = (g * pbar / ((g - 1.0) * S)) ** (1.0 / g)
    rad = 2.0 * (B - (g * pbar / (g - 1.0)) ** ((g - 1.0) / g) * S ** (1.0 / g))
    if np.any(rad < -1e-12 * B):
        raise UpstreamError("pressure outside the admissible window")
    return rho, np.sqrt(np.maximum(rad, 0.0))


def mass_flux_of_pressure(pbar, profiles: UpstreamProfiles):
    """Integral over the section of y rho u."""
    def f(y):
        r, u = density_speed(pbar, profiles, np.array([y]))
        return y * r[0] * u[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(f, 0.0, profiles.Hbar, epsabs=0.0, epsrel=1e-13, limit=200)[0]


# ---------------------------------------------------------------------------
# solved state
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UpstreamState:
    profiles: UpstreamProfiles
    Q: float
    pbar: float
    Q_star: float
    Q_upper: float
    kappa: float
    y_knots: np.ndarray
    psi_knots: np.ndarray
    flux_knots: np.ndarray  # y rho u at the knots

    def rhobar(self, y):
        return density_speed(self.pbar, self.profiles, np.asarray(y, float))[0]

    def ubar(self, y):
        return density_speed(self.pbar, self.profiles, np.asarray(y, float))[1]

    def mass_flux_density(self, y):
        r, u = density_speed(self.pbar, self.profiles, np.asarray(y, float))
        return r * u

    def psibar(self, y):
        """Cumulative stream function of height."""
        return _hermite(self.y_knots, self.psi_knots, self.flux_knots, np.asarray(y, float))

    def hmap(self, z):
        """Height of the streamline carrying the stream value z."""
        z = np.asarray(z, float)
        zc = np.clip(z, 0.0, self.Q)
        yk, pk, fk = self.y_knots, self.psi_knots, self.flux_knots
        k = np.clip(np.searchsorted(pk, zc, side="right") - 1, 0, len(pk) - 2)
        lo = yk[k].copy()
        hi = yk[k + 1].copy()
        y = lo + (hi - lo) * (zc - pk[k]) / np.maximum(pk[k + 1] - pk[k], 1e-300)
        for _ in range(100):
            f = _hermite(yk, pk, fk, y) - zc
            lo = np.where(f < 0.0, y, lo)
            hi = np.where(f >= 0.0, y, hi)
            d = _hermite_slope(yk, pk, fk, y)
            with np.errstate(divide="ignore", invalid="ignore"):
                yn = y - f / d
            bad = ~((yn > lo) & (yn < hi))
            yn = np.where(bad, 0.5 * (lo + hi), yn)
            if np.all(np.abs(yn - y) <= 1e-15 * self.profiles.Hbar):
                y = yn
                break
            y = yn
        return y


def _hermite(xk, fk, dk, x):
    k = np.clip(np.searchsorted(xk, x, side="right") - 1, 0, len(xk) - 2)
    h = xk[k + 1] - xk[k]
    u = (x - xk[k]) / h
    return ((2 * u**3 - 3 * u**2 + 1) * fk[k] + (u**3 - 2 * u**2 + u) * h * dk[k]
            + (-2 * u**3 + 3 * u**2) * fk[k + 1] + (u**3 - u**2) * h * dk[k + 1])


def _hermite_slope(xk, fk, dk, x):
    k = np.clip(np.searchsorted(xk, x, side="right") - 1, 0, len(xk) - 2)
    h = xk[k + 1] - xk[k]
    u = (x - xk[k]) / h
    return ((6 * u**2 - 6 * u) * fk[k] / h + (3 * u**2 - 4 * u + 1) * dk[k]
            + (-6 * u**2 + 6 * u) * fk[k + 1] / h + (3 * u**2 - 2 * u) * dk[k + 1])


def solve_upstream(profiles: UpstreamProfiles, Q: float, n_knots=4097) -> UpstreamState:
    """Pressure with mass flux Q, plus the cumulative stream function."""
    p_lo, p_hi = admissible_pressure_window(profiles)
    Q_hi = mass_flux_of_pressure(p_lo, profiles)
    Q_lo = mass_flux_of_pressure(p_hi, profiles)
    if not (Q_lo < Q < Q_hi):
        raise UpstreamError(
            f"no admissible subsonic upstream state: Q={Q!r} outside ({Q_lo:.12g}, {Q_hi:.12g})")
    pbar = optimize.brentq(lambda p: mass_flux_of_pressure(p, profiles) - Q,
                           p_lo, p_hi, xtol=1e-16, rtol=1e-15, maxiter=400)
    kappa = profiles.kappa
    Q_star = kappa ** (1.0 / (4.0 * profiles.gamma)) if kappa > 0.0 else 0.0
    if not (Q_star < Q < Q_hi):
        warnings.warn(f"Q={Q:.6g} outside the nominal window ({Q_star:.6g}, {Q_hi:.6g})",
                      stacklevel=2)
    # cumulative stream function by 8-point Gauss panels between knots
    y = np.linspace(0.0, profiles.Hbar, n_knots)
    xg, wg = np.polynomial.legendre.leggauss(8)
    mid = 0.5 * (y[1:] + y[:-1])
    half = 0.5 * (y[1:] - y[:-1])
    pts = mid[:, None] + half[:, None] * xg[None, :]
    r, u = density_speed(pbar, profiles, pts)
    seg = half * ((pts * r * u) @ wg)
    psi = np.concatenate([[0.0], np.cumsum(seg)])
    r, u = density_speed(pbar, profiles, y)
    return UpstreamState(profiles, float(Q), float(pbar), float(Q_star), float(Q_hi),
                         kappa, y, psi, y * r * u)


# ---------------------------------------------------------------------------
# stream-value profiles
# ---------------------------------------------------------------------------

def stream_profiles(state: UpstreamState, z):
    """B, B', S, S' as functions of the stream value z in [0, Q]."""
    prof = state.profiles
    h = state.hmap(z)
    B, dB, d2B = prof.B(h)
    S, dS, d2S = prof.S(h)
    rho_u = state.mass_flux_density(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        dBz = dB / (h * rho_u)
        dSz = dS / (h * rho_u)
    # limit at the axis: B'(h) / h -> B''(0)
    at0 = h <= 0.0
    if np.any(at0):
        ru0 = state.mass_flux_density(np.array([0.0]))[0]
        dBz = np.where(at0, prof.B(np.array([0.0]))[2][0] / ru0, dBz)
        dSz = np.where(at0, prof.S(np.array([0.0]))[2][0] / ru0, dSz)
    return B, dBz, S, dSz


def build_stream_profiles(state: UpstreamState, eps: float, n=2049) -> GasClosure:
    """Closure with B(z) = Bbar(h(z)), S(z) = Sbar(h(z)) on a uniform z grid."""
    z = np.linspace(0.0, state.Q, n)
    B, dB, S, dS = stream_profiles(state, z)
    return GasClosure(state.profiles.gamma, eps, state.Q, 0.0, z[1] - z[0], B, dB, S, dS)


def upstream_strip_profile(state: UpstreamState, gas: GasClosure):
    """Far-field stream profile y -> psibar(y) with its 1D residual.

    The residual of (rho u)' ... written as d/dy[g(t, psi) psi'/y] - y dG/dz at
    psibar is returned alongside the profile, measured on interior samples.
    """
    y = np.linspace(0.0, state.profiles.Hbar, 801)[1:-1]
    h = 1e-5 * state.profiles.Hbar

    def flux_over_y(yy):
        psi = state.psibar(yy)
        dpsi = yy * state.mass_flux_density(yy)
        t = (dpsi / yy) ** 2
        return invert_density(t, psi, gas) * dpsi / yy, t, psi

    fp, _, _ = flux_over_y(y + h)
    fm, _, _ = flux_over_y(y - h)
    _, t, psi = flux_over_y(y)
    resid = (fp - fm) / (2.0 * h) - y * dG_dz(t, psi, gas)
    return state.psibar, float(np.abs(resid).max())
