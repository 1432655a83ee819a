"""Gas closures in stream-function variables.

The flow is described by the squared mass-flux momentum
``t = |grad psi|^2 / y^2`` and the stream value ``z = psi``.  The Bernoulli
and entropy functions of ``z`` fix the momentum function

    m(rho, z) = 2 rho^2 (B(z) - rho^(gamma-1) S(z)),

whose subsonic inverse gives the specific volume ``g = 1/rho``.  Near the
sonic momentum ``g`` is blended to a constant so that the energy density is
uniformly elliptic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import _kernels as K


class ClosureError(ValueError):
    """Raised for inadmissible closure parameters."""


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationProfile:
    """Quintic smoothstep equal to 1 for s <= -1 and 0 for s >= -1/2."""

    def __call__(self, s):
        return self.derivs(s)[0]

    def derivs(self, s):
        s = np.asarray(s, dtype=float)
        r = np.clip(2.0 * (s + 1.0), 0.0, 1.0)
        w = 1.0 - r**3 * (10.0 - 15.0 * r + 6.0 * r**2)
        inside = (s > -1.0) & (s < -0.5)
        dw = np.where(inside, -60.0 * r**2 * (1.0 - r) ** 2, 0.0)
        d2w = np.where(inside, -240.0 * r * (1.0 - r) * (1.0 - 2.0 * r), 0.0)
        return w, dw, d2w

    def derivative_bound(self, n=200001):
        """Measured sup |w'| + sup |w''|."""
        s = np.linspace(-1.0, -0.5, n)
        _, dw, d2w = self.derivs(s)
        return float(np.abs(dw).max() + np.abs(d2w).max())


QUINTIC = TruncationProfile()


# ---------------------------------------------------------------------------
# closure object
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GasClosure:
    """Bernoulli and entropy functions of the stream value, plus gamma, eps, Q.

    ``B`` and ``S`` are stored as cubic Hermite interpolants on a uniform
    grid of ``[0, Q]`` and extended by constants outside it.
    """

    gamma: float
    eps: float
    Q: float
    z0: float
    dz: float
    Bv: np.ndarray
    Bd: np.ndarray
    Sv: np.ndarray
    Sd: np.ndarray
    gstar: float = field(init=False)
    g_lower: float = field(init=False)
    t_crit_min: float = field(init=False)
    c_off: float = field(init=False)

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ClosureError("gamma must exceed 1")
        if not self.Q > 0.0:
            raise ClosureError("mass flux Q must be positive")
        for a in (self.Bv, self.Sv):
            if np.any(a <= 0.0):
                raise ClosureError("Bernoulli and entropy functions must be positive")
        for name in ("Bv", "Bd", "Sv", "Sd"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        zf = self.z0 + self.dz * np.linspace(0.0, len(self.Bv) - 1, 8 * (len(self.Bv) - 1) + 1)
        B, S = self._BS(zf)
        gm1 = self.gamma - 1.0
        rho_c = (2.0 * B / ((self.gamma + 1.0) * S)) ** (1.0 / gm1)
        rho_m = (B / S) ** (1.0 / gm1)
        tc = gm1 * (2.0 * B / (self.gamma + 1.0)) ** ((self.gamma + 1.0) / gm1) * S ** (-2.0 / gm1)
        object.__setattr__(self, "gstar", float(1.0 / rho_c.min()))
        object.__setattr__(self, "g_lower", float(1.0 / rho_m.max()))
        object.__setattr__(self, "t_crit_min", float(tc.min()))
        BQ, SQ = self._BS(np.array([self.Q]))
        rmQ = (BQ[0] / SQ[0]) ** (1.0 / gm1)
        object.__setattr__(self, "c_off", float(gm1 / self.gamma * rmQ * BQ[0]))
        if not (0.0 < self.eps < 0.25 * min(self.t_crit_min, 1.0)):
            raise ClosureError(
                f"eps={self.eps} outside (0, min(t_c, 1)/4) with t_c={self.t_crit_min:.6g}")
        zk = self.z0 + self.dz * np.arange(len(self.Bv))
        empty = np.zeros(len(self.Bv))
        object.__setattr__(self, "_tables", (empty, empty, empty, empty))
        tables = K.layer_tables(zk, *self.packed())
        object.__setattr__(self, "_tables", tables)
        object.__setattr__(self, "_packed", None)

    def _BS(self, z):
        out = K.vec_profiles(np.ascontiguousarray(z, dtype=float), *self.packed())
        return out[0], out[3]

    def packed(self):
        """(par, tab) arrays consumed by the compiled kernels."""
        cached = getattr(self, "_packed", None)
        if cached is not None:
            return cached
        par = np.array([self.gamma, self.eps, self.Q, getattr(self, "gstar", 1.0),
                        getattr(self, "c_off", 0.0), self.z0, self.dz])
        extra = getattr(self, "_tables", None)
        if extra is None:
            extra = (self.Bv, self.Bd, self.Bv, self.Bd)
        tab = np.ascontiguousarray(np.vstack([self.Bv, self.Bd, self.Sv, self.Sd, *extra]))
        if getattr(self, "_tables", None) is not None:
            object.__setattr__(self, "_packed", (par, tab))
        return par, tab

    # constructors ---------------------------------------------------------

    @classmethod
    def constant(cls, gamma, B, S, Q, eps):
        n = 3
        dz = Q / (n - 1)
        return cls(gamma, eps, Q, 0.0, dz, np.full(n, float(B)), np.zeros(n),
                   np.full(n, float(S)), np.zeros(n))

    @classmethod
    def from_functions(cls, gamma, eps, Q, B, dB, S, dS, n=1025):
        """Sample analytic functions of z on a uniform grid of [0, Q]."""
        z = np.linspace(0.0, Q, n)
        return cls(gamma, eps, Q, 0.0, z[1] - z[0], np.asarray(B(z), float),
                   np.asarray(dB(z), float), np.asarray(S(z), float),
                   np.asarray(dS(z), float))

    def with_eps(self, eps):
        return GasClosure(self.gamma, eps, self.Q, self.z0, self.dz,
                          self.Bv, self.Bd, self.Sv, self.Sd)

    # profile access -------------------------------------------------------

    def profiles(self, z):
        """Rows B, B', B'', S, S', S'' at the stream values z."""
        z = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
        return K.vec_profiles(np.ascontiguousarray(z), *self.packed())

    @property
    def kappa0(self):
        """sup |B'| + sup |S'| plus Lipschitz constants of B' and S'."""
        z = np.linspace(self.z0, self.z0 + self.dz * (len(self.Bv) - 1), 8 * len(self.Bv))
        p = self.profiles(z)
        return float(np.abs(p[1]).max() + np.abs(p[2]).max()
                     + np.abs(p[4]).max() + np.abs(p[5]).max())


# ---------------------------------------------------------------------------
# closure operations
# ---------------------------------------------------------------------------

def _bcast(t, z):
    t, z = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(z, dtype=float))
    shape = t.shape
    return np.ascontiguousarray(t.ravel()), np.ascontiguousarray(z.ravel()), shape


def momentum(rho, z, gas: GasClosure):
    """m(rho, z) = 2 rho^2 (B - rho^(gamma-1) S)."""
    rho, z, shape = _bcast(rho, z)
    p = gas.profiles(z)
    return (2.0 * rho**2 * (p[0] - rho ** (gas.gamma - 1.0) * p[3])).reshape(shape)


def momentum_drho(rho, z, gas: GasClosure):
    rho, z, shape = _bcast(rho, z)
    p = gas.profiles(z)
    return (2.0 * rho * (2.0 * p[0] - (gas.gamma + 1.0) * rho ** (gas.gamma - 1.0) * p[3])).reshape(shape)


@dataclass(frozen=True)
class CriticalState:
    rho_crit: np.ndarray
    rho_max: np.ndarray
    t_crit: np.ndarray


def critical_quantities(z, gas: GasClosure) -> CriticalState:
    """Sonic density, stagnation density and sonic momentum at z."""
    z = np.asarray(z, dtype=float)
    p = gas.profiles(z)
    B, S = p[0].reshape(z.shape), p[3].reshape(z.shape)
    gm1 = gas.gamma - 1.0
    rho_c = (2.0 * B / ((gas.gamma + 1.0) * S)) ** (1.0 / gm1)
    rho_m = (B / S) ** (1.0 / gm1)
    tc = gm1 * (2.0 * B / (gas.gamma + 1.0)) ** ((gas.gamma + 1.0) / gm1) * S ** (-2.0 / gm1)
    return CriticalState(rho_c, rho_m, tc)


def invert_density(t, z, gas: GasClosure):
    """Specific volume g = 1/rho on the subsonic branch for 0 <= t <= t_c(z)."""
    t, z, shape = _bcast(t, z)
    tc = critical_quantities(z, gas).t_crit
    # near-sonic guard: dg/dt blows up at t_c
    if np.any(t < 0.0) or np.any(t > tc * (1.0 - 1e-9)):
        raise ClosureError("momentum outside [0, (1 - 1e-9) t_c(z)]")
    rho = K.vec_density(t, z, *gas.packed())
    return (1.0 / rho).reshape(shape)


def invert_density_dt(t, z, gas: GasClosure):
    """d g / d t = -g^2 / m_rho on the subsonic branch."""
    g = invert_density(t, z, gas)
    t, z, shape = _bcast(t, z)
    return (-g.ravel() ** 2 / momentum_drho(1.0 / g.ravel(), z, gas)).reshape(shape)


def invert_density_dz(t, z, gas: GasClosure):
    """d g / d z at fixed t on the subsonic branch."""
    g = invert_density(t, z, gas).ravel()
    t, z, shape = _bcast(t, z)
    p = gas.profiles(z)
    rho = 1.0 / g
    rg = rho ** (gas.gamma - 1.0)
    dF = 2.0 * rho * (2.0 * p[0] - (gas.gamma + 1.0) * rg * p[3])
    return (2.0 * (p[1] - rg * p[4]) / dF).reshape(shape)


def g_eps(t, z, gas: GasClosure, profile: TruncationProfile = QUINTIC):
    """Truncated specific volume and its partials (g, g_t, g_z)."""
    t, z, shape = _bcast(t, z)
    if profile is QUINTIC:
        out = K.vec_g_trunc(t, z, *gas.packed())
        return tuple(o.reshape(shape) for o in out)
    # generic cutoff evaluated in numpy
    p = gas.profiles(z)
    gam = gas.gamma
    gm1 = gam - 1.0
    tc = gm1 * (2.0 * p[0] / (gam + 1.0)) ** ((gam + 1.0) / gm1) * p[3] ** (-2.0 / gm1)
    tt = np.minimum(t, tc)
    rho = K.vec_density(tt, z, *gas.packed())
    rg = rho**gm1
    dF = 2.0 * rho * (2.0 * p[0] - (gam + 1.0) * rg * p[3])
    g = 1.0 / rho
    g_t = -g * g / dF
    g_z = 2.0 * (p[1] - rg * p[4]) / dF
    tcz = np.array([K.critical_momentum_dz(a, b, c, d, gam)
                    for a, b, c, d in zip(p[0], p[1], p[3], p[4])])
    w, dw, _ = profile.derivs((t - tc) / gas.eps)
    far = t >= tc - 0.5 * gas.eps
    g = np.where(far, 0.0, g)
    g_t = np.where(far, 0.0, g_t)
    g_z = np.where(far, 0.0, g_z)
    ge = g * w + (1.0 - w) * gas.gstar
    ge_t = g_t * w + (g - gas.gstar) * dw / gas.eps
    ge_z = g_z * w + (gas.gstar - g) * dw * tcz / gas.eps
    return ge.reshape(shape), ge_t.reshape(shape), ge_z.reshape(shape)


def energy_density_all(t, z, gas: GasClosure):
    """(G, G_t, G_z, G_tt, G_tz, G_zz) of the truncated energy density."""
    t, z, shape = _bcast(t, z)
    out = K.vec_energy_density(t, z, *gas.packed())
    return tuple(o.reshape(shape) for o in out)


def G_eps(t, z, gas: GasClosure):
    """Energy density: half the integral of g_eps in t, normalised by G(0, Q) = 0."""
    return energy_density_all(t, z, gas)[0]


def dG_dz(t, z, gas: GasClosure):
    return energy_density_all(t, z, gas)[2]


def G_eps_quadrature(t, z, gas: GasClosure, rtol=1e-12):
    """Reference energy density by adaptive quadrature of g_eps (slow)."""
    t = float(t)
    z = float(z)

    def ge(s, zz):
        return float(K.g_trunc(s, zz, *gas.packed())[0])

    p = gas.profiles(np.array([z, gas.Q]))
    gm1 = gas.gamma - 1.0
    tcz = gm1 * (2.0 * p[0, 0] / (gas.gamma + 1.0)) ** ((gas.gamma + 1.0) / gm1) \
        * p[3, 0] ** (-2.0 / gm1)
    pts = [tcz - gas.eps, tcz - 0.5 * gas.eps]
    pts = [s for s in pts if 0.0 < s < t]
    val = integrate.quad(ge, 0.0, t, args=(z,), points=pts or None, epsabs=0.0,
                         epsrel=rtol, limit=200)[0]
    # offset term from the stagnation states at z and Q
    rho_m = (p[0] / p[3]) ** (1.0 / gm1)
    G0 = gm1 / gas.gamma * (rho_m[0] ** gas.gamma * p[3, 0] - rho_m[1] ** gas.gamma * p[3, 1])
    return 0.5 * val + G0


def Phi_eps(t, z, gas: GasClosure):
    """Legendre-type transform -G + g_eps t."""
    return -G_eps(t, z, gas) + g_eps(t, z, gas)[0] * np.asarray(t, float)


def lambda_eps(Lambda, gas: GasClosure):
    """Plug-region penalty lambda = sqrt(Phi_eps(Lambda^2, Q))."""
    Lambda = float(Lambda)
    if Lambda < 0.0:
        raise ClosureError("Lambda must be non-negative")
    val = float(Phi_eps(Lambda**2, gas.Q, gas))
    return float(np.sqrt(max(val, 0.0)))


def lambda_eps_inverse(lam, gas: GasClosure, hi=None):
    """Lambda with lambda_eps(Lambda) = lam, by bracketing."""
    if lam <= 0.0:
        return 0.0
    hi = hi or 1.0
    while lambda_eps(hi, gas) < lam:
        hi *= 2.0
    return optimize.brentq(lambda L: lambda_eps(L, gas) - lam, 0.0, hi, xtol=1e-15, rtol=1e-14)


# ---------------------------------------------------------------------------
# ellipticity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EllipticityReport:
    g_star: float
    g_upper: float
    C_star: float
    C_upper: float
    kappa0: float
    delta: float
    tmax: float

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("g_star", "g_upper", "C_star", "C_upper", "kappa0", "delta", "tmax")}


def ellipticity_report(gas: GasClosure, tmax=None, n_t=801, n_z=41) -> EllipticityReport:
    """Bounds of g_eps and of g_eps + 2 t dg_eps/dt.

    The lower bound is the analytic value 1/sup(rho_max): g_eps is bounded
    below by g and is nondecreasing in t.  The upper bound of the second
    quantity and the bound on |dG/dz| are measured on a grid.
    """
    if tmax is None:
        tmax = 2.0 * float(critical_quantities(np.linspace(0, gas.Q, 33), gas).t_crit.max())
    t = np.linspace(0.0, tmax, n_t)
    z = np.linspace(-0.1 * gas.Q, 1.1 * gas.Q, n_z)
    T, Z = np.meshgrid(t, z)
    ge, ge_t, _ = g_eps(T, Z, gas)
    Gz = energy_density_all(T, Z, gas)[2]
    return EllipticityReport(
        g_star=gas.g_lower,
        g_upper=gas.gstar,
        C_star=gas.g_lower,
        C_upper=float((ge + 2.0 * ge_t * T).max()),
        kappa0=gas.kappa0,
        delta=float(np.abs(Gz).max()),
        tmax=float(tmax),
    )
