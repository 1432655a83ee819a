"""Compiled scalar closures and lattice kernels.

Everything here works on the pair ``(par, tab)`` built by
:meth:`axijet.thermo.GasClosure.packed`:

    par = [gamma, eps, Q, gstar, c_off, z0, dz]
    tab = rows [B, B', S, S', Gb, Gb', tc, tc'] on a uniform stream value grid

where rows come in (value, slope) pairs of cubic Hermite interpolants, ``Gb``
is the energy density at the end of the blend layer and ``tc`` the sonic
momentum.  A flat array pair keeps call overhead low in the inner loops.
"""

import math

import numpy as np
from numba import njit, prange

# node tags
OUTSIDE = 0
INTERIOR = 1
AXIS = 2
INLET = 3
OUTLET = 4
WALL = 5

# Gauss-Legendre panel for the truncation layer
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


# ---------------------------------------------------------------------------
# profiles and closures
# ---------------------------------------------------------------------------

@njit(cache=True)
def hermite_eval(z, z0, dz, tab, rv, rd):
    """Value, slope and curvature of a uniform cubic Hermite interpolant.

    Constant extension outside the tabulated range.
    """
    n = tab.shape[1]
    zmax = z0 + dz * (n - 1)
    if z <= z0:
        return tab[rv, 0], 0.0, 0.0
    if z >= zmax:
        return tab[rv, n - 1], 0.0, 0.0
    s = (z - z0) / dz
    i = int(s)
    if i > n - 2:
        i = n - 2
    u = s - i
    p0 = tab[rv, i]
    p1 = tab[rv, i + 1]
    m0 = tab[rd, i] * dz
    m1 = tab[rd, i + 1] * dz
    u2 = u * u
    u3 = u2 * u
    f = (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 \
        + (-2 * u3 + 3 * u2) * p1 + (u3 - u2) * m1
    df = (6 * u2 - 6 * u) * p0 + (3 * u2 - 4 * u + 1) * m0 \
        + (-6 * u2 + 6 * u) * p1 + (3 * u2 - 2 * u) * m1
    d2f = (12 * u - 6) * p0 + (6 * u - 4) * m0 \
        + (-12 * u + 6) * p1 + (6 * u - 2) * m1
    return f, df / dz, d2f / (dz * dz)


@njit(cache=True)
def profiles_at(z, par, tab):
    B, dB, d2B = hermite_eval(z, par[5], par[6], tab, 0, 1)
    S, dS, d2S = hermite_eval(z, par[5], par[6], tab, 2, 3)
    return B, dB, d2B, S, dS, d2S


@njit(cache=True)
def _pw(x, e):
    """x**e with the common exponents done without a call to pow."""
    if e == 1.0:
        return x
    if e == 2.0:
        return x * x
    if e == 0.5:
        return math.sqrt(x)
    if e == 3.0:
        return x * x * x
    return x ** e


@njit(cache=True)
def critical_momentum(B, S, gamma):
    gm1 = gamma - 1.0
    rho_c = _pw(2.0 * B / ((gamma + 1.0) * S), 1.0 / gm1)
    return 2.0 * rho_c * rho_c * B * gm1 / (gamma + 1.0)


@njit(cache=True)
def critical_momentum_dz(B, dB, S, dS, gamma):
    gm1 = gamma - 1.0
    r = B / S
    q = _pw(r, 1.0 / gm1)
    k = _pw(2.0 / (gamma + 1.0), 1.0 / gm1)
    c = k * k * 2.0 / (gamma + 1.0)
    return c * ((gamma + 1.0) * q * q * dB - 2.0 * r * q * q * dS)


@njit(cache=True)
def density_from_momentum(t, B, S, gamma):
    """Subsonic root rho of 2 rho^2 (B - rho^(gamma-1) S) = t.

    Newton from the stagnation density decreases monotonically because the
    momentum function is concave and decreasing on the subsonic bracket.
    A bisection fallback guards round-off near the sonic point.
    """
    gm1 = gamma - 1.0
    rho_m = _pw(B / S, 1.0 / gm1)
    if t <= 0.0:
        return rho_m
    rho_c = rho_m * _pw(2.0 / (gamma + 1.0), 1.0 / gm1)
    lo = rho_c
    hi = rho_m
    rho = rho_m
    tol = 1e-15 * max(1.0, 2.0 * rho_c * rho_c * B * gm1 / (gamma + 1.0))
    for _ in range(80):
        rg = _pw(rho, gm1)
        f = 2.0 * rho * rho * (B - rg * S) - t
        # m decreases in rho on the subsonic bracket
        if f < 0.0:
            hi = min(hi, rho)
        else:
            lo = max(lo, rho)
        if abs(f) <= tol:
            return rho
        fp = 2.0 * rho * (2.0 * B - (gamma + 1.0) * rg * S)
        nxt = rho - f / fp if fp < 0.0 else 0.5 * (lo + hi)
        if not (lo <= nxt <= hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - rho) <= 4e-16 * rho:
            return nxt
        rho = nxt
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = 2.0 * mid * mid * (B - _pw(mid, gm1) * S) - t
        if f < 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4e-16 * hi:
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def cutoff(s):
    """Quintic smoothstep: 1 for s <= -1, 0 for s >= -1/2."""
    if s <= -1.0:
        return 1.0, 0.0, 0.0
    if s >= -0.5:
        return 0.0, 0.0, 0.0
    r = 2.0 * (s + 1.0)
    r2 = r * r
    w = 1.0 - r2 * r * (10.0 - 15.0 * r + 6.0 * r2)
    dw = -2.0 * 30.0 * r2 * (1.0 - r) * (1.0 - r)
    d2w = -4.0 * 60.0 * r * (1.0 - r) * (1.0 - 2.0 * r)
    return w, dw, d2w


@njit(cache=True)
def g_trunc(t, z, par, tab):
    """Truncated specific volume and its t and z partials."""
    gamma = par[0]
    eps = par[1]
    gstar = par[3]
    B, dB, d2B, S, dS, d2S = profiles_at(z, par, tab)
    tc = critical_momentum(B, S, gamma)
    if t >= tc - 0.5 * eps:
        return gstar, 0.0, 0.0
    gm1 = gamma - 1.0
    rho = density_from_momentum(t, B, S, gamma)
    rg = _pw(rho, gm1)
    dF = 2.0 * rho * (2.0 * B - (gamma + 1.0) * rg * S)
    g = 1.0 / rho
    g_t = -g * g / dF
    g_z = 2.0 * (dB - rg * dS) / dF
    if t <= tc - eps:
        return g, g_t, g_z
    w, dw, _ = cutoff((t - tc) / eps)
    tc_z = critical_momentum_dz(B, dB, S, dS, gamma)
    ge = g * w + (1.0 - w) * gstar
    ge_t = g_t * w + (g - gstar) * dw / eps
    ge_z = g_z * w + (gstar - g) * dw * tc_z / eps
    return ge, ge_t, ge_z


@njit(cache=True)
def _G_pure(rho, rg, B, S, gamma, c_off):
    return 2.0 * B * rho - (gamma + 1.0) / gamma * S * rho * rg - c_off


@njit(cache=True)
def _Gz_pure(rho, rg, dB, dS, gamma):
    return dB * rho - dS * rho * rg / gamma


@njit(cache=True)
def _pure_all(t, B, dB, d2B, S, dS, d2S, gamma, c_off):
    gm1 = gamma - 1.0
    rho = density_from_momentum(t, B, S, gamma)
    rg = _pw(rho, gm1)
    dF = 2.0 * rho * (2.0 * B - (gamma + 1.0) * rg * S)
    g = 1.0 / rho
    g_t = -g * g / dF
    drho_z = -2.0 * rho * rho * (dB - rg * dS) / dF
    G = _G_pure(rho, rg, B, S, gamma, c_off)
    Gz = _Gz_pure(rho, rg, dB, dS, gamma)
    Gzz = d2B * rho - d2S * rho * rg / gamma + (dB - dS * rg) * drho_z
    return G, 0.5 * g, Gz, 0.5 * g_t, -0.5 * drho_z * g * g, Gzz


@njit(cache=True)
def layer_direct(t, z, par, tab):
    """G and dG/dz for t >= t_c - eps by a Gauss panel over the blend layer."""
    gamma = par[0]
    eps = par[1]
    gstar = par[3]
    c_off = par[4]
    B, dB, d2B, S, dS, d2S = profiles_at(z, par, tab)
    tc = critical_momentum(B, S, gamma)
    a = tc - eps
    b = tc - 0.5 * eps
    rho_a = density_from_momentum(a, B, S, gamma)
    rg_a = _pw(rho_a, gamma - 1.0)
    G = _G_pure(rho_a, rg_a, B, S, gamma, c_off)
    Gz = _Gz_pure(rho_a, rg_a, dB, dS, gamma)
    top = min(t, b)
    half = 0.5 * (top - a)
    mid = 0.5 * (top + a)
    acc = 0.0
    accz = 0.0
    for k in range(_GL_X.shape[0]):
        ge, _, gez = g_trunc(mid + half * _GL_X[k], z, par, tab)
        acc += _GL_W[k] * ge
        accz += _GL_W[k] * gez
    G += 0.5 * half * acc
    Gz += 0.5 * half * accz
    if t > b:
        G += 0.5 * gstar * (t - b)
    return G, Gz


@njit(cache=True)
def layer_tables(z, par, tab):
    """Values and z-slopes of G(t_c(z) - eps/2, z) and of t_c(z) on a grid."""
    gamma = par[0]
    eps = par[1]
    gstar = par[3]
    n = z.shape[0]
    Gb = np.empty(n)
    dGb = np.empty(n)
    tcv = np.empty(n)
    dtc = np.empty(n)
    for k in range(n):
        B, dB, d2B, S, dS, d2S = profiles_at(z[k], par, tab)
        tc = critical_momentum(B, S, gamma)
        tcz = critical_momentum_dz(B, dB, S, dS, gamma)
        G, Gz = layer_direct(tc - 0.5 * eps, z[k], par, tab)
        Gb[k] = G
        dGb[k] = Gz + 0.5 * gstar * tcz
        tcv[k] = tc
        dtc[k] = tcz
    return Gb, dGb, tcv, dtc


@njit(cache=True)
def energy_density(t, z, par, tab):
    """Truncated energy density G and its derivatives.

    Returns (G, G_t, G_z, G_tt, G_tz, G_zz).  On the subsonic branch G is in
    closed form; beyond the blend layer it is affine in t with z-dependence
    read from precomputed tables; inside the thin layer a Gauss panel is
    used and G_zz is interpolated (it only serves as a curvature estimate).
    """
    gamma = par[0]
    eps = par[1]
    gstar = par[3]
    c_off = par[4]
    B, dB, d2B, S, dS, d2S = profiles_at(z, par, tab)
    tc = critical_momentum(B, S, gamma)
    a = tc - eps
    if t <= a:
        return _pure_all(t, B, dB, d2B, S, dS, d2S, gamma, c_off)
    b = tc - 0.5 * eps
    Gb, dGb, d2Gb = hermite_eval(z, par[5], par[6], tab, 4, 5)
    _, tcz, tczz = hermite_eval(z, par[5], par[6], tab, 6, 7)
    Gzz_b = d2Gb - 0.5 * gstar * tczz
    if t >= b:
        return (Gb + 0.5 * gstar * (t - b), 0.5 * gstar, dGb - 0.5 * gstar * tcz,
                0.0, 0.0, Gzz_b)
    G, Gz = layer_direct(t, z, par, tab)
    ge, ge_t, ge_z = g_trunc(t, z, par, tab)
    Gzz_a = _pure_all(a, B, dB, d2B, S, dS, d2S, gamma, c_off)[5]
    r = (t - a) / (b - a)
    return G, 0.5 * ge, Gz, 0.5 * ge_t, 0.5 * ge_z, (1.0 - r) * Gzz_a + r * Gzz_b


# vectorised wrappers --------------------------------------------------------

@njit(cache=True)
def vec_density(t, z, par, tab):
    out = np.empty(t.shape[0])
    for k in range(t.shape[0]):
        B, _, _, S, _, _ = profiles_at(z[k], par, tab)
        out[k] = density_from_momentum(t[k], B, S, par[0])
    return out


@njit(cache=True)
def vec_g_trunc(t, z, par, tab):
    n = t.shape[0]
    out = np.empty((3, n))
    for k in range(n):
        a, b, c = g_trunc(t[k], z[k], par, tab)
        out[0, k] = a
        out[1, k] = b
        out[2, k] = c
    return out


@njit(cache=True)
def vec_energy_density(t, z, par, tab):
    n = t.shape[0]
    out = np.empty((6, n))
    for k in range(n):
        r = energy_density(t[k], z[k], par, tab)
        for m in range(6):
            out[m, k] = r[m]
    return out


@njit(cache=True)
def vec_profiles(z, par, tab):
    n = z.shape[0]
    out = np.empty((6, n))
    for k in range(n):
        r = profiles_at(z[k], par, tab)
        for m in range(6):
            out[m, k] = r[m]
    return out


# ---------------------------------------------------------------------------
# cell energy
# ---------------------------------------------------------------------------
# Cell corners a=(j,i), b=(j,i+1), c=(j+1,i), d=(j+1,i+1).  The gradient at
# each corner is built from the two cell edges that meet there, so all four
# edge differences enter the energy and no checkerboard mode is free.

# d(dx)/d(node) for bottom and top edges, d(dy)/d(node) for left and right
_DXB = np.array([-1.0, 1.0, 0.0, 0.0])
_DXT = np.array([0.0, 0.0, -1.0, 1.0])
_DYL = np.array([-1.0, 0.0, 1.0, 0.0])
_DYR = np.array([0.0, -1.0, 0.0, 1.0])


@njit(cache=True)
def cell_energy(a, b, c, d, yc, hx, hy, lam2, par, tab):
    thr = par[2] * (1.0 - 1e-12)
    if a >= thr and b >= thr and c >= thr and d >= thr:
        # plug cell: G(0, Q) = 0 and no wet corner
        return 0.0
    dxb = (b - a) / hx
    dxt = (d - c) / hx
    dyl = (c - a) / hy
    dyr = (d - b) / hy
    zc = 0.25 * (a + b + c + d)
    iy2 = 1.0 / (yc * yc)
    e = energy_density((dxb * dxb + dyl * dyl) * iy2, zc, par, tab)[0]
    e += energy_density((dxb * dxb + dyr * dyr) * iy2, zc, par, tab)[0]
    e += energy_density((dxt * dxt + dyl * dyl) * iy2, zc, par, tab)[0]
    e += energy_density((dxt * dxt + dyr * dyr) * iy2, zc, par, tab)[0]
    e *= 0.25
    # wet indicator by the same corner rule
    wet = 0
    for v in (a, b, c, d):
        if v < thr:
            wet += 1
    e += 0.25 * wet * lam2
    return e * hx * hy * yc


@njit(cache=True)
def cell_smooth_derivs(vals, k, yc, hx, hy, par, tab):
    """First and second derivative of the smooth cell energy in node k."""
    a = vals[0]
    b = vals[1]
    c = vals[2]
    d = vals[3]
    dxb = (b - a) / hx
    dxt = (d - c) / hx
    dyl = (c - a) / hy
    dyr = (d - b) / hy
    zc = 0.25 * (a + b + c + d)
    iy2 = 1.0 / (yc * yc)
    g1 = 0.0
    g2 = 0.0
    for corner in range(4):
        if corner == 0:
            dx = dxb
            dy = dyl
            px = _DXB[k] / hx
            py = _DYL[k] / hy
        elif corner == 1:
            dx = dxb
            dy = dyr
            px = _DXB[k] / hx
            py = _DYR[k] / hy
        elif corner == 2:
            dx = dxt
            dy = dyl
            px = _DXT[k] / hx
            py = _DYL[k] / hy
        else:
            dx = dxt
            dy = dyr
            px = _DXT[k] / hx
            py = _DYR[k] / hy
        t = (dx * dx + dy * dy) * iy2
        G, Gt, Gz, Gtt, Gtz, Gzz = energy_density(t, zc, par, tab)
        dt = 2.0 * (dx * px + dy * py) * iy2
        d2t = 2.0 * (px * px + py * py) * iy2
        g1 += Gt * dt + 0.25 * Gz
        g2 += Gtt * dt * dt + 0.5 * Gtz * dt + Gzz / 16.0 + Gt * d2t
    w = 0.25 * hx * hy * yc
    return g1 * w, g2 * w


# ---------------------------------------------------------------------------
# lattice energy, gradient, Hessian
# ---------------------------------------------------------------------------

@njit(cache=True)
def total_energy(psi, cell_on, y, hx, hy, lam2, par, tab):
    ny, nx = psi.shape
    acc = np.zeros(ny - 1)
    for j in prange(ny - 1):
        yc = 0.5 * (y[j] + y[j + 1])
        s = 0.0
        for i in range(nx - 1):
            if cell_on[j, i]:
                s += cell_energy(psi[j, i], psi[j, i + 1], psi[j + 1, i],
                                 psi[j + 1, i + 1], yc, hx, hy, lam2, par, tab)
        acc[j] = s
    tot = 0.0
    for j in range(ny - 1):
        tot += acc[j]
    return tot


@njit(cache=True)
def cell_grad_hess(vals, yc, hx, hy, par, tab, grad, hess):
    """Gradient (4) and Hessian (4x4) of the smooth cell energy."""
    a = vals[0]
    b = vals[1]
    c = vals[2]
    d = vals[3]
    dxb = (b - a) / hx
    dxt = (d - c) / hx
    dyl = (c - a) / hy
    dyr = (d - b) / hy
    zc = 0.25 * (a + b + c + d)
    iy2 = 1.0 / (yc * yc)
    w = 0.25 * hx * hy * yc
    for m in range(4):
        grad[m] = 0.0
        for n in range(4):
            hess[m, n] = 0.0
    dt = np.empty(4)
    px = np.empty(4)
    py = np.empty(4)
    for corner in range(4):
        if corner == 0:
            dx = dxb
            dy = dyl
            for m in range(4):
                px[m] = _DXB[m] / hx
                py[m] = _DYL[m] / hy
        elif corner == 1:
            dx = dxb
            dy = dyr
            for m in range(4):
                px[m] = _DXB[m] / hx
                py[m] = _DYR[m] / hy
        elif corner == 2:
            dx = dxt
            dy = dyl
            for m in range(4):
                px[m] = _DXT[m] / hx
                py[m] = _DYL[m] / hy
        else:
            dx = dxt
            dy = dyr
            for m in range(4):
                px[m] = _DXT[m] / hx
                py[m] = _DYR[m] / hy
        t = (dx * dx + dy * dy) * iy2
        G, Gt, Gz, Gtt, Gtz, Gzz = energy_density(t, zc, par, tab)
        for m in range(4):
            dt[m] = 2.0 * (dx * px[m] + dy * py[m]) * iy2
        for m in range(4):
            grad[m] += w * (Gt * dt[m] + 0.25 * Gz)
            for n in range(4):
                hess[m, n] += w * (Gtt * dt[m] * dt[n]
                                   + 0.25 * Gtz * (dt[m] + dt[n])
                                   + Gzz / 16.0
                                   + 2.0 * Gt * (px[m] * px[n] + py[m] * py[n]) * iy2)


@njit(cache=True)
def assemble(psi, cell_on, y, hx, hy, par, tab, free_index, rows, cols):
    """Gradient over free nodes and Hessian entries on a fixed COO pattern.

    ``free_index`` maps nodes to their unknown number, or -1 when fixed.
    The COO triplets are written cell by cell, 16 per active cell, with
    entries touching fixed nodes left at zero.
    """
    ny, nx = psi.shape
    nfree = 0
    for j in range(ny):
        for i in range(nx):
            if free_index[j, i] >= 0:
                nfree += 1
    grad = np.zeros(nfree)
    data = np.zeros(rows.shape[0])
    # per-row cell offsets so rows can be processed in parallel
    offs = np.zeros(ny, dtype=np.int64)
    cnt = 0
    for j in range(ny - 1):
        offs[j] = cnt
        for i in range(nx - 1):
            if cell_on[j, i]:
                cnt += 1
    gparts = np.zeros((ny - 1, 2, nx))
    for j in prange(ny - 1):
        yc = 0.5 * (y[j] + y[j + 1])
        vals = np.empty(4)
        g = np.empty(4)
        h = np.empty((4, 4))
        idx = np.empty(4, dtype=np.int64)
        slot = offs[j]
        for i in range(nx - 1):
            if not cell_on[j, i]:
                continue
            vals[0] = psi[j, i]
            vals[1] = psi[j, i + 1]
            vals[2] = psi[j + 1, i]
            vals[3] = psi[j + 1, i + 1]
            idx[0] = free_index[j, i]
            idx[1] = free_index[j, i + 1]
            idx[2] = free_index[j + 1, i]
            idx[3] = free_index[j + 1, i + 1]
            if idx[0] < 0 and idx[1] < 0 and idx[2] < 0 and idx[3] < 0:
                slot += 1
                continue
            cell_grad_hess(vals, yc, hx, hy, par, tab, g, h)
            gparts[j, 0, i] += g[0]
            gparts[j, 0, i + 1] += g[1]
            gparts[j, 1, i] += g[2]
            gparts[j, 1, i + 1] += g[3]
            base = 16 * slot
            for m in range(4):
                for n in range(4):
                    if idx[m] >= 0 and idx[n] >= 0:
                        data[base + 4 * m + n] = h[m, n]
            slot += 1
    # deterministic serial reduction of the gradient
    for j in range(ny - 1):
        for i in range(nx):
            k0 = free_index[j, i]
            if k0 >= 0:
                grad[k0] += gparts[j, 0, i]
            k1 = free_index[j + 1, i]
            if k1 >= 0:
                grad[k1] += gparts[j, 1, i]
    return grad, data


@njit(cache=True)
def coo_pattern(cell_on, free_index):
    ny1, nx1 = cell_on.shape
    ncell = 0
    for j in range(ny1):
        for i in range(nx1):
            if cell_on[j, i]:
                ncell += 1
    rows = np.zeros(16 * ncell, dtype=np.int64)
    cols = np.zeros(16 * ncell, dtype=np.int64)
    slot = 0
    idx = np.empty(4, dtype=np.int64)
    for j in range(ny1):
        for i in range(nx1):
            if not cell_on[j, i]:
                continue
            idx[0] = free_index[j, i]
            idx[1] = free_index[j, i + 1]
            idx[2] = free_index[j + 1, i]
            idx[3] = free_index[j + 1, i + 1]
            base = 16 * slot
            for m in range(4):
                for n in range(4):
                    rows[base + 4 * m + n] = max(idx[m], 0)
                    cols[base + 4 * m + n] = max(idx[n], 0)
            slot += 1
    return rows, cols


# ---------------------------------------------------------------------------
# nodal relaxation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _local_energy(psi, j, i, v, cell_on, y, hx, hy, lam2, par, tab):
    old = psi[j, i]
    psi[j, i] = v
    e = 0.0
    for dj in range(-1, 1):
        for di in range(-1, 1):
            cj = j + dj
            ci = i + di
            if cell_on[cj, ci]:
                yc = 0.5 * (y[cj] + y[cj + 1])
                e += cell_energy(psi[cj, ci], psi[cj, ci + 1], psi[cj + 1, ci],
                                 psi[cj + 1, ci + 1], yc, hx, hy, lam2, par, tab)
    psi[j, i] = old
    return e


@njit(cache=True)
def _local_derivs(psi, j, i, v, cell_on, y, hx, hy, par, tab):
    old = psi[j, i]
    psi[j, i] = v
    g1 = 0.0
    g2 = 0.0
    vals = np.empty(4)
    for dj in range(-1, 1):
        for di in range(-1, 1):
            cj = j + dj
            ci = i + di
            if cell_on[cj, ci]:
                yc = 0.5 * (y[cj] + y[cj + 1])
                vals[0] = psi[cj, ci]
                vals[1] = psi[cj, ci + 1]
                vals[2] = psi[cj + 1, ci]
                vals[3] = psi[cj + 1, ci + 1]
                k = (-dj) * 2 + (-di)
                a, b = cell_smooth_derivs(vals, k, yc, hx, hy, par, tab)
                g1 += a
                g2 += b
    psi[j, i] = old
    return g1, g2


@njit(cache=True)
def relax_node(psi, j, i, cell_on, y, hx, hy, lam2, par, tab):
    """Minimise the local energy in psi[j, i] over [0, Q].

    The smooth part is minimised by safeguarded Newton on its derivative.
    The plug value Q, which drops the node's share of the wet indicator, is
    then compared against the smooth minimiser.
    """
    Q = par[2]
    lo = 0.0
    hi = Q
    v = min(max(psi[j, i], lo), hi)
    for it in range(60):
        g1, g2 = _local_derivs(psi, j, i, v, cell_on, y, hx, hy, par, tab)
        if g1 > 0.0:
            hi = v
            if v == 0.0:
                break
        else:
            lo = v
            if v == Q:
                break
        if g2 > 0.0:
            nv = v - g1 / g2
        else:
            nv = 0.5 * (lo + hi)
        if nv <= lo or nv >= hi:
            # a Newton step out of the bracket probes the bracket end first
            if nv <= 0.0 and lo == 0.0 and v != 0.0:
                nv = 0.0
            elif nv >= Q and hi == Q and v != Q:
                nv = Q
            else:
                nv = 0.5 * (lo + hi)
        if abs(nv - v) <= 1e-14 * Q:
            v = nv
            break
        v = nv
    if v >= Q:
        return Q
    # the plug value switches off this node's share of the wet indicator
    gains = lam2 > 0.0
    if gains:
        e_s = _local_energy(psi, j, i, v, cell_on, y, hx, hy, lam2, par, tab)
        e_q = _local_energy(psi, j, i, Q, cell_on, y, hx, hy, lam2, par, tab)
        if e_q <= e_s:
            return Q
    return v


@njit(parallel=True, cache=True)
def gs_sweep(psi, color_nodes, color_ptr, cell_on, y, hx, hy, lam2, par, tab):
    """One four-colour Gauss-Seidel sweep; returns the max nodal change.

    Nodes of one colour share no cell, so they are updated concurrently and
    the result does not depend on the thread count.
    """
    change = 0.0
    for c in range(4):
        start = color_ptr[c]
        stop = color_ptr[c + 1]
        newv = np.empty(stop - start)
        for k in prange(stop - start):
            j = color_nodes[start + k, 0]
            i = color_nodes[start + k, 1]
            newv[k] = relax_node(psi, j, i, cell_on, y, hx, hy, lam2, par, tab)
        for k in range(stop - start):
            j = color_nodes[start + k, 0]
            i = color_nodes[start + k, 1]
            dv = abs(newv[k] - psi[j, i])
            if dv > change:
                change = dv
            psi[j, i] = newv[k]
    return change


@njit(cache=True)
def local_energy(psi, j, i, v, cell_on, y, hx, hy, lam2, par, tab):
    return _local_energy(psi, j, i, v, cell_on, y, hx, hy, lam2, par, tab)
