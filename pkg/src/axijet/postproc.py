"""Physical fields, downstream state, far-field checks and export."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import interpolate

from ._kernels import AXIS, INLET, INTERIOR, OUTLET
from .geometry import TruncatedDomain
from .solver import StreamField
from .thermo import ClosureError, GasClosure, critical_quantities, invert_density
from .upstream import UpstreamProfiles, UpstreamState


class PostprocError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# field recovery
# ---------------------------------------------------------------------------

@dataclass
class FlowSolution:
    """Nodal fields on the wet nodes (psi < Q) of the grid.

    Arrays have the grid shape and hold NaN off the wet set.
    """

    domain: TruncatedDomain
    psi: np.ndarray
    wet: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    mach: np.ndarray
    omega: np.ndarray
    bernoulli_residual: float
    max_v_downstream: float
    boundary: object = None
    downstream: object = None
    extras: dict = field(default_factory=dict)


def nodal_gradient(psi, domain: TruncatedDomain):
    """Average of the centre gradients of the active cells around each node."""
    on = domain.cell_on.astype(float)
    dx = 0.5 * (psi[:-1, 1:] - psi[:-1, :-1] + psi[1:, 1:] - psi[1:, :-1]) / domain.hx
    dy = 0.5 * (psi[1:, :-1] - psi[:-1, :-1] + psi[1:, 1:] - psi[:-1, 1:]) / domain.hy
    gx = np.zeros_like(psi)
    gy = np.zeros_like(psi)
    w = np.zeros_like(psi)
    for sj, si in ((0, 0), (0, 1), (1, 0), (1, 1)):
        sl = (slice(sj, sj + on.shape[0]), slice(si, si + on.shape[1]))
        gx[sl] += on * dx
        gy[sl] += on * dy
        w[sl] += on
    with np.errstate(invalid="ignore", divide="ignore"):
        return gx / w, gy / w


def wet_nodes(field: StreamField, domain: TruncatedDomain):
    tags = domain.tags
    flow = (tags == INTERIOR) | (tags == AXIS) | (tags == INLET) | (tags == OUTLET)
    return flow & (field.psi < field.Q * (1.0 - 1e-12))


def recover_fields(field: StreamField, domain: TruncatedDomain, gas: GasClosure,
                   check_subsonic=True) -> FlowSolution:
    """Density, velocity, pressure, Mach number and vorticity from psi."""
    psi = field.psi
    wet = wet_nodes(field, domain)
    gx, gy = nodal_gradient(psi, domain)
    y = np.broadcast_to(domain.y[:, None], psi.shape)
    # on the axis psi ~ c y^2, so psi_y / y -> 2 psi(x, hy) / hy^2
    qy = np.empty_like(psi)
    qx = np.empty_like(psi)
    with np.errstate(invalid="ignore", divide="ignore"):
        qy[1:] = gy[1:] / y[1:]
        qx[1:] = gx[1:] / y[1:]
    qy[0] = 2.0 * psi[1] / domain.hy**2
    qx[0] = 0.0
    t = qx**2 + qy**2
    z = np.clip(psi, 0.0, field.Q)
    tw, zw = t[wet], z[wet]
    if not np.all(np.isfinite(tw)):
        raise PostprocError("gradient undefined at a wet node")
    tc = critical_quantities(zw, gas).t_crit
    if check_subsonic and np.any(tw > tc * (1.0 - 1e-9)):
        k = int(np.argmax(tw / tc))
        j, i = np.argwhere(wet)[k]
        raise PostprocError(f"sonic or supersonic node at x={domain.x[i]:.6g}, y={domain.y[j]:.6g}")
    try:
        g = invert_density(np.minimum(tw, tc * (1.0 - 1e-9)), zw, gas)
    except ClosureError as exc:  # pragma: no cover - guarded above
        raise PostprocError(str(exc)) from exc
    prof = gas.profiles(zw)
    B, dB, S, dS = prof[0], prof[1], prof[3], prof[4]
    gam = gas.gamma
    rho = 1.0 / g
    u = g * qy[wet]
    v = -g * qx[wet]
    rg = rho ** (gam - 1.0)
    p = (gam - 1.0) * S * rho * rg / gam
    c2 = (gam - 1.0) * S * rg
    mach = np.sqrt((u * u + v * v) / c2)
    yw = y[wet]
    omega = -yw * rho * dB + yw * rho * rg * dS / gam
    bern = 0.5 * (u * u + v * v) + rg * S - B

    def full(vals):
        out = np.full(psi.shape, np.nan)
        out[wet] = vals
        return out

    sol = FlowSolution(domain, psi, wet, full(rho), full(u), full(v), full(p), full(mach),
                       full(omega), float(np.abs(bern).max()) if bern.size else 0.0, 0.0)
    # sup of v over the last tenth of the columns, reported only
    ncol = max(1, int(round(0.1 * psi.shape[1])))
    tail = sol.v[:, -ncol:]
    sol.max_v_downstream = float(np.nanmax(tail)) if np.any(np.isfinite(tail)) else 0.0
    return sol


def column_mass_flux(field: StreamField, domain: TruncatedDomain, consistent=True):
    """Integral of y rho u over each wet column (x, flux) for columns with a wet node.

    The consistent form integrates y rho u = psi_y on the vertical edges and
    telescopes to psi at the top of the wet column.  The nodal form applies
    the trapezoid rule to the recovered nodal y rho u up to the first node
    at Q.
    """
    psi = field.psi
    Q = field.Q
    tags = domain.tags
    flow = (tags == INTERIOR) | (tags == AXIS) | (tags == INLET) | (tags == OUTLET)
    xs, fl = [], []
    if not consistent:
        gx, gy = nodal_gradient(psi, domain)
        gy[0] = 0.0
    for i in range(psi.shape[1]):
        col = flow[:, i] & (psi[:, i] < Q)
        if not col[0]:
            continue
        # top of the wet column: the first node at Q or off the flow region
        top = int(np.argmin(col)) if not col.all() else psi.shape[0] - 1
        if consistent:
            fl.append(float(np.sum(np.diff(psi[: top + 1, i]))))
        else:
            fl.append(float(np.trapezoid(gy[: top + 1, i], domain.y[: top + 1])))
        xs.append(domain.x[i])
    return np.asarray(xs), np.asarray(fl)


# ---------------------------------------------------------------------------
# outer pressure and downstream state
# ---------------------------------------------------------------------------

def _wall_values(gas: GasClosure, profiles: Optional[UpstreamProfiles]):
    if profiles is not None:
        H = np.array([profiles.Hbar])
        return float(profiles.B(H)[0][0]), float(profiles.S(H)[0][0])
    p = gas.profiles(np.array([gas.Q]))
    return float(p[0, 0]), float(p[3, 0])


def outer_pressure(Lambda, gas: GasClosure, profiles: Optional[UpstreamProfiles] = None):
    """(rho0, p_out) on the free boundary where the momentum is Lambda^2."""
    Lambda = float(Lambda)
    gam = gas.gamma
    BH, SH = _wall_values(gas, profiles)
    rho_m = (BH / SH) ** (1.0 / (gam - 1.0))
    tc = (gam - 1.0) * (2.0 * BH / (gam + 1.0)) ** ((gam + 1.0) / (gam - 1.0)) \
        * SH ** (-2.0 / (gam - 1.0))
    if Lambda < 0.0 or Lambda**2 >= tc:
        raise PostprocError(f"Lambda={Lambda} at or above the critical momentum")
    if Lambda == 0.0:
        rho0 = rho_m
    else:
        gc = GasClosure.constant(gam, BH, SH, gas.Q, min(gas.eps, 0.2 * min(tc, 1.0)))
        rho0 = float(1.0 / invert_density(Lambda**2, gas.Q, gc))
    back = rho0 * np.sqrt(max(2.0 * BH - 2.0 * rho0 ** (gam - 1.0) * SH, 0.0))
    if abs(back - Lambda) > 1e-10 * max(1.0, Lambda):
        raise PostprocError("outer pressure inversion failed its forward check")
    p_out = (gam - 1.0) * SH * rho0**gam / gam
    return float(rho0), float(p_out)


@dataclass
class DownstreamState:
    Lambda: float
    p_out: float
    rho0: float
    H_low: float
    y_up: np.ndarray  # upstream heights
    theta: np.ndarray  # theta(y_up)
    rho_d: np.ndarray  # downstream density on the streamline from y_up
    u_d: np.ndarray
    mass_flux: float  # int_0^H_low s rho u ds, integrated in s
    theta_residual: float  # max |psi_down(theta(y)) - psibar(y)| / Q
    _y_of_s: object = field(repr=False, default=None)
    _psi_of_s: object = field(repr=False, default=None)

    def rho(self, s):
        return np.interp(self._y_of_s(np.clip(s, 0.0, self.H_low)), self.y_up, self.rho_d)

    def u(self, s):
        return np.interp(self._y_of_s(np.clip(s, 0.0, self.H_low)), self.y_up, self.u_d)

    def psi(self, s):
        """Downstream stream function int_0^s r rho u dr, equal to Q above H_low."""
        s = np.asarray(s, float)
        return np.where(s >= self.H_low, self._psi_of_s(self.H_low),
                        self._psi_of_s(np.clip(s, 0.0, self.H_low)))


def downstream_state(Lambda, gas: GasClosure, profiles: UpstreamProfiles,
                     state: UpstreamState, n_steps=4096) -> DownstreamState:
    """Far-downstream jet: constant pressure, streamlines mapped by theta.

    theta^2 is integrated in y by classical RK4, d(theta^2)/dy =
    2 y (rho u)_up(y) / (rho u)_down(y), where the downstream flux density on
    the streamline from height y depends on y only.  The inverse map and the
    downstream stream function are cubic Hermite interpolants in s.
    """
    rho0, p_out = outer_pressure(Lambda, gas, profiles)
    H = profiles.Hbar
    gam = profiles.gamma
    rad_fac = (gam * p_out / (gam - 1.0)) ** ((gam - 1.0) / gam)

    def down(yy):
        yy = np.asarray(yy, float)
        B = profiles.B(yy)[0]
        S = profiles.S(yy)[0]
        rad = 2.0 * (B - rad_fac * S ** (1.0 / gam))
        if np.any(rad <= 0.0):
            raise PostprocError("downstream speed radicand not positive for this Lambda")
        rho = (gam * p_out / ((gam - 1.0) * S)) ** (1.0 / gam)
        return rho, np.sqrt(rad)

    def ratio(yy):
        r, u = down(yy)
        return state.mass_flux_density(yy) / (r * u)

    hstep = H / n_steps
    ys = hstep * np.arange(n_steps + 1)
    # the right-hand side does not involve theta, so the RK4 stages reduce to
    # evaluations at the step ends and midpoint
    f0 = 2.0 * ys[:-1] * ratio(ys[:-1])
    ym = ys[:-1] + 0.5 * hstep
    fm = 2.0 * ym * ratio(ym)
    f1 = 2.0 * ys[1:] * ratio(ys[1:])
    w = np.concatenate([[0.0], np.cumsum(hstep / 6.0 * (f0 + 4.0 * fm + f1))])
    theta = np.sqrt(w)
    rho_d, u_d = down(ys)
    H_low = float(theta[-1])
    # dtheta/dy = y ratio / theta, with limit sqrt(ratio(0)) on the axis
    rat = ratio(ys)
    dth = np.empty_like(ys)
    dth[0] = np.sqrt(rat[0])
    dth[1:] = ys[1:] * rat[1:] / theta[1:]
    y_of_s = interpolate.CubicHermiteSpline(theta, ys, 1.0 / dth)
    # psi_down(s) on the theta knots by 8-point Gauss panels in s
    xg, wg = np.polynomial.legendre.leggauss(8)
    mid = 0.5 * (theta[1:] + theta[:-1])
    half = 0.5 * (theta[1:] - theta[:-1])
    pts = mid[:, None] + half[:, None] * xg[None, :]
    r, u = down(y_of_s(pts.ravel()))
    seg = half * ((pts * (r * u).reshape(pts.shape)) @ wg)
    psi_k = np.concatenate([[0.0], np.cumsum(seg)])
    psi_of_s = interpolate.CubicHermiteSpline(theta, psi_k, theta * rho_d * u_d)
    mflux = float(psi_k[-1])
    resid = float(np.abs(psi_of_s(theta) - state.psibar(ys)).max()) / state.Q
    return DownstreamState(float(Lambda), p_out, rho0, H_low, ys, theta, rho_d, u_d, mflux,
                           resid, y_of_s, psi_of_s)


# ---------------------------------------------------------------------------
# far field
# ---------------------------------------------------------------------------

def farfield_residuals(field: StreamField, domain: TruncatedDomain, state: UpstreamState,
                       down: DownstreamState, frac=0.1):
    """Sup of |psi - psibar| on the leftmost and |psi - psi_down| on the rightmost columns."""
    psi = field.psi
    Q = field.Q
    nx = psi.shape[1]
    ncol = max(1, int(round(frac * nx)))
    flow = (domain.tags == INTERIOR)
    up = 0.0
    for i in range(ncol):
        col = flow[:, i]
        if col.any():
            yy = domain.y[col]
            up = max(up, float(np.abs(psi[col, i] - state.psibar(yy)).max()))
    dn = 0.0
    for i in range(nx - ncol, nx):
        col = flow[:, i] & (domain.y < down.H_low)
        if col.any():
            yy = domain.y[col]
            dn = max(dn, float(np.abs(psi[col, i] - down.psi(yy)).max()))
    return up / Q, dn / Q


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

SUMMARY_KEYS = ("Q", "Lambda", "lambda_eps", "pbar", "p_out", "H_low", "kappa", "kappa0",
                "subsonic_margin", "upstream_residual", "downstream_residual")

FIELD_COLUMNS = ("x", "y", "psi", "rho", "u", "v", "p", "Mach", "omega")


def _fmt(v):
    return "%.17g" % v


def _write_text(path, text):
    """Write through a temporary file and rename, so readers never see partial output."""
    tmp = f"{path}.partial"
    with open(tmp, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def fields_csv(sol: FlowSolution) -> str:
    d = sol.domain
    lines = [",".join(FIELD_COLUMNS)]
    jj, ii = np.nonzero(sol.wet)
    for j, i in zip(jj, ii):
        vals = (d.x[i], d.y[j], sol.psi[j, i], sol.rho[j, i], sol.u[j, i], sol.v[j, i],
                sol.p[j, i], sol.mach[j, i], sol.omega[j, i])
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def read_fields_csv(path):
    """Columns of a fields.csv file as a dict of float arrays."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [list(map(float, ln.split(","))) for ln in fh if ln.strip()]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {k: arr[:, n] for n, k in enumerate(header)}


def export(sol: FlowSolution, outdir, summary: dict):
    """Write fields.csv, boundary.csv, boundary_tail.csv, summary.txt and plot data."""
    os.makedirs(outdir, exist_ok=True)
    missing = [k for k in SUMMARY_KEYS if k not in summary]
    if missing:
        raise PostprocError(f"summary lacks keys {missing}")
    _write_text(os.path.join(outdir, "fields.csv"), fields_csv(sol))
    fb = sol.boundary
    rows = ["y,Upsilon"]
    tail = ["x,f"]
    if fb is not None:
        for yv, xv in zip(fb.y, fb.upsilon):
            if np.isfinite(xv):
                rows.append(f"{_fmt(yv)},{_fmt(xv)}")
        for xv, fv in zip(fb.x_tail, fb.f_tail):
            tail.append(f"{_fmt(xv)},{_fmt(fv)}")
    _write_text(os.path.join(outdir, "boundary.csv"), "\n".join(rows) + "\n")
    _write_text(os.path.join(outdir, "boundary_tail.csv"), "\n".join(tail) + "\n")
    text = "".join(f"{k}={_fmt(float(summary[k]))}\n" for k in SUMMARY_KEYS)
    _write_text(os.path.join(outdir, "summary.txt"), text)
    # columnar plot data: psi on the grid (NaN outside the flow) and Upsilon
    d = sol.domain
    grid = ["# x y psi"]
    inside = d.tags != 0
    for j in range(d.shape[0]):
        for i in range(d.shape[1]):
            val = sol.psi[j, i] if inside[j, i] else np.nan
            grid.append(f"{_fmt(d.x[i])} {_fmt(d.y[j])} {_fmt(val)}")
        grid.append("")
    _write_text(os.path.join(outdir, "psi_grid.dat"), "\n".join(grid) + "\n")
    _write_text(os.path.join(outdir, "upsilon.dat"),
                "# y Upsilon\n" + "".join(ln.replace(",", " ") + "\n" for ln in rows[1:]))
    return outdir


def read_summary(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if "=" in ln:
                k, v = ln.strip().split("=", 1)
                out[k] = float(v)
    return out
