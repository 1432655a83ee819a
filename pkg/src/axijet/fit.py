"""Free-boundary extraction, the fit of Lambda and continuation in the truncation."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from ._kernels import INTERIOR, OUTLET
from .geometry import (BoundaryData, GeometryError, Nozzle, TruncatedDomain, boundary_data,
                       build_grid, h_star)
from .solver import (SolveReport, StreamField, cell_gradient, initial_guess, minimize,
                     prolong)
from .thermo import GasClosure


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# free boundary
# ---------------------------------------------------------------------------

@dataclass
class FreeBoundary:
    y: np.ndarray  # row heights in (0, 1)
    upsilon: np.ndarray  # x of the free boundary per row, +inf without plug
    x_tail: np.ndarray  # columns where the boundary is a graph over x
    f_tail: np.ndarray
    H_lower: float
    max_jump: float  # largest |Upsilon| jump between adjacent finite rows
    rows: np.ndarray = field(repr=False, default=None)
    cols: np.ndarray = field(repr=False, default=None)  # first plug column per row, -1 if none

    @property
    def empty(self):
        return not np.any(np.isfinite(self.upsilon))

    def upsilon_top(self):
        """Upsilon on the top row below the lid."""
        return float(self.upsilon[-1]) if self.upsilon.size else math.inf


def _flow_row_mask(domain: TruncatedDomain):
    t = domain.tags
    return (t == INTERIOR) | (t == OUTLET)


def extract_free_boundary(field: StreamField, domain: TruncatedDomain) -> FreeBoundary:
    """Per row below the lid, the x where psi reaches Q along the row.

    The crossing is extrapolated from the wet nodes before the first plug
    node and clamped to the cell between the last wet node and the plug node.
    """
    psi = field.psi
    Q = field.Q
    thr = Q * (1.0 - 1e-12)
    flow = _flow_row_mask(domain)
    rows = np.arange(1, domain.j_lid)
    ups = np.full(rows.size, np.inf)
    cols = np.full(rows.size, -1, dtype=np.int64)
    hx = domain.hx
    for n, j in enumerate(rows):
        ii = np.nonzero(flow[j])[0]
        if ii.size == 0:
            continue
        at = np.nonzero(psi[j, ii] >= thr)[0]
        if at.size == 0:
            continue
        i = int(ii[at[0]])
        cols[n] = i
        x_plug = domain.x[i]
        back = [psi[j, i - m] for m in (3, 2, 1) if i - m >= 0 and flow[j, i - m]]
        ups[n] = domain.x[i - 1] + _crossing(back, hx, Q) if back else x_plug
    # outlet column: rows where the plug starts only at the outlet must form one band
    at_outlet = cols == psi.shape[1] - 1
    if np.any(at_outlet):
        bands = int(np.sum(np.diff(np.concatenate([[0], at_outlet.astype(int)])) == 1))
        if bands > 1:
            raise FitError("free boundary meets the outlet in several bands; R is too small")
    fin = np.isfinite(ups)
    jumps = np.abs(np.diff(ups[fin])) if fin.sum() > 1 else np.zeros(0)
    max_jump = float(jumps.max()) if jumps.size else 0.0
    xt, ft = _tail_graph(field, domain)
    if ft.size:
        H_low = float(ft.min())
    elif np.any(fin):
        H_low = float(domain.y[rows[fin]].min())
    else:
        H_low = math.inf
    return FreeBoundary(domain.y[rows], ups, xt, ft, H_low, max_jump, rows, cols)


def column_level_height(psi, domain: TruncatedDomain, i, Q):
    """Height in column i where psi first reaches Q, extrapolated from the wet nodes below."""
    col = psi[: domain.j_lid + 1, i]
    at = np.nonzero(col >= Q * (1.0 - 1e-12))[0]
    if at.size == 0:
        return math.inf
    k = int(at[0])
    if k < 1:
        return float(domain.y[k])
    back = [col[k - m] for m in (3, 2, 1) if k - m >= 0]
    return float(domain.y[k - 1] + _crossing(back, domain.hy, Q))


def _crossing(vals, h, Q):
    """Distance past the last of equally spaced wet values where psi reaches Q.

    Quadratic extrapolation through the last three values, falling back to
    linear, clamped to [0, h].
    """
    v = list(vals)
    last = v[-1]
    if len(v) >= 3:
        v0, v1, v2 = v[-3:]
        b = (3.0 * v2 - 4.0 * v1 + v0) / (2.0 * h)
        c = (v2 - 2.0 * v1 + v0) / (2.0 * h * h)
        roots = np.roots([c, b, last - Q]) if abs(c) > 1e-300 else np.array([(Q - last) / b]
                                                                            if b else [])
        roots = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-14 and r.real >= 0.0]
        if roots:
            return float(min(min(roots), h))
    if len(v) >= 2 and v[-1] > v[-2]:
        return float(min((Q - last) / ((v[-1] - v[-2]) / h), h))
    return float(h)


def _tail_graph(field: StreamField, domain: TruncatedDomain):
    """Free boundary as a graph y = f(x) over the columns right of the orifice.

    Only columns where the graph is flatter than 45 degrees are kept.
    """
    xs, fs = [], []
    for i in range(domain.i_orifice + 1, domain.shape[1]):
        fs.append(column_level_height(field.psi, domain, i, field.Q))
        xs.append(domain.x[i])
    xs = np.asarray(xs)
    fs = np.asarray(fs)
    ok = np.isfinite(fs) & (fs < 1.0)
    if fs.size > 1:
        slope = np.abs(np.gradient(np.where(np.isfinite(fs), fs, 1.0), xs))
        ok &= slope <= 1.0
    return xs[ok], fs[ok]


def check_free_boundary_condition(field: StreamField, boundary: FreeBoundary,
                                  domain: TruncatedDomain, y_range=None, x_range=None):
    """Max of ||grad psi| / y - Lambda| one cell inside the free boundary.

    Samples are the fully wet cells with a corner next to an interior plug
    node, evaluated with the centre gradient at the cell centre.  By default
    cells within 0.05 of the orifice height and of the lowest plug height,
    and the last cell column before the outlet, are left out since the
    boundary has corners there.  Returns (max deviation, samples) where
    samples has columns x, y, speed.
    """
    if boundary.empty:
        return 0.0, np.zeros((0, 3))
    psi = field.psi
    Q = field.Q
    if y_range is None:
        y_range = (boundary.H_lower + 0.05, 1.0 - 0.05)
    if x_range is None:
        x_range = (domain.x[0], domain.R - domain.hx)
    wet = psi < Q * (1.0 - 1e-12)
    plug = domain.interior & ~wet
    near = ndimage.binary_dilation(plug, ndimage.generate_binary_structure(2, 1))
    cell_wet = wet[:-1, :-1] & wet[:-1, 1:] & wet[1:, :-1] & wet[1:, 1:] & domain.cell_on
    touch = near[:-1, :-1] | near[:-1, 1:] | near[1:, :-1] | near[1:, 1:]
    xc = 0.5 * (domain.x[1:] + domain.x[:-1])
    yc = 0.5 * (domain.y[1:] + domain.y[:-1])
    sel = cell_wet & touch
    sel &= ((yc > y_range[0]) & (yc < y_range[1]))[:, None]
    sel &= ((xc > x_range[0]) & (xc < x_range[1]))[None, :]
    gx, gy = cell_gradient(psi, domain)
    jj, ii = np.nonzero(sel)
    speed = np.hypot(gx[jj, ii], gy[jj, ii]) / yc[jj]
    s = np.column_stack([xc[ii], yc[jj], speed])
    if s.size == 0:
        return 0.0, s
    return float(np.abs(speed - field.Lambda).max()), s


# ---------------------------------------------------------------------------
# single solves with grid sequencing
# ---------------------------------------------------------------------------

@dataclass
class JetSolve:
    Lambda: float
    field: StreamField
    report: SolveReport
    boundary: FreeBoundary
    phi: float  # Upsilon on the top row below the lid


def _coarse_chain(nozzle: Nozzle, domain: TruncatedDomain, min_rows=16):
    """Grids of the same box with spacings 2^k h, coarsest first, ending at domain."""
    chain = [domain]
    hx, hy = domain.hx, domain.hy
    while True:
        hx2, hy2 = 2.0 * hx, 2.0 * hy
        if round(1.0 / hy2) < min_rows:
            break
        try:
            d = build_grid(nozzle, domain.mu, domain.R, hx2, hy2)
        except GeometryError:
            break
        chain.append(d)
        hx, hy = hx2, hy2
    return chain[::-1]


def solve_jet(nozzle: Nozzle, domain: TruncatedDomain, gas: GasClosure, Lambda: float,
              psi0=None, tol=1e-10, threads=None, sequence=True, start_from=None,
              **kw) -> JetSolve:
    """Minimise at one Lambda; cold starts are sequenced from coarser grids.

    ``start_from`` = (psi, coarse domain) starts the sequence from a
    solution on one of the coarser grids of the same box.
    """
    Q = gas.Q
    data = boundary_data(domain, Q, Lambda)
    if psi0 is None and sequence:
        chain = _coarse_chain(nozzle, domain)
        psi = prev = None
        if start_from is not None:
            psi, prev = start_from
            chain = [d for d in chain if d.hy < prev.hy - 1e-15]
        for d in chain[:-1]:
            bd = boundary_data(d, Q, Lambda)
            start = prolong(psi, prev, d, bd) if psi is not None else None
            f, _ = minimize(d, bd, gas, psi0=start, tol=tol, threads=threads, **kw)
            psi, prev = f.psi, d
        if psi is not None:
            psi0 = prolong(psi, prev, domain, data)
    f, rep = minimize(domain, data, gas, psi0=psi0, tol=tol, threads=threads, **kw)
    fb = extract_free_boundary(f, domain)
    return JetSolve(float(Lambda), f, rep, fb, fb.upsilon_top())


# ---------------------------------------------------------------------------
# fit of Lambda
# ---------------------------------------------------------------------------

FIT_LOG_COLUMNS = ("Lambda", "Upsilon_top", "energy", "sweeps", "newton_steps", "seconds")


@dataclass
class FitResult:
    Lambda_star: float
    fit_residual: float
    bracket: tuple
    history: list  # (Lambda, phi, energy, sweeps, newton_steps, seconds) per trial
    brackets: list  # bracket after each step
    solve: Optional[JetSolve] = None
    endpoint_signs: tuple = (0, 0)
    converged: bool = False
    monotone_violations: list = field(default_factory=list)
    table: list = field(default_factory=list)  # continuation rows
    coarse: Optional["FitResult"] = None  # pre-bracketing fit on a coarser grid

    def log_csv(self):
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIT_LOG_COLUMNS)
        for row in self.history:
            w.writerow(["%.17g" % v for v in row])
        return buf.getvalue()


def _sign(phi):
    return 1 if phi > 0.0 else (-1 if phi < 0.0 else 0)


def bisect_fit(phi_of: Callable[[float], float], lo: float, hi: float, tol_phi: float,
               tol_width: float, max_expand=6, factor=2.0, mode="geometric"):
    """Bracket and bisect phi(Lambda) = 0 with phi > 0 at low and phi < 0 at high Lambda.

    Returns (Lambda, phi, brackets, endpoint signs, converged, evaluations).
    """
    evals = {}

    def phi(L):
        if L not in evals:
            evals[L] = phi_of(L)
        return evals[L]

    f_lo, f_hi = phi(lo), phi(hi)
    expand = 0
    while not (f_lo > 0.0 and f_hi < 0.0):
        if expand >= max_expand:
            raise FitError(f"no sign change of Upsilon(1) in [{lo:.6g}, {hi:.6g}] after "
                           f"{expand} expansions")
        c, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        if f_lo <= 0.0:
            lo = lo / factor if mode == "geometric" else max(c - factor * half, 0.5 * lo)
            f_lo = phi(lo)
        if f_hi >= 0.0:
            hi = hi * factor if mode == "geometric" else c + factor * half
            f_hi = phi(hi)
        expand += 1
    signs = (_sign(f_lo), _sign(f_hi))
    brackets = [(lo, hi)]
    best = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
    converged = abs(best[1]) <= tol_phi
    while not converged and hi - lo > tol_width:
        mid = 0.5 * (lo + hi)
        f = phi(mid)
        if abs(f) < abs(best[1]):
            best = (mid, f)
        if abs(f) <= tol_phi:
            converged = True
            break
        if f > 0.0:
            lo = mid
        else:
            hi = mid
        brackets.append((lo, hi))
    if not converged and hi - lo <= tol_width:
        converged = True
    return best[0], best[1], brackets, signs, converged, evals


def fit_lambda(nozzle: Nozzle, domain: TruncatedDomain, gas: GasClosure, bracket=None,
               c0=8.0, tol_phi=None, tol_width=None, psi0=None, max_expand=6,
               threads=None, log: Optional[list] = None, prebracket=None, width=0.03,
               expand="geometric", **kw) -> FitResult:
    """Lambda with Upsilon_Lambda(1-) = 0 by bracketing and bisection.

    Each trial is warm-started from the stored solve with the nearest Lambda
    (or from ``psi0`` for the first one).  The default bracket is
    [Q / c0, c0 Q] with geometric expansion.  With ``prebracket`` = a grid
    spacing coarser than the domain's, Lambda is first fitted on that grid
    from the default bracket, and the fine fit starts from the relative
    bracket Lambda_coarse (1 -+ width), widened about its centre when needed.
    """
    Q = gas.Q
    coarse = None
    start_from = None
    mode = expand
    if prebracket is not None and prebracket > domain.hy * (1.0 + 1e-12):
        k = prebracket / domain.hy
        cdom = build_grid(nozzle, domain.mu, domain.R, domain.hx * k, domain.hy * k)
        coarse = fit_lambda(nozzle, cdom, gas, bracket=bracket, c0=c0, max_expand=max_expand,
                            threads=threads, **kw)
        Lc = coarse.Lambda_star
        bracket = (Lc * (1.0 - width), Lc * (1.0 + width))
        mode = "width"
        if psi0 is None:
            start_from = (coarse.solve.field.psi, cdom)
    if bracket is None:
        bracket = (Q / c0, c0 * Q)
    if tol_phi is None:
        tol_phi = 2.0 * domain.hx
    if tol_width is None:
        tol_width = 1e-3 * Q
    solves: dict = {}
    history = [] if log is None else log

    def phi_of(L):
        t0 = time.perf_counter()
        start = psi0
        if solves:
            near = min(solves, key=lambda k: abs(k - L))
            start = solves[near].field.psi
        js = solve_jet(nozzle, domain, gas, L, psi0=start, threads=threads,
                       start_from=start_from if start is None else None, **kw)
        solves[L] = js
        phi = js.phi if np.isfinite(js.phi) else domain.R + domain.hx
        history.append((L, phi, js.report.energy, js.report.sweeps, js.report.newton_steps,
                        time.perf_counter() - t0))
        return phi

    L, f, brackets, signs, conv, evals = bisect_fit(phi_of, bracket[0], bracket[1], tol_phi,
                                                    tol_width, max_expand=max_expand,
                                                    mode=mode)
    # monotonicity of phi over the sampled Lambdas, noise below 2 hx tolerated
    pts = sorted(evals.items())
    viol = [(a[0], b[0]) for a, b in zip(pts, pts[1:]) if b[1] > a[1] + 2.0 * domain.hx]
    res = FitResult(float(L), float(f), brackets[-1], list(history), brackets, solves[L],
                    signs, conv, viol)
    res.coarse = coarse
    return res


# ---------------------------------------------------------------------------
# continuation in the truncation
# ---------------------------------------------------------------------------

def _warm_start(prev_psi, prev: TruncatedDomain, new: TruncatedDomain, data: BoundaryData):
    """Previous field on the common columns; new slabs take the initial guess."""
    psi = initial_guess(new, data)
    off = int(round((prev.mu - new.mu) / new.hx))  # column shift, <= 0
    ny = min(prev.shape[0], new.shape[0])
    # the previous outlet column carries outlet data, so only interior columns move over
    for ip in range(prev.shape[1] - 1):
        i = ip - off
        if 0 <= i < new.shape[1]:
            both = new.interior[:ny, i] & (prev.tags[:ny, ip] == INTERIOR)
            psi[:ny, i] = np.where(both, prev_psi[:ny, ip], psi[:ny, i])
    return psi


def continuation(nozzle: Nozzle, levels: Sequence, gas: GasClosure, hx: float, hy: float,
                 c0=8.0, bracket=None, rel_tol=1e-3, widen=0.1, threads=None,
                 require_convergence=False, **kw):
    """Fit Lambda on growing truncations (mu_k, R_k) with warm starts.

    Returns the FitResult of the last level with the continuation table in
    ``table`` and the final domain.  Convergence needs the relative change of
    Lambda below ``rel_tol`` and the free boundary on the common rows to move
    by at most 2 hx.
    """
    levels = [tuple(map(float, lv)) for lv in levels]
    for a, b in zip(levels, levels[1:]):
        if not (b[0] > a[0] and b[1] > a[1]):
            raise FitError("truncation schedule must increase in mu and R")
    table = []
    prev = None
    res = None
    dom = None
    converged = False
    for k, (mu, R) in enumerate(levels):
        t0 = time.perf_counter()
        dom = build_grid(nozzle, mu, R, hx, hy)
        psi0 = None
        br = bracket if k == 0 else None
        if prev is not None:
            pres, pdom = prev
            L0 = pres.Lambda_star
            data = boundary_data(dom, gas.Q, L0)
            psi0 = _warm_start(pres.solve.field.psi, pdom, dom, data)
            br = (L0 * (1.0 - widen), L0 * (1.0 + widen))
        res = fit_lambda(nozzle, dom, gas, bracket=br, c0=c0, psi0=psi0, threads=threads,
                         expand="geometric" if k == 0 else "width", **kw)
        js = res.solve
        move = math.nan
        dL = math.nan
        if prev is not None:
            pres, pdom = prev
            dL = abs(res.Lambda_star - pres.Lambda_star)
            a, b = pres.solve.boundary, js.boundary
            common = np.isfinite(a.upsilon) & np.isfinite(b.upsilon)
            n = min(a.upsilon.size, b.upsilon.size)
            common = common[:n]
            move = float(np.abs(a.upsilon[:n][common] - b.upsilon[:n][common]).max()) \
                if common.any() else math.inf
            converged = dL <= rel_tol * res.Lambda_star and move <= 2.0 * hx
        H_low = column_h(js.field, dom)
        table.append(dict(level=k, mu=mu, R=R, Lambda=res.Lambda_star, phi=res.fit_residual,
                          H_low=H_low, H_star=h_star(res.Lambda_star, gas.Q), dLambda=dL,
                          boundary_move=move, seconds=time.perf_counter() - t0))
        prev = (res, dom)
        if converged:
            break
    if require_convergence and not converged:
        raise FitError("Lambda sequence not Cauchy within the configured levels")
    res.table = table
    res.converged = res.converged and (converged or len(levels) == 1)
    return res, dom


def column_h(field: StreamField, domain: TruncatedDomain, x_frac=0.5):
    """Level-set height of psi = Q on the column at x_frac R downstream of the orifice."""
    i = int(np.argmin(np.abs(domain.x - x_frac * domain.R)))
    return column_level_height(field.psi, domain, i, field.Q)
