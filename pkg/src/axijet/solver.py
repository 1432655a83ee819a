"""Minimisation of the discrete truncated energy over nodal stream values.

The energy of a nodal field psi on the masked grid is a sum over active
cells of

    y_c h_x h_y 1/4 sum_corners [ G(|grad psi_k|^2 / y_c^2, psi_c)
                                  + lambda^2 [psi_k < Q] ],

with corner gradients taken from the two cell edges meeting at corner k.
Minimisers are found by four-colour nonlinear Gauss-Seidel in which every
nodal update is an exact one-dimensional minimisation over [0, Q].  Newton
steps on the nodes below Q accelerate the smooth part, and collective moves
of the whole plug front, ranked by the local speed against Lambda, let the
front travel more than the single-node updates allow.  Every accepted step
lowers the energy.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage, sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import linalg as spla

from . import _kernels as K
from .geometry import BoundaryData, TruncatedDomain
from .thermo import GasClosure, critical_quantities, lambda_eps



class SolverError(RuntimeError):
    pass


@dataclass
class StreamField:
    psi: np.ndarray
    Q: float
    Lambda: float
    lam2: float
    eps: float

    def plug_mask(self, domain: TruncatedDomain):
        return domain.interior & (self.psi >= self.Q)


@dataclass
class SolveReport:
    converged: bool
    sweeps: int
    newton_steps: int
    final_change: float
    energy: float
    energy_history: list = field(default_factory=list)
    wall_time: float = 0.0
    energy_monotone: bool = True
    front_moves: int = 0


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _colour_lists(domain: TruncatedDomain):
    j, i = np.nonzero(domain.interior)
    colour = 2 * (j % 2) + (i % 2)
    order = np.lexsort((i, j, colour))
    nodes = np.stack([j[order], i[order]], axis=1).astype(np.int64)
    ptr = np.searchsorted(colour[order], np.arange(5)).astype(np.int64)
    return np.ascontiguousarray(nodes), ptr


BAND_WIDTH = 3


def _band_lists(domain: TruncatedDomain, psi, Q, width=None):
    """Colour lists restricted to interior nodes near the plug boundary."""
    width = BAND_WIDTH if width is None else width
    inner = domain.interior
    plug = inner & (psi >= Q)
    if not plug.any():
        return None
    st = np.ones((3, 3), dtype=bool)
    free = inner & ~plug
    edge = (plug & ndimage.binary_dilation(free, st)) | (free & ndimage.binary_dilation(plug, st))
    band = ndimage.binary_dilation(edge, st, iterations=width) & inner
    j, i = np.nonzero(band)
    colour = 2 * (j % 2) + (i % 2)
    order = np.lexsort((i, j, colour))
    nodes = np.stack([j[order], i[order]], axis=1).astype(np.int64)
    ptr = np.searchsorted(colour[order], np.arange(5)).astype(np.int64)
    return np.ascontiguousarray(nodes), ptr


def set_threads(n):
    """Limit the solver kernels to n threads (capped at what numba allows)."""
    if n is None:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def discrete_energy(psi, domain: TruncatedDomain, gas: GasClosure, lam2: float):
    return K.total_energy(psi, domain.cell_on, domain.y, domain.hx, domain.hy,
                          float(lam2), *gas.packed())


def nodal_relax(field: StreamField, node, domain: TruncatedDomain, gas: GasClosure):
    """Exact minimiser of the energy in one interior nodal value."""
    j, i = node
    if domain.tags[j, i] != K.INTERIOR:
        raise SolverError("only interior nodes are relaxed")
    return K.relax_node(field.psi, j, i, domain.cell_on, domain.y, domain.hx, domain.hy,
                        field.lam2, *gas.packed())


def local_energy(field: StreamField, node, value, domain: TruncatedDomain, gas: GasClosure):
    j, i = node
    return K.local_energy(field.psi, j, i, float(value), domain.cell_on, domain.y,
                          domain.hx, domain.hy, field.lam2, *gas.packed())


def initial_guess(domain: TruncatedDomain, data: BoundaryData):
    """Inlet column continued to the wall, blended linearly with the outlet column."""
    ny, nx = domain.shape
    psi = data.values.copy()
    inner = domain.interior
    xs = (domain.x - domain.x[0]) / (domain.x[-1] - domain.x[0])
    left = data.values[:, 0]
    right = data.values[:, -1]
    # above the outlet column the lid value applies
    right = np.where(domain.y >= 1.0, data.Q, right)
    left = np.where(domain.y >= domain.b_mu, data.Q, left)
    blend = (1.0 - xs)[None, :] * left[:, None] + xs[None, :] * right[:, None]
    psi[inner] = np.clip(blend[inner], 0.0, data.Q)
    return psi


# ---------------------------------------------------------------------------
# Newton acceleration on the free nodes
# ---------------------------------------------------------------------------

def _sym_factor(H):
    """Sparse LU with a symmetric ordering; None on failure."""
    try:
        return spla.splu(H, permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
    except RuntimeError:
        return None


def _window_cells(domain, active):
    """Cells with a corner in the node mask ``active``."""
    a = active
    touch = a[:-1, :-1] | a[:-1, 1:] | a[1:, :-1] | a[1:, 1:]
    return domain.cell_on & touch


def _newton_pass(psi, domain, gas, lam2, Q, max_iter=20, tol=1e-12, active=None):
    """Projected Newton with backtracking on the nodes below Q.

    While the free set stays the same, the last factorisation preconditions
    conjugate gradients instead of being recomputed.  With a node mask
    ``active`` only those nodes move and the returned energy is the part
    carried by the cells touching them.
    """
    par, tab = gas.packed()
    cells = domain.cell_on if active is None else _window_cells(domain, active)
    movable = domain.interior if active is None else domain.interior & active

    def energy(v):
        return K.total_energy(v, cells, domain.y, domain.hx, domain.hy, float(lam2), par, tab)

    steps = 0
    E = energy(psi)
    lu = None
    free_prev = None
    prev_step = None
    for _ in range(max_iter):
        free = movable & (psi < Q)
        nfree = int(free.sum())
        if nfree == 0:
            break
        idx = np.full(psi.shape, -1, dtype=np.int64)
        idx[free] = np.arange(nfree)
        rows, cols = K.coo_pattern(cells, idx)
        grad, data = K.assemble(psi, cells, domain.y, domain.hx, domain.hy, par, tab,
                                idx, rows, cols)
        H = sparse.csc_matrix((data, (rows, cols)), shape=(nfree, nfree))
        d = None
        if lu is not None and np.array_equal(free, free_prev):
            M = spla.LinearOperator(H.shape, lu.solve)
            d, info = spla.cg(H, -grad, rtol=1e-10, atol=0.0, maxiter=25, M=M)
            if info != 0 or grad @ d >= 0.0:
                d = None
        if d is None:
            lu = _sym_factor(H)
            d = lu.solve(-grad) if lu is not None else None
            if d is None or not np.all(np.isfinite(d)) or grad @ d >= 0.0:
                shift = 1e-8 * abs(H.diagonal()).max()
                lu = _sym_factor(H + shift * sparse.identity(nfree, format="csc"))
                d = lu.solve(-grad) if lu is not None else None
                if d is None or not np.all(np.isfinite(d)) or grad @ d >= 0.0:
                    lu = None
                    d = -grad / np.maximum(H.diagonal(), 1e-300)
        free_prev = free
        if float(np.abs(d).max()) <= tol * Q:
            break
        alpha = 1.0
        accepted = False
        base = psi[free]
        for _ls in range(20):
            trial = psi.copy()
            trial[free] = np.clip(base + alpha * d, 0.0, Q)
            Et = energy(trial)
            if Et < E:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        step = float(np.abs(trial[free] - base).max())
        psi[:] = trial
        E = Et
        steps += 1
        if step <= tol * Q:
            break
        # in the quadratic regime the next step is about step^2 / prev_step
        if alpha == 1.0 and prev_step is not None and step < 1e-2 * prev_step:
            if step * step / prev_step <= tol * Q:
                break
        prev_step = step if alpha == 1.0 else None
    return steps, E


# ---------------------------------------------------------------------------
# plug front moves
# ---------------------------------------------------------------------------

_NEIGH = ((0, 1), (0, -1), (1, 0), (-1, 0))


def _front_speeds(psi, domain: TruncatedDomain, Q):
    """Speed estimates |grad psi| / y next to the plug set.

    Returns (grow_nodes, grow_speed, shrink_nodes, shrink_speed): free
    interior nodes touching a node at Q with the one-sided speed towards it,
    and interior plug nodes touching free nodes with the largest such speed.
    """
    inner = domain.interior
    atq = (psi >= Q) & (domain.tags != 0)
    free = inner & ~atq
    ny, nx = psi.shape
    speed = np.zeros_like(psi)  # at free nodes, max over plug neighbours
    pull = np.zeros_like(psi)  # at plug nodes, max over free neighbours
    ysafe = np.maximum(domain.y, 0.5 * domain.hy)[:, None]
    for dj, di in _NEIGH:
        h = domain.hy if dj else domain.hx
        src = (slice(max(-dj, 0), ny - max(dj, 0)), slice(max(-di, 0), nx - max(di, 0)))
        dst = (slice(max(dj, 0), ny - max(-dj, 0)), slice(max(di, 0), nx - max(-di, 0)))
        # free node at src with a Q-neighbour at dst
        r = (Q - psi[src]) / (h * ysafe[src[0]])
        m = free[src] & atq[dst]
        speed[src] = np.where(m, np.maximum(speed[src], r), speed[src])
        m2 = free[src] & atq[dst] & inner[dst]
        pull[dst] = np.where(m2, np.maximum(pull[dst], r), pull[dst])
    g = np.nonzero(free & (speed > 0.0))
    sh = np.nonzero(inner & atq & (pull > 0.0))
    return g, speed[g], sh, pull[sh]


def _scatter(shape, jj, ii, w):
    out = np.zeros(shape)
    out[jj, ii] = w
    return out


def _settle(psi, domain, gas, lam2, Q, par, tab, max_cycles):
    """Newton on the smooth part alternated with sweeps along the front."""
    steps = 0
    for _ in range(max_cycles):
        k, _ = _newton_pass(psi, domain, gas, lam2, Q)
        steps += k
        band = _band_lists(domain, psi, Q)
        if band is None:
            break
        plug = psi >= Q
        K.gs_sweep(psi, band[0], band[1], domain.cell_on, domain.y, domain.hx,
                   domain.hy, lam2, par, tab)
        if np.array_equal(plug, psi >= Q):
            break
    return discrete_energy(psi, domain, gas, lam2), steps


def _front_move(psi, E, domain, gas, lam2, Q, Lambda, par, tab, max_cycles, tries=3,
                components=2, window=10):
    """Try to grow or shrink the plug along its front; True if accepted.

    Free nodes whose speed is below Lambda are candidates to join the
    plug, plug nodes next to flow faster than Lambda are candidates to leave
    it.  Whole connected runs of candidates are tried first, largest total
    speed mismatch first, since a flat stretch of front only lowers the
    energy when it moves as a piece.  Then the most extreme quarter, eighth,
    ... of each list is tried.  A move is kept only if the energy drops.
    """
    g, gs, sh, ss = _front_speeds(psi, domain, Q)
    trials = []
    for kind, nodes, speed, sel, key in (("grow", g, gs, gs < Lambda, Lambda - gs),
                                         ("shrink", sh, ss, ss > Lambda, ss - Lambda)):
        if not np.any(sel):
            continue
        jj, ii, w = nodes[0][sel], nodes[1][sel], key[sel]
        mask = np.zeros(psi.shape, dtype=bool)
        mask[jj, ii] = True
        lab, nlab = ndimage.label(mask)
        if nlab >= 1:
            score = ndimage.sum_labels(_scatter(psi.shape, jj, ii, w),
                                       lab, np.arange(1, nlab + 1))
            for c in np.argsort(-score, kind="stable")[:components]:
                pick = lab[jj, ii] == c + 1
                if pick.sum() > 1:
                    trials.append((kind, jj[pick], ii[pick], True))
        order = np.argsort(-w, kind="stable")
        jj, ii = jj[order], ii[order]
        n = max(1, len(jj) // 4)
        for _ in range(tries):
            trials.append((kind, jj[:n], ii[:n], False))
            if n == 1:
                break
            n = max(1, n // 2)
    steps = 0
    cross = ndimage.generate_binary_structure(2, 2)
    # first pass: relax a window around the move with the rest held, which
    # can only overestimate the energy after full relaxation; second pass:
    # whole runs judged by a full Newton pass, since moving a long flat
    # stretch of front needs the flow far below it to adjust
    passes = [(t, True) for t in trials] + [(t, False) for t in trials if t[3]]
    for (kind, jj, ii, _), local in passes:
        if local:
            moved = np.zeros(psi.shape, dtype=bool)
            moved[jj, ii] = True
            win = ndimage.binary_dilation(moved, cross, iterations=window)
            cells = _window_cells(domain, win)
            E0 = K.total_energy(psi, cells, domain.y, domain.hx, domain.hy, float(lam2),
                                par, tab)
        else:
            win, E0 = None, E
        trial = psi.copy()
        if kind == "grow":
            trial[jj, ii] = Q
        else:
            nb = np.zeros(len(jj))
            for dj, di in _NEIGH:
                nb += psi[jj + dj, ii + di]
            trial[jj, ii] = np.minimum(0.25 * nb, Q * (1.0 - 1e-9))
        k, Et = _newton_pass(trial, domain, gas, lam2, Q, active=win)
        steps += k
        if Et < E0 - 1e-14 * abs(E):
            Et, k = _settle(trial, domain, gas, lam2, Q, par, tab, max_cycles)
            steps += k
            if Et < E - 1e-14 * abs(E):
                psi[:] = trial
                return True, Et, steps
    return False, E, steps


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def minimize(domain: TruncatedDomain, data: BoundaryData, gas: GasClosure,
             psi0=None, tol=1e-10, max_sweeps=None, accelerate=True, threads=None,
             lam2=None, max_cycles=200, front_moves=True, max_moves=400):
    """Minimise the discrete energy with the given Dirichlet data.

    Returns the field and a report.  Convergence means a full Gauss-Seidel
    sweep moved no node by more than ``tol * Q``.
    """
    t0 = time.perf_counter()
    set_threads(threads)
    Q = data.Q
    if lam2 is None:
        lam2 = lambda_eps(data.Lambda, gas) ** 2
    if psi0 is None:
        psi = initial_guess(domain, data)
    else:
        psi = np.array(psi0, dtype=float, copy=True)
        off = ~domain.interior
        psi[off] = data.values[off]
        psi[domain.interior] = np.clip(psi[domain.interior], 0.0, Q)
    psi = np.ascontiguousarray(psi)
    ny, nx = domain.shape
    if max_sweeps is None:
        max_sweeps = 200 * (nx + ny)
    nodes, ptr = _colour_lists(domain)
    par, tab = gas.packed()
    history = [discrete_energy(psi, domain, gas, lam2)]
    sweeps = 0
    newton_steps = 0
    moves = 0
    change = np.inf
    converged = False
    while sweeps < max_sweeps:
        if accelerate:
            E, k = _settle(psi, domain, gas, lam2, Q, par, tab, max_cycles)
            newton_steps += k
            history.append(E)
            while front_moves and lam2 > 0.0 and moves < max_moves:
                ok, E, k = _front_move(psi, E, domain, gas, lam2, Q, data.Lambda, par, tab,
                                       max_cycles)
                newton_steps += k
                if not ok:
                    break
                moves += 1
                history.append(E)
        for _ in range(1 if accelerate else 50):
            change = K.gs_sweep(psi, nodes, ptr, domain.cell_on, domain.y, domain.hx,
                                domain.hy, lam2, par, tab)
            sweeps += 1
            history.append(discrete_energy(psi, domain, gas, lam2))
            if change <= tol * Q:
                converged = True
                break
            if sweeps >= max_sweeps:
                break
        if converged:
            break
    hist = np.asarray(history)
    monotone = bool(np.all(np.diff(hist) <= 1e-13 * max(1.0, abs(hist).max())))
    report = SolveReport(converged, sweeps, newton_steps, float(change), float(hist[-1]),
                         hist.tolist(), time.perf_counter() - t0, monotone, moves)
    return StreamField(psi, Q, float(data.Lambda), float(lam2), gas.eps), report


# ---------------------------------------------------------------------------
# structure checks
# ---------------------------------------------------------------------------

def validate_structure(field: StreamField, domain: TruncatedDomain, gas: GasClosure,
                       H_star=None):
    """Monotonicity in x, suffix plug rows, plug height and subsonic margin."""
    psi = field.psi
    Q = field.Q
    inner = domain.interior
    inside = domain.tags != K.OUTSIDE
    both = inside[:, 1:] & inside[:, :-1]
    dpsi_dx = (psi[:, 1:] - psi[:, :-1]) / domain.hx
    min_dx = float(np.where(both, dpsi_dx, np.inf).min())
    plug = inner & (psi >= Q)
    suffix_ok = True
    lowest_plug = np.inf
    for j in range(psi.shape[0]):
        cols = np.nonzero(inner[j])[0]
        if cols.size == 0:
            continue
        p = plug[j, cols]
        if p.any():
            first = int(np.argmax(p))
            if not p[first:].all():
                suffix_ok = False
            lowest_plug = min(lowest_plug, domain.y[j])
    # subsonic margin over active cells
    t = cell_momentum(psi, domain)
    zc = cell_average(psi)
    on = domain.cell_on
    tc = critical_quantities(zc[on], gas).t_crit
    margin = float(((tc - gas.eps) - t[on]).min())
    out = dict(min_dpsi_dx=min_dx, monotone_x=min_dx >= -1e-8 * Q / domain.hx,
               plug_suffix=suffix_ok, lowest_plug=float(lowest_plug),
               subsonic_margin=margin, subsonic=margin > 0.0)
    if H_star is not None:
        out["plug_above_H_star"] = bool(lowest_plug >= H_star - 1e-12)
    return out


def cell_average(psi):
    return 0.25 * (psi[:-1, :-1] + psi[:-1, 1:] + psi[1:, :-1] + psi[1:, 1:])


def cell_gradient(psi, domain: TruncatedDomain):
    """Cell-centre gradient (mean of the edge differences)."""
    dx = 0.5 * (psi[:-1, 1:] - psi[:-1, :-1] + psi[1:, 1:] - psi[1:, :-1]) / domain.hx
    dy = 0.5 * (psi[1:, :-1] - psi[:-1, :-1] + psi[1:, 1:] - psi[:-1, 1:]) / domain.hy
    return dx, dy


def cell_momentum(psi, domain: TruncatedDomain):
    """Largest corner value of |grad psi|^2 / y^2 in each cell."""
    hx, hy = domain.hx, domain.hy
    yc = 0.5 * (domain.y[:-1] + domain.y[1:])[:, None]
    dxb = (psi[:-1, 1:] - psi[:-1, :-1]) / hx
    dxt = (psi[1:, 1:] - psi[1:, :-1]) / hx
    dyl = (psi[1:, :-1] - psi[:-1, :-1]) / hy
    dyr = (psi[1:, 1:] - psi[:-1, 1:]) / hy
    t = np.maximum(np.maximum(dxb**2, dxt**2) + np.maximum(dyl**2, dyr**2), 0.0)
    return t / yc**2


def prolong(field_psi, coarse: TruncatedDomain, fine: TruncatedDomain, data: BoundaryData):
    """Bilinear transfer of a coarse solution to a finer grid of the same box."""
    ip = RegularGridInterpolator((coarse.y, coarse.x), field_psi, bounds_error=False,
                                 fill_value=None)
    Y, X = np.meshgrid(fine.y, fine.x, indexing="ij")
    psi = data.values.copy()
    inner = fine.interior
    psi[inner] = np.clip(ip(np.stack([Y[inner], X[inner]], axis=1)), 0.0, data.Q)
    return psi
