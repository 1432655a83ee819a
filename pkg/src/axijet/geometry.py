"""Nozzle wall, truncated box, masked Cartesian grid and boundary values.

The nozzle wall is the graph x = N(y) for 1 <= y < Hbar with N(1) = 0 and N
decreasing to -inf.  The fluid region is bounded below by the axis y = 0 and
above by the wall and the lid [0, inf) x {1}; the box keeps -mu < x < R.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import interpolate, ndimage, optimize

from ._kernels import AXIS, INLET, INTERIOR, OUTLET, OUTSIDE, WALL

TAG_NAMES = {OUTSIDE: "outside", INTERIOR: "interior", AXIS: "axis",
             INLET: "inlet", OUTLET: "outlet", WALL: "wall"}


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# nozzle
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Nozzle:
    """Wall graph x = N(y) on [1, Hbar), with its inverse y = T(x) for x <= 0."""

    N: Callable
    Hbar: float
    y_max: float
    name: str = "custom"

    def __post_init__(self):
        y = np.linspace(1.0, self.y_max, 513)
        x = np.asarray(self.N(y), float)
        if abs(x[0]) > 1e-12:
            raise GeometryError("nozzle must satisfy N(1) = 0")
        if np.any(np.diff(x) >= 0.0):
            raise GeometryError("nozzle wall must be strictly decreasing in y")

    @property
    def x_min(self):
        return float(self.N(np.array([self.y_max]))[0])

    def T(self, x):
        """Wall height above abscissa x <= 0."""
        x = np.atleast_1d(np.asarray(x, float))
        out = np.empty_like(x)
        for k, xv in enumerate(x):
            if xv >= 0.0:
                out[k] = 1.0
            else:
                out[k] = solve_b_mu(self, -xv)
        return out

    @classmethod
    def tangent(cls, Hbar=2.0):
        """N(y) = -tan(pi (y - 1) / (2 (Hbar - 1)))."""
        c = np.pi / (2.0 * (Hbar - 1.0))

        def N(y):
            return -np.tan(c * (np.asarray(y, float) - 1.0))
        return cls(N, Hbar, 1.0 + (Hbar - 1.0) * (1.0 - 1e-9), "tangent")

    @classmethod
    def from_table(cls, y, x, Hbar):
        """Monotone cubic interpolation of (y, N(y)) samples."""
        y = np.asarray(y, float)
        x = np.asarray(x, float)
        if np.any(np.diff(y) <= 0.0) or np.any(np.diff(x) >= 0.0):
            raise GeometryError("nozzle table needs increasing y and decreasing N")
        if y[0] != 1.0 or x[0] != 0.0:
            raise GeometryError("nozzle table must start at (1, 0)")
        p = interpolate.PchipInterpolator(y, x, extrapolate=False)
        return cls(lambda s: p(np.asarray(s, float)), float(Hbar), float(y[-1]), "table")


def solve_b_mu(nozzle: Nozzle, mu: float) -> float:
    """Height b with N(b) = -mu."""
    if mu <= 0.0:
        raise GeometryError("mu must be positive")
    if -mu < nozzle.x_min:
        raise GeometryError(f"mu={mu} beyond the sampled nozzle extent")

    def f(y):
        return float(nozzle.N(np.array([y]))[0]) + mu
    return optimize.brentq(f, 1.0, nozzle.y_max, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def h_star(Lambda: float, Q: float) -> float:
    """Height with Lambda H^2 exp(1 - H) = Q, or 1 when Lambda <= Q."""
    if Lambda <= 0.0 or Q <= 0.0:
        raise GeometryError("Lambda and Q must be positive")
    if Lambda <= Q:
        return 1.0
    return optimize.brentq(lambda h: Lambda * h * h * np.exp(1.0 - h) - Q, 0.0, 1.0,
                           xtol=1e-15, rtol=4 * np.finfo(float).eps)


def outlet_profile(y, Lambda, Q):
    """Stream values imposed on the outlet x = R."""
    y = np.asarray(y, float)
    if h_star(Lambda, Q) < 1.0:
        return np.minimum(Lambda * y * y * np.exp(1.0 - y), Q)
    return Q * y * y * np.exp(1.0 - y)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TruncatedDomain:
    mu: float
    R: float
    b_mu: float
    b_mu_prime: float
    s_exponent: float
    x: np.ndarray
    y: np.ndarray
    hx: float
    hy: float
    tags: np.ndarray  # (ny, nx) int8
    i_orifice: int  # column of x = 0
    j_lid: int  # row of y = 1
    cell_on: np.ndarray = field(init=False)

    def __post_init__(self):
        t = self.tags
        inside = t != OUTSIDE
        cell = inside[:-1, :-1] & inside[:-1, 1:] & inside[1:, :-1] & inside[1:, 1:]
        object.__setattr__(self, "cell_on", cell)

    @property
    def shape(self):
        return self.tags.shape

    @property
    def interior(self):
        return self.tags == INTERIOR

    def counts(self):
        return {TAG_NAMES[k]: int((self.tags == k).sum()) for k in TAG_NAMES}


def _snap_index(y, T, hy):
    """Row of the wall node above abscissa with wall height T.

    Nodes strictly closer than h/2 to the wall are boundary nodes; a node at
    exactly h/2 below the wall stays interior.
    """
    j = int(np.floor((T - 0.5 * hy) / hy + 1e-9)) + 1
    while j - 1 >= 0 and y[j - 1] > T - 0.5 * hy + 1e-12 * hy:
        j -= 1
    while y[j] <= T - 0.5 * hy + 1e-12 * hy:
        j += 1
    return j


def _check_multiple(a, h, what):
    n = a / h
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise GeometryError(f"{what}={a} is not a multiple of the grid spacing {h}")
    return int(round(n))


def build_grid(nozzle: Nozzle, mu: float, R: float, hx: float, hy: float) -> TruncatedDomain:
    """Masked grid on [-mu, R] x [0, Hbar] with tagged nodes."""
    if hx <= 0.0 or hy <= 0.0 or mu <= 0.0 or R <= 0.0:
        raise GeometryError("spacings and box must be positive")
    n_mu = _check_multiple(mu, hx, "mu")
    n_R = _check_multiple(R, hx, "R")
    j_lid = _check_multiple(1.0, hy, "1")
    b_mu = solve_b_mu(nozzle, mu)
    b_prime = b_mu - (b_mu - 1.0) / 8.0
    nx = n_mu + n_R + 1
    x = -mu + hx * np.arange(nx)
    x[n_mu] = 0.0
    x[-1] = R
    ny = max(int(np.ceil(nozzle.Hbar / hy - 1e-9)), int(np.ceil((b_mu + hy) / hy))) + 1
    y = hy * np.arange(ny)
    if j_lid - 1 < 8:
        raise GeometryError("grid too coarse: fewer than 8 interior rows")
    T = np.ones(nx)
    T[:n_mu] = nozzle.T(x[:n_mu])
    T[0] = b_mu
    tags = np.full((ny, nx), OUTSIDE, dtype=np.int8)
    top = np.empty(nx, dtype=np.int64)
    for i in range(nx):
        top[i] = j_lid if i >= n_mu else _snap_index(y, T[i], hy)
        tags[: top[i], i] = INTERIOR
        tags[top[i], i] = WALL
    # staircase closure: an inside node with an outside 8-neighbour is wall
    inside = tags != OUTSIDE
    padded = np.pad(~inside, 1, constant_values=True)
    near_out = np.zeros_like(inside)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            near_out |= padded[1 + dj: 1 + dj + ny, 1 + di: 1 + di + nx]
    tags[(tags == INTERIOR) & near_out] = WALL
    tags[1: top[0], 0] = INLET
    tags[top[0], 0] = WALL
    tags[1:j_lid, -1] = OUTLET
    tags[0, :] = AXIS
    if int((tags[:, n_mu + 1] == INTERIOR).sum()) < 8:
        raise GeometryError("grid too coarse: fewer than 8 interior rows")
    steep = np.abs(np.gradient(x[:n_mu + 1], T[:n_mu + 1] + 1e-300)) * hy > hx
    if np.any(steep[1:-1]):
        warnings.warn("wall steeper than the grid aspect ratio somewhere; consider a finer hx",
                      stacklevel=2)
    lab, nlab = ndimage.label(tags == INTERIOR)
    if nlab != 1:
        raise GeometryError("interior node set is not connected")
    return TruncatedDomain(mu, R, b_mu, b_prime, 1.75, x, y, hx, hy, tags, n_mu, j_lid)


def strip_domain(height: float, length: float, hx: float, hy: float) -> TruncatedDomain:
    """Rectangle [0, length] x [0, height] with wall on top (test geometry)."""
    nx = _check_multiple(length, hx, "length") + 1
    ny = _check_multiple(height, hy, "height") + 1
    x = hx * np.arange(nx)
    y = hy * np.arange(ny)
    tags = np.full((ny, nx), INTERIOR, dtype=np.int8)
    tags[:, 0] = INLET
    tags[:, -1] = OUTLET
    tags[-1, :] = WALL
    tags[0, :] = AXIS
    return TruncatedDomain(0.0, length, height, height, 1.75, x, y, hx, hy, tags, 0, ny - 1)


# ---------------------------------------------------------------------------
# boundary values
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryData:
    values: np.ndarray  # (ny, nx), meaningful off the interior
    Q: float
    Lambda: float
    H_star: float


def inlet_profile(y, domain: TruncatedDomain, Q: float):
    b, bp, s = domain.b_mu, domain.b_mu_prime, domain.s_exponent
    r = np.clip((np.asarray(y, float) - bp) / (b - bp), 0.0, 1.0)
    return Q * r**s


def boundary_data(domain: TruncatedDomain, Q: float, Lambda: float) -> BoundaryData:
    """Dirichlet values on every non-interior node."""
    t = domain.tags
    v = np.zeros(t.shape)
    v[t == WALL] = Q
    col0 = t[:, 0] == INLET
    v[col0, 0] = inlet_profile(domain.y[col0], domain, Q)
    out = t[:, -1] == OUTLET
    v[out, -1] = outlet_profile(domain.y[out], Lambda, Q)
    v[t == AXIS] = 0.0
    v[t == INTERIOR] = 0.0
    return BoundaryData(v, float(Q), float(Lambda), h_star(Lambda, Q) if Lambda > 0 else 1.0)


def strip_boundary_data(domain: TruncatedDomain, profile: Callable, Q: float) -> BoundaryData:
    """Same profile on inlet and outlet of a strip, Q on the top wall."""
    t = domain.tags
    v = np.zeros(t.shape)
    for col in (0, -1):
        v[:, col] = profile(domain.y)
    v[t == WALL] = Q
    v[t == AXIS] = 0.0
    v[t == INTERIOR] = 0.0
    return BoundaryData(v, float(Q), 0.0, 1.0)
