import math

import numpy as np
import pytest

from axijet.fit import (FitError, FIT_LOG_COLUMNS, FitResult, _crossing, bisect_fit,
                        check_free_boundary_condition, column_level_height,
                        extract_free_boundary)
from axijet.geometry import strip_domain
from axijet.solver import StreamField

Q = 0.02


def test_bisect_linear_stub():
    root = 0.0468
    calls = []

    def phi(L):
        calls.append(L)
        return -50.0 * (L - root)

    L, f, brackets, signs, conv, evals = bisect_fit(phi, Q / 8, 8 * Q, 1e-6, 1e-9)
    assert conv and signs == (1, -1)
    assert abs(f) <= 1e-6 and L == pytest.approx(root, abs=2e-8)
    widths = [b - a for a, b in brackets]
    assert all(w2 <= 0.5 * w1 * (1 + 1e-9) for w1, w2 in zip(widths, widths[1:]))
    assert len(calls) == len(set(calls))


def test_bisect_expands_geometric():
    L, f, brackets, signs, conv, _ = bisect_fit(lambda L: 1.0 - L, 0.01, 0.1, 1e-8, 1e-12)
    assert conv and L == pytest.approx(1.0, abs=1e-7)
    lo, hi = brackets[0]
    assert hi == pytest.approx(0.1 * 2**4)


def test_bisect_width_mode_expands_about_centre():
    L, *_ = bisect_fit(lambda L: 0.05 - L, 0.03, 0.035, 1e-10, 1e-12, mode="width")
    assert L == pytest.approx(0.05, abs=1e-9)


def test_bisect_no_sign_change():
    with pytest.raises(FitError, match="no sign change"):
        bisect_fit(lambda L: 1.0 + L, 0.01, 0.1, 1e-8, 1e-12, max_expand=3)


def test_bisect_stops_on_width():
    # a step function never meets tol_phi; the bracket width ends the search
    L, f, brackets, _, conv, _ = bisect_fit(lambda L: 1.0 if L < 0.3 else -1.0, 0.1, 0.5,
                                            1e-8, 1e-4)
    assert conv and abs(f) == 1.0
    assert brackets[-1][1] - brackets[-1][0] <= 1e-4
    assert brackets[-1][0] <= 0.3 <= brackets[-1][1]


def test_crossing_exact_for_quadratics():
    h = 0.1
    a, c, d = 0.237, 0.3, 2.0  # psi = Q - c (a - x) - d (a - x)^2 for x < a
    x = np.array([0.0, 0.1, 0.2])
    vals = Q - c * (a - x) - d * (a - x) ** 2
    assert _crossing(vals, h, Q) == pytest.approx(a - 0.2, abs=1e-13)
    assert _crossing(vals[-2:], h, Q) == pytest.approx(
        (Q - vals[-1]) / ((vals[-1] - vals[-2]) / h), rel=1e-13)
    # clamped to the cell
    assert _crossing([0.0, 0.1 * Q, 0.2 * Q], h, Q) == h
    assert _crossing([0.5 * Q], h, Q) == h


def synthetic_field(a_of_y, Lambda=0.05):
    """Plug psi = Q right of x = a(y); a quadratic profile in x on the wet side."""
    d = strip_domain(1.0, 2.0, 1 / 16, 1 / 16)
    X, Y = np.meshgrid(d.x, d.y)
    A = a_of_y(Y)
    s = np.maximum(A - X, 0.0)
    psi = np.clip(Q - 0.05 * s - 0.1 * s * s, 0.0, Q)
    psi[X >= A] = Q
    psi[0] = 0.0
    psi[-1] = Q
    return StreamField(psi, Q, Lambda, 0.0, 0.02), d


def test_extract_free_boundary_synthetic():
    field, d = synthetic_field(lambda y: 0.5 + 0.5 * y + 0.0 * y)
    fb = extract_free_boundary(field, d)
    rows = np.arange(1, d.j_lid)
    assert np.array_equal(fb.rows, rows)
    assert np.allclose(fb.upsilon, 0.5 + 0.5 * d.y[rows], atol=1e-12)
    assert fb.upsilon_top() == pytest.approx(0.5 + 0.5 * d.y[d.j_lid - 1])
    assert fb.max_jump == pytest.approx(0.5 / 16)
    assert not fb.empty


def test_extract_free_boundary_empty():
    d = strip_domain(1.0, 2.0, 1 / 16, 1 / 16)
    X, Y = np.meshgrid(d.x, d.y)
    field = StreamField(0.9 * Q * Y**2, Q, 0.05, 0.0, 0.02)
    fb = extract_free_boundary(field, d)
    assert fb.empty and math.isinf(fb.upsilon_top()) and math.isinf(fb.H_lower)
    assert fb.x_tail.size == 0
    dev, s = check_free_boundary_condition(field, fb, d)
    assert dev == 0.0 and s.shape == (0, 3)


def test_extract_rejects_two_outlet_bands():
    d = strip_domain(1.0, 2.0, 1 / 16, 1 / 16)
    psi = np.full(d.shape, 0.5 * Q)
    psi[:, -1] = 0.5 * Q
    for j in (3, 4, 10, 11):
        psi[j, -1] = Q
    psi[0] = 0.0
    psi[-1] = Q
    with pytest.raises(FitError, match="several bands"):
        extract_free_boundary(StreamField(psi, Q, 0.05, 0.0, 0.02), d)


def test_column_level_height():
    d = strip_domain(1.0, 2.0, 1 / 16, 1 / 16)
    H = 0.6 + 1 / 64
    col = np.where(d.y < H, Q - 0.05 * (H - d.y), Q)
    psi = np.tile(col[:, None], (1, d.shape[1]))
    assert column_level_height(psi, d, 5, Q) == pytest.approx(H, abs=1e-12)


def test_free_boundary_condition_on_exact_speed():
    # psi = Q - Lambda y (H - y) ... use a linear wet side with |grad psi| / y fixed per row
    d = strip_domain(1.0, 2.0, 1 / 32, 1 / 32)
    X, Y = np.meshgrid(d.x, d.y)
    L = 0.05
    a = 1.0
    psi = np.where(X >= a, Q, np.maximum(Q - L * Y * (a - X), 0.0))
    psi[0] = 0.0
    psi[-1] = Q
    field = StreamField(psi, Q, L, 0.0, 0.02)
    fb = extract_free_boundary(field, d)
    dev, s = check_free_boundary_condition(field, fb, d, y_range=(0.2, 0.9))
    assert s.shape[0] > 0
    # centre gradient of L y (a - x) at the cell centre gives L sqrt(y^2 + (a - x)^2) / y
    xc, yc = s[:, 0], s[:, 1]
    expect = L * np.hypot(yc, a - xc) / yc
    assert np.allclose(s[:, 2], expect, rtol=1e-10)


def test_fit_log_csv():
    res = FitResult(0.05, 0.0, (0.04, 0.06), [(0.04, 0.1, -1.0, 10, 2, 0.5)], [(0.04, 0.06)])
    text = res.log_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(FIT_LOG_COLUMNS)
    assert len(lines) == 2 and "\r" not in text
