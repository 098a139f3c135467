import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unbend.errors import EmptyMask, IllConditioned, MultipleComponents, SingularSpeed
from unbend.geometry import (Contour, DegreeCapWarning, arc_length, audit_contour,
                             choose_degree, clean_mask, condition_contour,
                             extract_contour, fit_polycurve, frame_at, frames,
                             local_curvature, trace_contour)
from unbend.synth import BendProfile, add_boundary_noise, bend, make_template


def square(n=10, pad=5):
    m = np.zeros((n + 2 * pad, n + 2 * pad), bool)
    m[pad:pad + n, pad:pad + n] = True
    return m


def disk(r, pad=4):
    size = 2 * r + 2 * pad + 1
    yy, xx = np.mgrid[:size, :size] - (r + pad)
    return xx ** 2 + yy ** 2 <= r * r


def boundary_walk_length(mask):
    """Perimeter of a raster blob by walking its boundary pixels in angular
    order around the centroid (valid for star-shaped blobs)."""
    inner = mask & ~np.pad(mask, 1)[2:, 1:-1] | mask & ~np.pad(mask, 1)[:-2, 1:-1] \
        | mask & ~np.pad(mask, 1)[1:-1, 2:] | mask & ~np.pad(mask, 1)[1:-1, :-2]
    ys, xs = np.nonzero(inner)
    cy, cx = ys.mean(), xs.mean()
    order = np.argsort(np.arctan2(ys - cy, xs - cx))
    pts = np.column_stack([xs[order], ys[order]]).astype(float)
    pts = np.vstack([pts, pts[:1]])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


# ---------------------------------------------------------------------------
# extraction and conditioning

def test_square_contour_has_36_points():
    c = extract_contour(square())
    assert len(c) == 36
    assert c.length == pytest.approx(36, abs=1)
    assert c.signed_area() > 0


def test_single_pixel_is_rejected():
    m = np.zeros((9, 9), bool)
    m[4, 4] = True
    with pytest.raises(EmptyMask):
        extract_contour(m)


def test_empty_and_multiple_components():
    with pytest.raises(EmptyMask):
        extract_contour(np.zeros((20, 20), bool))
    m = np.zeros((40, 40), bool)
    m[2:12, 2:12] = True
    m[25:35, 25:35] = True
    with pytest.raises(MultipleComponents):
        extract_contour(m)


def test_border_touching_mask_is_padded():
    m = np.zeros((20, 20), bool)
    m[:10, :10] = True
    body = clean_mask(m, open_radius=0)
    assert not body[0].any() and not body[:, 0].any()
    assert body.sum() == 100


def test_disk_perimeter_matches_boundary_walk():
    m = disk(20)
    c = extract_contour(m)
    walk = boundary_walk_length(m)
    assert c.length == pytest.approx(walk, rel=0.02)
    assert c.length == pytest.approx(2 * np.pi * 20, rel=0.05)


def test_conditioning_identity_on_clean_chain():
    c = trace_contour(disk(15))
    assert audit_contour(c.points) == []
    again = condition_contour(c.points)
    np.testing.assert_array_equal(again.points, c.points)


def test_single_corner_is_removed():
    m = square()
    for r, col in [(5, 5), (5, 14), (14, 5)]:
        m[r, col] = False
    raw = extract_contour(m)
    assert len(audit_contour(raw.points)) > 0
    fixed = condition_contour(raw.points)
    assert len(fixed) == len(raw) - 1
    assert audit_contour(fixed.points) == []


def test_spurs_are_removed():
    rng = np.random.default_rng(3)
    m = square(30)
    m[5 + rng.integers(0, 30, 12), 5 + rng.integers(0, 30, 12)] = True
    chain = [tuple(p) for p in trace_contour(m).points.astype(int)]
    # three one-pixel spurs pointing outward
    for k in sorted(rng.choice(len(chain), 3, replace=False), reverse=True):
        x, y = chain[k]
        chain[k + 1:k + 1] = [(x + 1, y + 1), (x, y)]
    fixed = condition_contour(np.array(chain, float))
    assert audit_contour(fixed.points) == []
    assert len(set(map(tuple, fixed.points))) == len(fixed)


def _audit_oracle(points):
    pts = [tuple(p) for p in np.rint(points).astype(int)]
    bad = []
    for i, p in enumerate(pts):
        nb = sum(1 for j, q in enumerate(pts)
                 if j != i and q != p and abs(q[0] - p[0]) <= 1 and abs(q[1] - p[1]) <= 1)
        if nb != 2 or pts.count(p) > 1:
            bad.append(i)
    return bad


@pytest.mark.parametrize("seed", range(4))
def test_two_neighbour_audit_on_bodies(seed):
    tpl, _, _ = make_template(120, 18, ("taper", "round"))
    body = bend(tpl, BendProfile(0.01 * (seed - 1.5)))
    m = add_boundary_noise(body.mask, 1.0, seed=seed)
    c = trace_contour(m)
    assert _audit_oracle(c.points) == []
    assert np.all(np.diff(c.cumulative_length) > 0)
    raw = extract_contour(m)
    assert audit_contour(raw.points) == _audit_oracle(raw.points)


# ---------------------------------------------------------------------------
# fitting

def test_line_fit_is_exact():
    t = np.linspace(0, 30, 31)
    pts = np.column_stack([2 + 0.6 * t, 5 - 0.8 * t])
    curve = fit_polycurve(pts, arc_length(pts), 1)
    assert curve.rms < 1e-9
    np.testing.assert_allclose(curve(curve.length), pts[-1], atol=1e-9)


def test_cubic_coefficients_recovered():
    a = np.array([1.0, 0.5, -0.01, 2e-4])
    b = np.array([-3.0, 0.2, 0.02, -1e-4])
    s = np.linspace(0, 40, 60)
    P = np.polynomial.polynomial
    pts = np.column_stack([P.polyval(s, a), P.polyval(s, b)])
    curve = fit_polycurve(pts, s, 3)
    ca, cb = curve.coefficients_in_s()
    np.testing.assert_allclose(ca, a, rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(cb, b, rtol=1e-6, atol=1e-12)


def test_square_system_interpolates():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(6, 2)) * 5
    s = np.cumsum(rng.uniform(1, 3, 6))
    curve = fit_polycurve(pts, s, 5)
    assert curve.rms < 1e-9


def test_fit_preconditions():
    with pytest.raises(ValueError):
        fit_polycurve(np.zeros((3, 2)), [0, 1, 2], 3)
    with pytest.raises(ValueError):
        fit_polycurve(np.zeros((5, 2)), [0, 1, 1, 2, 3], 2)
    with pytest.raises(IllConditioned):
        fit_polycurve(np.zeros((40, 2)), np.arange(40.0), 12, max_condition=10.0)


def test_fit_is_a_local_minimum():
    rng = np.random.default_rng(1)
    s = np.linspace(0, 50, 80)
    pts = np.column_stack([s, 0.01 * (s - 25) ** 2]) + rng.normal(0, 0.4, (80, 2))
    curve = fit_polycurve(pts, s, 4)
    u = 2 * s / curve.length - 1
    V = np.vander(u, 5, increasing=True)

    def sse(cx, cy):
        return float(np.sum((V @ cx - pts[:, 0]) ** 2 + (V @ cy - pts[:, 1]) ** 2))

    base = sse(curve.coeffs_x, curve.coeffs_y)
    for k in range(5):
        for d in (-1e-3, 1e-3):
            cx = curve.coeffs_x.copy()
            cx[k] += d
            cy = curve.coeffs_y.copy()
            cy[k] += d
            assert sse(cx, curve.coeffs_y) >= base
            assert sse(curve.coeffs_x, cy) >= base


def test_degree_rms_is_monotone():
    tpl, _, _ = make_template(160, 20, ("taper", "round"))
    body = bend(tpl, BendProfile([(0, [0.01]), (80, [-0.01])]))
    c = trace_contour(body.mask)
    pts = np.vstack([c.points, c.points[:1]])
    s = arc_length(pts)
    rms = [fit_polycurve(pts, s, n).rms for n in range(3, 13)]
    assert all(b <= a + 1e-9 for a, b in zip(rms, rms[1:]))


def test_choose_degree_straight_band():
    x = np.arange(0.0, 100.0)
    c = Contour(np.column_stack([x, 0.0 * x]), closed=False)
    assert choose_degree(c).degree == 3


def test_choose_degree_s_bend_needs_higher_degree():
    tpl, _, _ = make_template(200, 16, ("round", "round"))
    body = bend(tpl, BendProfile([(0, [0.015]), (70, [-0.015]), (140, [0.015])]))
    axis = Contour(body.axis[::4], closed=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegreeCapWarning)
        choice = choose_degree(axis)
    assert choice.degree >= 5
    s = arc_length(axis.points)
    first = next(n for n in range(3, 13) if fit_polycurve(axis.points, s, n).rms <= 0.5)
    assert choice.degree == first


def test_choose_degree_caps_on_noise():
    rng = np.random.default_rng(2)
    x = np.arange(0.0, 200.0)
    c = Contour(np.column_stack([x, rng.normal(0, 2.0, x.size)]), closed=False)
    with pytest.warns(DegreeCapWarning):
        choice = choose_degree(c)
    assert choice.degree == 12 and choice.capped


# ---------------------------------------------------------------------------
# frames

def test_circle_curvature():
    R = 40.0
    t = np.linspace(0, np.pi / 2, 200)
    pts = np.column_stack([R * np.cos(t), R * np.sin(t)])
    curve = fit_polycurve(pts, arc_length(pts), 10)
    for s in np.linspace(0.1, 0.9, 9) * curve.length:
        assert abs(frame_at(curve, s).curvature) == pytest.approx(1 / R, rel=0.02)


def test_line_curvature_is_zero():
    t = np.linspace(0, 20, 21)
    pts = np.column_stack([t, 3 * t])
    curve = fit_polycurve(pts, arc_length(pts), 3)
    assert abs(frame_at(curve, 7.0).curvature) < 1e-9


def test_unit_speed_after_arc_length_fit():
    tpl, _, _ = make_template(200, 20, ("taper", "round"))
    body = bend(tpl, BendProfile(0.008))
    c = trace_contour(body.mask)
    pts = c.points[: len(c) // 2]
    curve = fit_polycurve(pts, arc_length(pts, smooth=5), 8)
    s = np.linspace(0, curve.length, 50)
    speed = np.linalg.norm(curve.derivative(s), axis=1)
    assert np.all(np.abs(speed - 1) < 0.05)


def test_singular_speed():
    pts = np.column_stack([np.linspace(0, 1, 10), np.zeros(10)])
    curve = fit_polycurve(pts, np.linspace(0, 1, 10), 1)
    with pytest.raises(SingularSpeed):
        frames(curve, [0.5], min_speed=10.0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8), st.integers(0, 2 ** 16))
def test_frame_orthonormality(coef, seed):
    s = np.linspace(0, 60, 61)
    c = np.asarray(coef)
    pts = np.column_stack([s + 3 * np.sin(c[0] + s * c[1] / 10), 5 * c[2] * np.cos(s * c[3] / 8)
                           + c[4] * s])
    curve = fit_polycurve(pts, arc_length(pts), 6)
    ss = np.random.default_rng(seed).uniform(0, curve.length, 100)
    _, t, n, _ = frames(curve, ss)
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(np.sum(t * n, axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(n, np.column_stack([-t[:, 1], t[:, 0]]), atol=1e-12)


def test_local_curvature_on_circle():
    R = 30.0
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    pts = np.column_stack([R * np.cos(t), R * np.sin(t)])
    k = local_curvature(pts, closed=True)
    np.testing.assert_allclose(k, 1 / R, rtol=1e-3)
