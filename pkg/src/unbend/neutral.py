"""Neutral-line unwrapping.

The contour is split at the tail and head into two sides.  For every sparse
point on side I the matching point on side II is the one whose chord makes
tangent angles summing to pi; the chord midpoints form the neutral line,
which is unrolled onto the x axis with the chord half-lengths as widths.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewSections
from .geometry import (Contour, arc_length, choose_degree, fit_polycurve,
                       frames, local_curvature, trace_contour)


@dataclass
class Landmarks:
    tail_index: int
    head_index: int
    flags: list = field(default_factory=list)


@dataclass
class CrossSection:
    p_I: np.ndarray
    p_II: np.ndarray
    length: float
    delta_phi: float
    index_I: int = -1
    index_II: int = -1

    @property
    def midpoint(self):
        return 0.5 * (self.p_I + self.p_II)


@dataclass
class NeutralLine:
    midpoints: np.ndarray
    cumulative_length: np.ndarray

    @property
    def length(self):
        return float(self.cumulative_length[-1])

    def tangents(self):
        t = np.gradient(self.midpoints, axis=0)
        return t / np.linalg.norm(t, axis=1, keepdims=True)


@dataclass
class StraightenedShape:
    stations: np.ndarray
    half_widths: np.ndarray

    @property
    def length(self):
        return float(self.stations[-1])

    @property
    def widths(self):
        return 2.0 * self.half_widths

    def upper(self):
        return np.column_stack([self.stations, self.half_widths])

    def lower(self):
        return np.column_stack([self.stations, -self.half_widths])

    def area(self):
        return float(np.trapezoid(self.widths, self.stations))

    def perimeter(self):
        side = np.sum(np.hypot(np.diff(self.stations), np.diff(self.half_widths)))
        return float(2.0 * side + self.widths[0] + self.widths[-1])

    def max_cross_section(self):
        return float(self.widths.max())

    def resample(self, step=1.0):
        """Half widths at stations ``0, step, 2 step, ...`` up to the length."""
        grid = np.arange(0.0, self.length + 1e-9, step)
        return grid, np.interp(grid, self.stations, self.half_widths)


@dataclass
class Split:
    part_I: object
    part_II: object
    samples_I: tuple      # (positions, tangents)
    samples_II: tuple
    flags: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# landmarks

def _window_points(contour, arc):
    spacing = contour.length / len(contour)
    return max(5, int(round(arc / spacing)))


def _side_directions(pts, w):
    """Principal directions of the ``w`` points on each side of every point,
    oriented away from the point."""
    n = len(pts)
    out = []
    for sign in (-1, 1):
        idx = (np.arange(n)[:, None] + sign * np.arange(1, w + 1)[None, :]) % n
        win = pts[idx]
        mean = win.mean(axis=1)
        d = win - mean[:, None, :]
        cxx = np.mean(d[..., 0] ** 2, axis=1)
        cyy = np.mean(d[..., 1] ** 2, axis=1)
        cxy = np.mean(d[..., 0] * d[..., 1], axis=1)
        ang = 0.5 * np.arctan2(2.0 * cxy, cxx - cyy)
        v = np.column_stack([np.cos(ang), np.sin(ang)])
        flip = np.sum(v * (mean - pts), axis=1) < 0
        v[flip] *= -1
        out.append(v)
    return out


def tail_angles(contour, window=None):
    """Angle between the left and right line fits at every contour point."""
    if window is None:
        window = 0.05 * contour.length
    w = _window_points(contour, window)
    left, right = _side_directions(contour.points, w)
    return np.arccos(np.clip(np.sum(left * right, axis=1), -1.0, 1.0))


def detect_tail(contour, window=None, tol=1e-9):
    """Index of the most acute contour point; ties go to the lowest index."""
    ang = tail_angles(contour, window)
    return int(np.flatnonzero(ang <= ang.min() + tol)[0])


def contour_curvature(contour, half_window=None):
    """Local quintic curvature at each point of a closed contour."""
    if half_window is None:
        half_window = _window_points(contour, 0.04 * contour.length)
    return local_curvature(contour.points, closed=True, half_window=half_window, degree=5)


def detect_head(contour, tail, half_window=None, band=(0.4, 0.6), tol=1e-12):
    """Point of maximum |curvature| between 0.4 and 0.6 of the contour length
    measured from the tail."""
    kappa = np.abs(contour_curvature(contour, half_window))
    s = contour.cumulative_length
    frac = ((s - s[tail]) % contour.length) / contour.length
    cand = np.flatnonzero((frac >= band[0]) & (frac <= band[1]))
    best = kappa[cand].max()
    return int(cand[np.flatnonzero(kappa[cand] >= best - tol)[0]])


def find_landmarks(contour, window=None):
    tail = detect_tail(contour, window)
    head = detect_head(contour, tail)
    flags = []
    if tail_angles(contour, window)[tail] > np.radians(60):
        flags.append("low-confidence-tail")
    return Landmarks(tail, head, flags)


# ---------------------------------------------------------------------------
# splitting and sections

def _fit_part(points, smooth=5, max_degree=12):
    part = Contour(points, closed=False)
    s = arc_length(points, smooth=smooth)
    import warnings
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        choice = choose_degree(part, degrees=range(3, max_degree + 1), smooth=smooth)
    curve = fit_polycurve(points, s, choice.degree)
    return curve, bool(caught) and choice.capped


def split_contour(contour, tail, head, sparse=3.0, dense=1.0, max_degree=12):
    """Fit both tail-to-head sides and sample them.

    Side I runs forward along the contour, side II backward; both start at
    the tail.  Side I is sampled every ``sparse`` pixels, side II every
    ``dense`` pixels of true arc length.
    """
    n = len(contour)
    pts = contour.roll(tail).points
    h = (head - tail) % n
    side_I = pts[:h + 1]
    side_II = np.vstack([pts[:1], pts[h:][::-1]])
    flags = []
    parts, samples = [], []
    for side, spacing in ((side_I, sparse), (side_II, dense)):
        curve, capped = _fit_part(side, max_degree=max_degree)
        if capped:
            flags.append("degree-capped")
        s = curve.resample(spacing)
        pos, tan, _, _ = frames(curve, s)
        parts.append(curve)
        samples.append((pos, tan))
    return Split(parts[0], parts[1], samples[0], samples[1], flags)


def _angle(a, b):
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(np.abs(cross), dot)


def delta_phi(p_I, tau_I, p_II, tau_II):
    """``|phi_I + phi_II - pi|`` for chords from ``p_II`` to ``p_I``."""
    r = np.asarray(p_I) - np.asarray(p_II)
    return np.abs(_angle(r, tau_I) + _angle(r, tau_II) - np.pi)


def section_angle_sum(chord, t_upper, t_lower, t_axis):
    """Angles of the chord with both boundary tangents minus the axis
    tangent; equals pi at an undeformed section."""
    chord = np.asarray(chord, dtype=float)
    return (_angle(chord, np.asarray(t_upper) - t_axis)
            + _angle(chord, np.asarray(t_lower) - t_axis))


def chords_inside(mask, a, b, clearance=1.0):
    """Whether each segment ``a[k] -> b[k]`` stays on foreground pixels.

    Samples are 1 px apart; samples within ``clearance`` of either end are
    not tested, since the end points lie on the fitted boundary.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    length = np.linalg.norm(b - a, axis=1)
    steps = int(np.ceil(length.max())) + 1
    t = np.linspace(0.0, 1.0, steps + 1)
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    along = t[None, :] * length[:, None]
    test = (along >= clearance) & (along <= length[:, None] - clearance)
    xi = np.rint(pts[..., 0]).astype(int)
    yi = np.rint(pts[..., 1]).astype(int)
    h, w = mask.shape
    valid = (xi >= 0) & (yi >= 0) & (xi < w) & (yi < h)
    fg = np.zeros(xi.shape, dtype=bool)
    fg[valid] = mask[yi[valid], xi[valid]]
    return np.all(fg | ~test, axis=1)


def find_cross_sections(split, mask, window, edge_offset=0.5):
    """Match every sparse side-I point to a side-II point.

    Candidates are the ``window`` dense points starting at the previous
    match, so matches never move backwards.  Chords leaving the body are
    excluded; when all leave, the point is skipped and recorded as a gap.
    Section lengths include ``edge_offset`` on each side, the distance from
    boundary pixel centers to the pixel edge.
    """
    pos_I, tan_I = split.samples_I
    pos_II, tan_II = split.samples_II
    n_II = len(pos_II)
    sections, gaps = [], []
    d_prev = 0
    for i in range(len(pos_I)):
        j = np.arange(d_prev, min(d_prev + window, n_II))
        if j.size == 0:
            gaps.append(i)
            continue
        inside = chords_inside(mask, np.repeat(pos_I[i:i + 1], len(j), 0), pos_II[j])
        if not inside.any():
            gaps.append(i)
            continue
        dphi = delta_phi(pos_I[i], tan_I[i], pos_II[j], tan_II[j])
        dphi = np.where(inside, dphi, np.inf)
        k = int(np.argmin(dphi))
        jj = int(j[k])
        chord = float(np.linalg.norm(pos_I[i] - pos_II[jj]))
        sections.append(CrossSection(pos_I[i].copy(), pos_II[jj].copy(),
                                     chord + 2.0 * edge_offset, float(dphi[k]), i, jj))
        d_prev = jj
    return sections, gaps


def build_neutral_line(sections):
    """Midpoints of the sections and their cumulative chord length."""
    if len(sections) < 2:
        raise TooFewSections(f"{len(sections)} section(s); need at least 2")
    mids = np.array([sec.midpoint for sec in sections])
    keep = np.concatenate([[True], np.linalg.norm(np.diff(mids, axis=0), axis=1) > 1e-9])
    mids = mids[keep]
    if len(mids) < 2:
        raise TooFewSections("all midpoints coincide")
    return NeutralLine(mids, arc_length(mids))


def straighten(neutral, sections):
    """Unroll the neutral line onto the x axis with half-section widths."""
    mids = np.array([sec.midpoint for sec in sections])
    lengths = np.array([sec.length for sec in sections])
    keep = np.concatenate([[True], np.linalg.norm(np.diff(mids, axis=0), axis=1) > 1e-9])
    lengths = lengths[keep]
    if len(lengths) != len(neutral.midpoints):
        raise ValueError("sections do not match the neutral line")
    return StraightenedShape(neutral.cumulative_length.copy(), lengths / 2.0)


def _end_section(point, toward, edge_offset):
    """Zero-width section at a landmark, pushed out to the pixel edge."""
    d = point - toward
    d = d / max(np.linalg.norm(d), 1e-12)
    p = point + edge_offset * d
    return CrossSection(p.copy(), p.copy(), 2.0 * edge_offset, 0.0)


@dataclass
class NeutralResult:
    contour: Contour
    landmarks: Landmarks
    split: Split
    sections: list
    neutral: NeutralLine
    shape: StraightenedShape
    gaps: list
    flags: list


def unwrap_neutral(mask, sparse=3.0, dense=1.0, window_fraction=0.05,
                   edge_offset=0.5, contour=None):
    """Full neutral-line pipeline on a binary mask."""
    mask = np.asarray(mask, dtype=bool)
    if contour is None:
        contour = trace_contour(mask)
    marks = find_landmarks(contour)
    split = split_contour(contour, marks.tail_index, marks.head_index, sparse, dense)
    window = max(int(round(window_fraction * contour.length / dense)), 3)
    inner, gaps = find_cross_sections(split, mask, window, edge_offset)
    if len(inner) < 2:
        raise TooFewSections(f"{len(inner)} interior section(s) found")
    tail_pt = contour.points[marks.tail_index]
    head_pt = contour.points[marks.head_index]
    sections = ([_end_section(tail_pt, inner[0].midpoint, edge_offset)] + inner
                + [_end_section(head_pt, inner[-1].midpoint, edge_offset)])
    neutral = build_neutral_line(sections)
    shape = straighten(neutral, sections)
    flags = list(marks.flags) + list(split.flags)
    if gaps:
        flags.append(f"gaps:{len(gaps)}")
    return NeutralResult(contour, marks, split, sections, neutral, shape, gaps, flags)
