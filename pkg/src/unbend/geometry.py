"""Contours, polynomial curve models and their differential geometry.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row index of
a pixel center.  A closed contour is "counter-clockwise" when its shoelace
area in these coordinates is positive; on a screen, where rows grow
downwards, that traversal appears clockwise.
"""

from dataclasses import dataclass, field
from typing import NamedTuple
import warnings

import numpy as np
from scipy import ndimage

from .errors import (EmptyMask, IllConditioned, MultipleComponents,
                     SingularSpeed, Unrepairable)

# Moore neighbourhood as (drow, dcol), clockwise on screen starting north.
_MOORE = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_MOORE_INDEX = {d: k for k, d in enumerate(_MOORE)}
_EIGHT = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]

MIN_COMPONENT = 64


class DegreeCapWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# masks

def clean_mask(mask, min_size=MIN_COMPONENT, open_radius=1):
    """Return the single body component of a binary mask.

    Holes are filled, features thinner than ``2 * open_radius + 1`` pixels are
    opened away and components smaller than ``min_size`` are discarded.  The
    result is padded with background if the body touches the image border.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("mask has no foreground pixels")
    work = np.pad(mask, open_radius + 1)
    work = ndimage.binary_fill_holes(work)
    if open_radius > 0:
        size = 2 * open_radius + 1
        work = ndimage.binary_opening(work, structure=np.ones((size, size), bool))
    labels, count = ndimage.label(work, structure=np.ones((3, 3), bool))
    if count == 0:
        raise EmptyMask("no foreground left after cleanup")
    sizes = np.bincount(labels.ravel())[1:]
    keep = np.flatnonzero(sizes >= min_size) + 1
    if keep.size == 0:
        raise EmptyMask(f"largest component has {sizes.max()} pixels, need {min_size}")
    if keep.size > 1:
        raise MultipleComponents(f"{keep.size} components of at least {min_size} pixels")
    work = labels == keep[0]
    pad = open_radius + 1
    body = work[pad:-pad, pad:-pad]
    if body[0].any() or body[-1].any() or body[:, 0].any() or body[:, -1].any():
        body = np.pad(body, 1)
    return body


# ---------------------------------------------------------------------------
# contours

def arc_length(points, closed=False, smooth=0):
    """Cumulative chord length of a point chain, starting at 0.

    With ``smooth > 1`` the chord lengths are measured on a moving average of
    ``smooth`` points, which removes most of the staircase excess of pixel
    chains.
    """
    pts = np.asarray(points, dtype=float)
    if smooth > 1 and len(pts) > smooth:
        pts = _moving_average(pts, smooth, closed)
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _moving_average(pts, window, closed):
    kernel = np.ones(window) / window
    half = window // 2
    if closed:
        padded = np.concatenate([pts[-half:], pts, pts[:half]])
    else:
        padded = np.concatenate([np.repeat(pts[:1], half, 0), pts, np.repeat(pts[-1:], half, 0)])
    out = np.column_stack([np.convolve(padded[:, k], kernel, mode="valid") for k in range(2)])
    if not closed:
        # keep the true end points so the chain length is not shortened
        out[0], out[-1] = pts[0], pts[-1]
    return out


@dataclass(frozen=True)
class Contour:
    """Ordered chain of pixel-center points with chord-length parameter."""

    points: np.ndarray
    closed: bool = True
    cumulative_length: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cumulative_length", arc_length(pts))

    def __len__(self):
        return len(self.points)

    @property
    def length(self):
        total = self.cumulative_length[-1]
        if self.closed and len(self.points) > 1:
            total += float(np.linalg.norm(self.points[0] - self.points[-1]))
        return float(total)

    def signed_area(self):
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def roll(self, start):
        """Same closed chain, re-indexed so that ``start`` becomes index 0."""
        return Contour(np.roll(self.points, -int(start), axis=0), closed=self.closed)

    def densified(self, spacing=0.5):
        """Points and arc lengths along the polygon at most ``spacing`` apart."""
        pts = self.points
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        s = arc_length(pts)
        n = max(int(np.ceil(s[-1] / spacing)), 1)
        grid = np.linspace(0.0, s[-1], n + 1)
        if self.closed:
            grid = grid[:-1]
        dense = np.column_stack([np.interp(grid, s, pts[:, k]) for k in range(2)])
        return dense, grid


def extract_contour(mask, min_size=MIN_COMPONENT):
    """Moore-neighbour trace of the outer boundary of the body in ``mask``.

    The chain is returned as traced: closed, counter-clockwise, free of
    spurs and repeated pixels, but convex pixel corners (a compact right
    angle at each corner of an axis-aligned rectangle, for instance) are
    kept.  Use :func:`trace_contour` for a chain conditioned for fitting.
    """
    body = clean_mask(mask, min_size=min_size, open_radius=0)
    chain = _moore_trace(body)
    chain = _strip_spurs(chain)
    contour = Contour(np.asarray(chain, dtype=float))
    if contour.signed_area() < 0:
        contour = Contour(contour.points[::-1])
    return contour


def trace_contour(mask, min_size=MIN_COMPONENT, open_radius=1):
    """Cleaned mask, Moore trace and conditioning in one call."""
    body = clean_mask(mask, min_size=min_size, open_radius=open_radius)
    return condition_contour(_moore_trace(body))


def _moore_trace(body):
    padded = np.pad(body, 1)
    rows, cols = np.nonzero(padded)
    start = (int(rows[0]), int(cols[0]))
    chain = [start]
    p, back = start, 6  # the west neighbour of the first raster pixel is background
    seen = set()
    while True:
        for k in range(1, 9):
            d = (back + k) % 8
            q = (p[0] + _MOORE[d][0], p[1] + _MOORE[d][1])
            if padded[q]:
                break
        else:
            break  # isolated pixel
        if (p, d) in seen:
            break
        seen.add((p, d))
        prev = _MOORE[(back + k - 1) % 8]
        bpix = (p[0] + prev[0], p[1] + prev[1])
        back = _MOORE_INDEX[(bpix[0] - q[0], bpix[1] - q[1])]
        p = q
        chain.append(q)
    if len(chain) > 1 and chain[-1] == chain[0]:
        chain.pop()
    # (row, col) in the padded frame -> (x, y)
    return [(c - 1, r - 1) for r, c in chain]


def _strip_spurs(chain):
    """Drop back-tracking excursions ``a, b, a`` and consecutive repeats."""
    pts = [tuple(map(int, p)) for p in chain]
    changed = True
    while changed and len(pts) > 3:
        changed = False
        n = len(pts)
        for i in range(n):
            a, b = pts[i - 1], pts[i]
            if a == b:
                del pts[i]
                changed = True
                break
            c = pts[(i + 1) % n]
            if a == c:
                # remove the tip b and the repeated a
                for idx in sorted({i, (i + 1) % n}, reverse=True):
                    del pts[idx]
                changed = True
                break
    return pts


def _adjacent(p, q):
    return p != q and abs(p[0] - q[0]) <= 1 and abs(p[1] - q[1]) <= 1


def audit_contour(points):
    """Return indices of points violating the two-neighbour rule.

    A point is flagged when it is repeated or when the number of other chain
    points in its 8-neighbourhood differs from two.
    """
    pts = np.rint(np.asarray(points, dtype=float).reshape(-1, 2)).astype(int)
    if len(pts) == 0:
        return []
    pts = pts - pts.min(axis=0) + 1
    grid = np.zeros((pts[:, 1].max() + 2, pts[:, 0].max() + 2), dtype=int)
    np.add.at(grid, (pts[:, 1], pts[:, 0]), 1)
    count = sum(grid[pts[:, 1] + dy, pts[:, 0] + dx] for dx, dy in _EIGHT)
    bad = (grid[pts[:, 1], pts[:, 0]] > 1) | (count != 2)
    return np.nonzero(bad)[0].tolist()


def condition_contour(raw, max_passes=50):
    """Repair a closed 8-connected chain so that it satisfies rules a, b, c.

    Spurs and repeated pixels are removed, the middle pixel of every compact
    right angle is deleted (first occurrence first) and short loops are cut,
    until the two-neighbour audit passes.
    """
    pts = _strip_spurs([tuple(np.rint(p).astype(int)) for p in np.asarray(raw)])
    for _ in range(max_passes):
        if len(pts) < 4:
            raise Unrepairable("chain collapsed during repair")
        if not audit_contour(pts):
            break
        if not (_cut_pinch(pts) or _cut_short_loop(pts)):
            raise Unrepairable(f"{len(audit_contour(pts))} points still violate the neighbour rule")
        pts = _strip_spurs(pts)
    else:
        raise Unrepairable("repair did not converge")
    contour = Contour(np.asarray(pts, dtype=float))
    if contour.signed_area() < 0:
        contour = Contour(contour.points[::-1])
    return contour


def _cut_short_loop(pts, reach=4):
    n = len(pts)
    for k in range(2, reach + 1):
        for i in range(n):
            j = i + k
            if _adjacent(pts[i], pts[j % n]):
                for idx in sorted({(i + m) % n for m in range(1, k)}, reverse=True):
                    del pts[idx]
                return True
    return False


def _cut_pinch(pts):
    """Where a pixel repeats, keep the longer of the two loops."""
    first = {}
    n = len(pts)
    for j, p in enumerate(pts):
        if p in first:
            i = first[p]
            inner = j - i
            if inner <= n - inner:
                del pts[i:j]
            else:
                del pts[j:]
                del pts[:i]
            return True
        first[p] = j
    return False


# ---------------------------------------------------------------------------
# polynomial curves

@dataclass(frozen=True)
class PolyCurve2D:
    """Planar polynomial curve ``(x(s), y(s))`` on ``s`` in ``[0, length]``.

    Coefficients are stored for the centered parameter ``u = 2 s / L - 1``.
    """

    coeffs_x: np.ndarray
    coeffs_y: np.ndarray
    length: float
    rms: float = 0.0

    @property
    def degree(self):
        return len(self.coeffs_x) - 1

    @property
    def s_domain(self):
        return (0.0, float(self.length))

    def _u(self, s):
        return 2.0 * np.asarray(s, dtype=float) / self.length - 1.0

    def __call__(self, s):
        u = self._u(s)
        P = np.polynomial.polynomial
        return np.stack([P.polyval(u, self.coeffs_x), P.polyval(u, self.coeffs_y)], axis=-1)

    def derivative(self, s, order=1):
        u = self._u(s)
        P = np.polynomial.polynomial
        scale = (2.0 / self.length) ** order
        dx = P.polyder(self.coeffs_x, order) if self.degree >= order else np.zeros(1)
        dy = P.polyder(self.coeffs_y, order) if self.degree >= order else np.zeros(1)
        return scale * np.stack([P.polyval(u, dx), P.polyval(u, dy)], axis=-1)

    def coefficients_in_s(self):
        """Monomial coefficients ``a_n, b_n`` in the raw arc length ``s``."""
        shift = np.polynomial.Polynomial([-1.0, 2.0 / self.length])
        a = np.polynomial.Polynomial(self.coeffs_x)(shift).coef
        b = np.polynomial.Polynomial(self.coeffs_y)(shift).coef
        size = self.degree + 1
        return np.pad(a, (0, size - len(a)))[:size], np.pad(b, (0, size - len(b)))[:size]

    def arc_length_table(self, step=0.25):
        """Parameter grid and the true arc length of the curve along it."""
        n = max(int(np.ceil(self.length / step)), 2)
        s = np.linspace(0.0, self.length, n + 1)
        speed = np.linalg.norm(self.derivative(s), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(s))])
        return s, arc

    def resample(self, spacing):
        """Parameters of points spaced ``spacing`` apart in true arc length."""
        s, arc = self.arc_length_table()
        n = max(int(np.floor(arc[-1] / spacing)), 1)
        targets = np.linspace(0.0, n * spacing, n + 1)
        return np.interp(targets, arc, s)


def fit_polycurve(points, s, degree, max_condition=1e12):
    """Least-squares fit of ``x(s), y(s)`` by polynomials of ``degree``."""
    pts = np.asarray(points, dtype=float)
    s = np.asarray(s, dtype=float)
    if degree < 1:
        raise ValueError("degree must be at least 1")
    if len(pts) < degree + 1:
        raise ValueError(f"{len(pts)} points cannot determine a degree-{degree} fit")
    if np.any(np.diff(s) <= 0):
        raise ValueError("arc lengths must be strictly increasing")
    s = s - s[0]
    length = float(s[-1])
    u = 2.0 * s / length - 1.0
    V = np.vander(u, degree + 1, increasing=True)
    cond = np.linalg.cond(V.T @ V)
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditioned(f"normal equations condition {cond:.3g} exceeds {max_condition:.3g}")
    coef, *_ = np.linalg.lstsq(V, pts, rcond=None)
    resid = pts - V @ coef
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return PolyCurve2D(coef[:, 0].copy(), coef[:, 1].copy(), length, rms)


class DegreeChoice(NamedTuple):
    degree: int
    rms: float
    capped: bool


def choose_degree(contour, tolerance=0.5, degrees=range(3, 13), smooth=0):
    """Smallest degree whose fit RMS is within ``tolerance`` pixels.

    Closed contours are fitted as the open chain that returns to its first
    point.  When no degree in the range meets the tolerance, the largest is
    returned with ``capped=True`` and a :class:`DegreeCapWarning`.
    """
    pts = contour.points
    if contour.closed:
        pts = np.vstack([pts, pts[:1]])
    s = arc_length(pts, closed=False, smooth=smooth)
    rms = np.inf
    for n in degrees:
        if len(pts) < n + 1:
            break
        rms = fit_polycurve(pts, s, n).rms
        if rms <= tolerance:
            return DegreeChoice(n, rms, False)
    warnings.warn(f"no degree up to {n} reaches RMS {tolerance} px (got {rms:.3f})",
                  DegreeCapWarning, stacklevel=2)
    return DegreeChoice(n, rms, True)


@dataclass(frozen=True)
class FrameSample:
    s: float
    position: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: float


def frames(curve, s, min_speed=1e-9):
    """Vectorised frame evaluation: positions, tangents, normals, curvatures."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    d1 = curve.derivative(s, 1)
    d2 = curve.derivative(s, 2)
    speed = np.linalg.norm(d1, axis=1)
    if np.any(speed < min_speed):
        raise SingularSpeed(f"speed {speed.min():.3g} below {min_speed}")
    tangent = d1 / speed[:, None]
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed ** 3
    return curve(s), tangent, normal, kappa


def frame_at(curve, s):
    """Tangent, +90 degree normal and signed curvature at arc length ``s``."""
    pos, t, n, k = frames(curve, [s])
    return FrameSample(float(s), pos[0], t[0], n[0], float(k[0]))


def local_curvature(points, closed=True, half_window=10, degree=5):
    """Signed curvature at every chain point from local polynomial fits.

    Each point gets a least-squares fit of ``degree`` over the ``2 *
    half_window + 1`` neighbouring points, parameterised by chord length
    relative to the point itself.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    h = int(min(half_window, (n - 1) // 2 if closed else n - 1))
    offsets = np.arange(-h, h + 1)
    idx = np.arange(n)[:, None] + offsets[None, :]
    if closed:
        idx %= n
    else:
        idx = np.clip(idx, 0, n - 1)
    win = pts[idx]                                      # (n, w, 2)
    steps = np.linalg.norm(np.diff(win, axis=1), axis=2)
    t = np.concatenate([np.zeros((n, 1)), np.cumsum(steps, axis=1)], axis=1)
    t -= t[:, h:h + 1]
    scale = np.maximum(np.abs(t).max(axis=1, keepdims=True), 1e-9)
    u = t / scale
    deg = min(degree, 2 * h)
    V = u[..., None] ** np.arange(deg + 1)              # (n, w, deg+1)
    # repeated end points of open chains would make u non-distinct
    VtV = np.einsum("nwi,nwj->nij", V, V) + 1e-12 * np.eye(deg + 1)
    coef = np.linalg.solve(VtV, np.einsum("nwi,nwk->nik", V, win))
    d1 = coef[:, 1, :] / scale
    d2 = 2.0 * coef[:, 2, :] / scale ** 2
    speed = np.maximum(np.linalg.norm(d1, axis=1), 1e-12)
    return (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed ** 3
