"""Morphological unwrapping.

Fields are float arrays on the image grid holding NaN outside the body
mask.  Flat-disk dilation and erosion act on the body only; the curvature
deformation is the exponential of the alpha filter of the log gradient
norm of the contour distance field, minimised over scale.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.signal import savgol_filter
from scipy.spatial import cKDTree

from .errors import DisconnectedReference
from .geometry import Contour, arc_length, local_curvature, trace_contour
from .neutral import StraightenedShape, find_landmarks

SENT = 1e12


def as_field(values, mask):
    """Copy of ``values`` with NaN outside ``mask``."""
    out = np.array(values, dtype=float)
    out[~np.asarray(mask, dtype=bool)] = np.nan
    return out


def field_mask(f):
    return ~np.isnan(f)


# ---------------------------------------------------------------------------
# distance and footpoint

def _curve_samples(curve, spacing=0.5):
    if isinstance(curve, Contour):
        return curve.densified(spacing)
    pts = np.asarray(curve, dtype=float)
    return pts, arc_length(pts)


def nearest_samples(curve, mask, k=4, spacing=0.5):
    """Distance to and arc length of the nearest curve sample for every body
    pixel; equidistant samples resolve to the smaller arc length."""
    mask = np.asarray(mask, dtype=bool)
    pts, s = _curve_samples(curve, spacing)
    ys, xs = np.nonzero(mask)
    q = np.column_stack([xs, ys]).astype(float)
    k = min(k, len(pts))
    dist, idx = cKDTree(pts).query(q, k=k)
    dist = dist.reshape(len(q), k)
    idx = idx.reshape(len(q), k)
    tied = dist <= dist[:, :1] + 1e-9
    cand = np.where(tied, s[idx], np.inf)
    best = np.argmin(cand, axis=1)
    delta = np.full(mask.shape, np.nan)
    foot = np.full(mask.shape, np.nan)
    delta[ys, xs] = dist[:, 0]
    foot[ys, xs] = cand[np.arange(len(q)), best]
    return delta, foot


def smooth_contour(contour, half_window=10, degree=3, spacing=1.0):
    """Closed contour resampled every ``spacing`` px and replaced by local
    least-squares polynomial values (Savitzky-Golay, wrapped)."""
    pts, _ = contour.densified(spacing)
    n = len(pts)
    win = min(2 * half_window + 1, n - (1 - n % 2))
    sm = savgol_filter(pts, win, degree, axis=0, mode="wrap")
    return Contour(sm, closed=True)


def signed_distance(curve, mask, spacing=0.5):
    """Distance to a closed curve, negative for pixels outside it."""
    pts, _ = _curve_samples(curve, spacing)
    ys, xs = np.nonzero(mask)
    q = np.column_stack([xs, ys]).astype(float)
    dist, idx = cKDTree(pts).query(q)
    tan = np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
    rel = q - pts[idx]
    left = tan[idx, 0] * rel[:, 1] - tan[idx, 1] * rel[:, 0]
    orient = 1.0 if Contour(pts).signed_area() > 0 else -1.0
    out = np.full(mask.shape, np.nan)
    out[ys, xs] = np.where(orient * left >= 0, dist, -dist)
    return out


def distance_field(curve, mask, spacing=0.5):
    """Distance from each body pixel to the nearest sample of ``curve``."""
    return nearest_samples(curve, mask, spacing=spacing)[0]


def footpoint_field(curve, mask, spacing=0.5):
    """Arc length of the nearest sample of ``curve`` at each body pixel."""
    return nearest_samples(curve, mask, spacing=spacing)[1]


# ---------------------------------------------------------------------------
# flat-disk morphology

def disk_offsets(r):
    """Integer offsets with ``dx**2 + dy**2 <= r**2``."""
    r = int(r)
    d = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(d, d)
    keep = dx ** 2 + dy ** 2 <= r * r
    return np.column_stack([dx[keep], dy[keep]])


def ring_offsets(r):
    """Offsets in the disk of radius ``r`` but not in the one of ``r - 1``."""
    r = int(r)
    if r == 0:
        return np.zeros((1, 2), dtype=int)
    off = disk_offsets(r)
    rr = off[:, 0] ** 2 + off[:, 1] ** 2
    return off[rr > (r - 1) ** 2]


class _Morph:
    """Incremental sup or inf over growing disks, on the body only."""

    def __init__(self, f, op, pad):
        self.mask = field_mask(f)
        self.op = op
        fill = -np.inf if op is np.maximum else np.inf
        self.src = np.pad(np.where(self.mask, f, fill), pad, constant_values=fill)
        self.pad = pad
        self.radius = 0
        self.cur = np.where(self.mask, f, fill)

    def grow(self):
        self.radius += 1
        p = self.pad
        h, w = self.cur.shape
        for dx, dy in ring_offsets(self.radius):
            self.cur = self.op(self.cur, self.src[p + dy:p + dy + h, p + dx:p + dx + w])
        return self.result()

    def result(self):
        out = self.cur.copy()
        out[~self.mask] = np.nan
        return out


def _morph(f, r, op):
    r = int(r)
    if r < 0:
        raise ValueError("radius must be non-negative")
    m = _Morph(np.asarray(f, dtype=float), op, max(r, 1))
    for _ in range(r):
        m.grow()
    return m.result()


def dilate(f, r):
    """Sup of ``f`` over the body pixels of the disk of radius ``r``."""
    return _morph(f, r, np.maximum)


def erode(f, r):
    """Inf of ``f`` over the body pixels of the disk of radius ``r``."""
    return _morph(f, r, np.minimum)


# ---------------------------------------------------------------------------
# curvature deformation

def gradient_norm(f):
    """Central differences inside the body, one-sided at its border."""
    inside = field_mask(f)
    g = np.where(inside, f, 0.0)
    comps = []
    for ax in (0, 1):
        fwd = np.roll(g, -1, axis=ax)
        bwd = np.roll(g, 1, axis=ax)
        in_f = np.roll(inside, -1, axis=ax)
        in_b = np.roll(inside, 1, axis=ax)
        edge = [slice(None)] * 2
        edge[ax] = -1
        in_f[tuple(edge)] = False
        edge[ax] = 0
        in_b[tuple(edge)] = False
        d = np.zeros_like(g)
        both = in_f & in_b
        d[both] = (fwd[both] - bwd[both]) / 2.0
        only_f = in_f & ~in_b
        d[only_f] = fwd[only_f] - g[only_f]
        only_b = in_b & ~in_f
        d[only_b] = g[only_b] - bwd[only_b]
        comps.append(d)
    out = np.hypot(*comps)
    out[~inside] = np.nan
    return out


def phi0_field(delta0):
    """Log gradient norm of the distance field, clamped below at 1e-6."""
    return np.log(np.maximum(gradient_norm(delta0), 1e-6))


def kappa_reference(curvature, footpoint, arc=None):
    """``-sign(c(s0)) * SENT``; zero curvature selects the dilation branch.

    ``curvature`` is either a callable of arc length or an array of values
    at the arc lengths ``arc``.
    """
    inside = field_mask(footpoint)
    s0 = footpoint[inside]
    c = curvature(s0) if callable(curvature) else np.interp(s0, arc, curvature)
    out = np.full(footpoint.shape, np.nan)
    out[inside] = np.where(c > 0, -SENT, SENT)
    return out


def alpha_filter(g, kref, s, dilated=None, eroded=None):
    """``sup(erode(g, s), inf(dilate(g, s), kref))``."""
    plus = dilate(g, s) if dilated is None else dilated
    minus = erode(g, s) if eroded is None else eroded
    return np.maximum(minus, np.minimum(plus, kref))


def curvature_deformation(phi0, kref, s):
    """Curvature deformation at scale ``s``."""
    return np.exp(alpha_filter(phi0, kref, s))


@dataclass
class ScaleSpace:
    scales: np.ndarray
    fields: list


def deformation_stack(phi0, kref, s_max, keep=False):
    """Curvature deformation at scales ``0..s_max`` built incrementally.

    Returns ``(phi_min, sigma, stack)``; the stack is only filled when
    ``keep`` is set.
    """
    s_max = int(s_max)
    pad = max(s_max, 1)
    up = _Morph(phi0, np.maximum, pad)
    down = _Morph(phi0, np.minimum, pad)
    phi = np.exp(alpha_filter(phi0, kref, 0, up.result(), down.result()))
    best, sigma = phi.copy(), np.where(field_mask(phi0), 0.0, np.nan)
    fields = [phi] if keep else []
    for s in range(1, s_max + 1):
        phi = np.exp(alpha_filter(phi0, kref, s, up.grow(), down.grow()))
        better = phi < best
        best[better] = phi[better]
        sigma[better] = s
        if keep:
            fields.append(phi)
    return best, sigma, ScaleSpace(np.arange(len(fields)), fields)


def minimizing_scale(stack):
    """First scale at which each pixel attains its minimum over the stack."""
    arr = np.stack(stack.fields)
    inside = field_mask(arr[0])
    filled = np.where(inside, arr, np.inf)
    sigma = np.asarray(stack.scales, dtype=float)[np.argmin(filled, axis=0)]
    sigma[~inside] = np.nan
    return sigma


def default_scale(delta0):
    return int(np.ceil(np.nanmax(delta0)))


# ---------------------------------------------------------------------------
# reference curve and re-registration

@dataclass
class ReferenceCurve:
    points: np.ndarray        # ordered, 0.5 px apart, tail end first
    arc: np.ndarray
    pixels: np.ndarray        # selected ridge pixels (x, y)
    flags: list = field(default_factory=list)

    @property
    def length(self):
        return float(self.arc[-1])


def ridge_pixels(phi_min, phi_start, delta0, threshold=0.3, min_depth=1.5, link=2):
    """Pixels whose curvature deformation deviates from 1 by more than
    ``threshold`` already at scale 0, at least ``min_depth`` inside the body.

    The minimum over scale spreads the ridge value across the contracted
    half of the body; the pixels deviating at scale 0 are its inner edge.
    Groups closer than ``link`` pixels are merged; the largest group is
    returned with the sizes of the others."""
    sel = ((np.abs(phi_min - 1.0) > threshold) & (np.abs(phi_start - 1.0) > threshold)
           & (delta0 >= min_depth))
    sel &= field_mask(phi_min)
    if not sel.any():
        raise DisconnectedReference("no pixel passes the curvature deformation threshold")
    grown = ndimage.binary_dilation(sel, structure=disk_mask(link))
    labels, n = ndimage.label(grown, structure=np.ones((3, 3)))
    sizes = np.bincount(labels[sel], minlength=n + 1)
    best = int(np.argmax(sizes))
    others = sorted((int(v) for k, v in enumerate(sizes) if k not in (0, best) and v > 0), reverse=True)
    ys, xs = np.nonzero(sel & (labels == best))
    return np.column_stack([xs, ys]).astype(float), others


def disk_mask(r):
    off = disk_offsets(r)
    m = np.zeros((2 * r + 1, 2 * r + 1), dtype=bool)
    m[off[:, 1] + r, off[:, 0] + r] = True
    return m


def axial_coordinate(footpoint, contour_length, head_arc):
    """Position along the body in ``[0, 1]`` from the footpoint arc length,
    for a contour starting at the tail; both sides run tail to head."""
    s = np.asarray(footpoint, dtype=float)
    upper = s <= head_arc
    return np.where(upper, s / head_arc, (contour_length - s) / (contour_length - head_arc))


def reference_curve(phi_min, phi_start, delta0, footpoint, contour, head_arc,
                    threshold=0.3, bin_width=2.0, bandwidth=6.0, spacing=0.5,
                    edge_offset=0.5, major=0.2, trim=1.2, end_look=15.0, refine=2):
    """Order the ridge pixels from tail to head into a smooth curve.

    ``contour`` must start at the tail; ``head_arc`` is the arc length of
    the head on it.  Pixels past a cap centre are dropped, the rest are
    binned by axial position and each bin is replaced by its mean.  Local
    quadratic regression in the axial position smooths the sequence; the
    pixels are then reordered by their projection on that curve and smoothed
    again (``refine`` rounds), dropping about ``trim`` depths at each end
    where flat caps and corners branch the ridge.  Both ends are continued
    along circular arcs matching their end curvature to the body border plus
    ``edge_offset``.
    """
    mask = field_mask(phi_min)
    pix, others = ridge_pixels(phi_min, phi_start, delta0, threshold)
    flags = []
    if others and others[0] >= major * len(pix):
        flags.append("disconnected-reference")
    xi, yi = pix[:, 0].astype(int), pix[:, 1].astype(int)
    # pixels past a cap centre have footpoints all around the cap
    ends = np.array([contour.points[0],
                     contour.points[np.argmin(np.abs(contour.cumulative_length - head_arc))]])
    reach = np.min(np.linalg.norm(pix[:, None, :] - ends[None], axis=2), axis=1)
    keep = reach >= trim * delta0[yi, xi] + 1.0
    if keep.sum() >= 2:
        pix, xi, yi = pix[keep], xi[keep], yi[keep]
    a = axial_coordinate(footpoint[yi, xi], contour.length, head_arc)
    n_bins = max(int(round(0.5 * contour.length / bin_width)), 2)
    b = np.minimum((a * n_bins).astype(int), n_bins - 1)
    order = []
    for k in np.unique(b):
        sel = b == k
        order.append((a[sel].mean(), pix[sel].mean(axis=0)))
    order.sort(key=lambda t: t[0])
    pts = np.array([p for _, p in order])
    if len(pts) < 2:
        raise DisconnectedReference("reference curve has fewer than two bins")
    u = np.array([q for q, _ in order]) * 0.5 * contour.length
    pts = local_smooth(u, pts, bandwidth)
    depth = delta0[yi, xi]
    for it in range(refine):
        # the axial position is only roughly monotone along the body; reorder
        # by the projection on the current curve
        proj = arc_length(pts)[cKDTree(pts).query(pix)[1]]
        if it == 0:
            # flat ends and corners branch the ridge over about one depth
            total = proj.max()
            d_tail = np.median(depth[proj <= proj.min() + end_look])
            d_head = np.median(depth[proj >= total - end_look])
            keep = (proj >= trim * d_tail) & (proj <= total - trim * d_head)
            if np.unique((proj[keep] / bin_width).astype(int)).size >= 2:
                pix, depth, proj = pix[keep], depth[keep], proj[keep]
        b = (proj / bin_width).astype(int)
        keys = np.unique(b)
        if len(keys) < 2:
            break
        u = np.array([proj[b == k].mean() for k in keys])
        means = np.array([pix[b == k].mean(axis=0) for k in keys])
        pts = local_smooth(u, means, bandwidth)
    look = max(3, int(round(end_look / 0.25)))
    v, k = _end_heading(pts, look)
    head = _extension(pts[-1], v, mask, edge_offset, kappa=k)
    v, k = _end_heading(pts[::-1], look)
    tail = _extension(pts[0], v, mask, edge_offset, kappa=k)
    pts = np.vstack([tail[::-1], pts, head])
    arc = arc_length(pts)
    grid = np.arange(0.0, arc[-1] + 1e-9, spacing)
    dense = np.column_stack([np.interp(grid, arc, pts[:, 0]), np.interp(grid, arc, pts[:, 1])])
    return ReferenceCurve(dense, grid, pix, flags)


def local_smooth(u, pts, bandwidth, degree=2, step=0.25):
    """Gaussian-weighted local polynomial regression of ``pts`` on ``u``,
    evaluated every ``step`` over the range of ``u``."""
    grid = np.arange(u[0], u[-1] + 1e-9, step)
    d = u[None, :] - grid[:, None]
    w = np.exp(-0.5 * (d / bandwidth) ** 2)
    V = np.stack([d ** k for k in range(degree + 1)], axis=-1)      # (g, n, k)
    A = np.einsum("gn,gnk,gnl->gkl", w, V, V)
    b = np.einsum("gn,gnk,nd->gkd", w, V, pts)
    A += 1e-9 * np.eye(degree + 1)
    coef = np.linalg.solve(A, b)
    return coef[:, 0, :]


def _rotate(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _end_heading(pts, look, max_kappa=0.05):
    """Direction and curvature at the last point of an evenly spaced curve,
    from the turn between its last two chords of ``look`` points."""
    look = min(look, max((len(pts) - 1) // 2, 1))
    a, b, c = pts[-1 - 2 * look], pts[-1 - look], pts[-1]
    d1, d2 = b - a, c - b
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    if n1 < 1e-9 or n2 < 1e-9:
        d = c - pts[0]
        return d / max(np.linalg.norm(d), 1e-9), 0.0
    turn = np.arctan2(d1[0] * d2[1] - d1[1] * d2[0], d1 @ d2)
    kappa = float(np.clip(turn / (0.5 * (n1 + n2)), -max_kappa, max_kappa))
    return _rotate(d2 / n2, 0.5 * kappa * n2), kappa


def _extension(start, direction, mask, edge_offset, kappa=0.0, step=0.5):
    """Points from ``start`` along a circular arc of curvature ``kappa``
    leaving in ``direction``, until the body is left, then ``edge_offset``
    further."""
    out = []
    p = np.asarray(start, dtype=float)
    v = np.asarray(direction, dtype=float)
    h, w = mask.shape
    while True:
        q = p + step * _rotate(v, 0.5 * kappa * step)
        xi, yi = int(round(q[0])), int(round(q[1]))
        if not (0 <= xi < w and 0 <= yi < h and mask[yi, xi]):
            break
        p, v = q, _rotate(v, kappa * step)
        out.append(p)
    out.append(p + edge_offset * v)
    return np.array(out)


@dataclass
class Unwrapped:
    image: np.ndarray
    mask: np.ndarray
    x_tilde: np.ndarray
    y_tilde: np.ndarray
    origin: tuple             # (row, col) of x_tilde = 0, y_tilde = 0
    density: np.ndarray = None   # scattered body area per cell

    def width_profile(self):
        """Scattered body area per column; sums to the input pixel count."""
        if self.density is None:
            return self.mask.sum(axis=0).astype(float)
        return self.density.sum(axis=0)

    def shape(self):
        """Straightened shape with one station per occupied column."""
        w = self.width_profile()
        cols = np.nonzero(w > 0)[0]
        w = w[cols[0]:cols[-1] + 1]
        return StraightenedShape(np.arange(len(w), dtype=float), w / 2.0)


def _signed_to(samples, q):
    dist, idx = cKDTree(samples).query(q)
    tan = np.roll(samples, -1, axis=0) - np.roll(samples, 1, axis=0)
    rel = q - samples[idx]
    left = tan[idx, 0] * rel[:, 1] - tan[idx, 1] * rel[:, 0]
    orient = 1.0 if Contour(samples).signed_area() > 0 else -1.0
    return np.where(orient * left >= 0, dist, -dist)


def straight_coordinates(points, reference, contour):
    """Straightened coordinates ``(x_tilde, y_tilde)`` of arbitrary points.

    ``x_tilde`` is the arc length of the nearest reference point and
    ``y_tilde`` the change of contour distance from that point, signed by
    the side of the reference the point lies on.  Points outside the
    contour count negative distances, so they land beyond the edge.
    """
    q = np.asarray(points, dtype=float)
    ref = reference.points
    _, idx = cKDTree(ref).query(q)
    tan = np.gradient(ref, axis=0)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    rel = q - ref[idx]
    side = np.sign(tan[idx, 0] * rel[:, 1] - tan[idx, 1] * rel[:, 0])
    side[side == 0] = 1.0
    samples, _ = _curve_samples(contour)
    d_ref = cKDTree(samples).query(ref)[0][idx]
    return reference.arc[idx], side * (d_ref - _signed_to(samples, q))


def registration(reference, mask, contour):
    """Straightened coordinate fields at the body pixel centres."""
    ys, xs = np.nonzero(mask)
    xt, yt = straight_coordinates(np.column_stack([xs, ys]), reference, contour)
    x_t = np.full(mask.shape, np.nan)
    y_t = np.full(mask.shape, np.nan)
    x_t[ys, xs] = xt
    y_t[ys, xs] = yt
    return x_t, y_t


def unwrap_image(image, mask, reference, contour, supersample=2, fill_radius=2, margin=4):
    """Scatter body pixels to their straightened coordinates.

    Each pixel is scattered as ``supersample**2`` sub-pixel samples carrying
    its intensity, which avoids lattice aliasing on rotated bodies.  Cell
    ``k`` holds coordinates in ``[k, k + 1)``.  Collisions are averaged;
    holes up to ``fill_radius`` are closed and filled from the nearest
    scattered cell.
    """
    mask = np.asarray(mask, dtype=bool)
    img = np.asarray(image, dtype=float)
    ys, xs = np.nonzero(mask)
    n = int(supersample)
    sub = (np.arange(n) + 0.5) / n - 0.5
    ox, oy = np.meshgrid(sub, sub)
    ox, oy = ox.ravel(), oy.ravel()
    q = np.column_stack([(xs[:, None] + ox).ravel(), (ys[:, None] + oy).ravel()])
    xt, yt = straight_coordinates(q, reference, contour)
    vals = np.repeat(img[ys, xs], n * n, axis=0)
    col = np.floor(xt).astype(int)
    row = np.floor(yt).astype(int)
    r0 = -row.min() + margin
    c0 = -min(col.min(), 0) + margin
    shape = (row.max() + r0 + margin + 1, col.max() + c0 + margin + 1)
    rr, cc = row + r0, col + c0
    chan = img.shape[2:] if img.ndim == 3 else ()
    acc = np.zeros(shape + chan)
    cnt = np.zeros(shape)
    np.add.at(acc, (rr, cc), vals)
    np.add.at(cnt, (rr, cc), 1)
    support = cnt > 0
    closed = ndimage.binary_closing(support, structure=disk_mask(fill_radius))
    closed = ndimage.binary_fill_holes(closed) & ndimage.binary_dilation(support, disk_mask(fill_radius))
    out = acc / np.maximum(cnt, 1)[(...,) + (None,) * len(chan)]
    holes = closed & ~support
    if holes.any():
        _, (iy, ix) = ndimage.distance_transform_edt(~support, return_indices=True)
        out[holes] = out[iy[holes], ix[holes]]
    x_t, y_t = registration(reference, mask, contour)
    return Unwrapped(out, closed, x_t, y_t, (r0, c0), cnt / (n * n))


@dataclass
class MorphResult:
    contour: Contour
    delta0: np.ndarray
    s0: np.ndarray
    phi0: np.ndarray
    kref: np.ndarray
    phi_min: np.ndarray
    sigma: np.ndarray
    reference: ReferenceCurve
    unwrapped: Unwrapped
    flags: list


def unwrap_morph(mask, image=None, s_max=None, threshold=0.3, spacing=0.5,
                 curvature_window=None, smooth_window=10, contour=None):
    """Full morphological pipeline on a binary mask (and optional image)."""
    mask = np.asarray(mask, dtype=bool)
    if contour is None:
        contour = trace_contour(mask)
    marks = find_landmarks(contour)
    head_pt = contour.points[marks.head_index]
    contour = smooth_contour(contour.roll(marks.tail_index), smooth_window)
    head_arc = float(contour.cumulative_length[np.argmin(np.linalg.norm(contour.points - head_pt, axis=1))])
    delta0, s0 = nearest_samples(contour, mask, spacing=spacing)
    phi0 = phi0_field(delta0)
    if curvature_window is None:
        curvature_window = max(10, int(np.ceil(2.0 * np.nanmax(delta0))))
    kap = local_curvature(contour.points, closed=True, half_window=curvature_window, degree=3)
    kref = kappa_reference(kap, s0, contour.cumulative_length)
    if s_max is None:
        s_max = default_scale(delta0)
    phi_min, sigma, _ = deformation_stack(phi0, kref, s_max)
    ref = reference_curve(phi_min, np.exp(phi0), delta0, s0, contour, head_arc, threshold)
    if image is None:
        image = mask.astype(float)
    un = unwrap_image(image, mask, ref, contour)
    flags = list(marks.flags) + list(ref.flags)
    return MorphResult(contour, delta0, s0, phi0, kref, phi_min, sigma, ref, un, flags)
