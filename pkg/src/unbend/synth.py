"""Forward model: straight templates, planar bending and boundary noise.

A body is described by an axis ``mu(s)``, ``s`` in ``[0, L]``, and a width
profile ``w(s)``; its points are ``mu(s) + d n(s)`` with ``|d| <= w(s) / 2``.
Bending integrates the unit-speed frame from a curvature profile, so cross
sections stay straight, perpendicular to the axis and of unchanged length.
"""

from dataclasses import dataclass, field
import json
from math import cos, sin

import numpy as np
from scipy import ndimage

from .errors import InvalidProfile, SelfOverlap

STEP = 0.25
MAX_BEND = 0.8
CAP_STYLES = ("round", "flat", "taper")


@dataclass
class Template:
    length: float
    stations: np.ndarray
    widths: np.ndarray
    cap_style: tuple = ("taper", "round")

    def width(self, s):
        return np.interp(s, self.stations, self.widths, left=0.0, right=0.0)

    @property
    def area(self):
        return float(np.trapezoid(self.widths, self.stations))


class BendProfile:
    """Piecewise polynomial curvature ``kappa(s)`` in 1/px.

    ``segments`` is a list of ``(s_start, [c0, c1, ...])``; on each segment
    ``kappa = sum c_k (s - s_start)**k`` until the next segment starts.
    """

    def __init__(self, segments):
        if np.isscalar(segments):
            segments = [(0.0, [float(segments)])]
        self.segments = sorted((float(s0), [float(c) for c in coeffs]) for s0, coeffs in segments)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        starts = [seg[0] for seg in self.segments]
        which = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(starts) - 1)
        for k, (s0, coeffs) in enumerate(self.segments):
            sel = which == k
            out[sel] = np.polynomial.polynomial.polyval(s[sel] - s0, coeffs)
        return out

    def to_json(self):
        return [[s0, coeffs] for s0, coeffs in self.segments]

    @classmethod
    def parse(cls, text):
        """Accepts a number (constant curvature) or a JSON segment list."""
        value = json.loads(text) if isinstance(text, str) else text
        return cls(value)


def _cap_factor(dist, radius, style, taper_len, tip_ratio):
    if style == "flat":
        return np.ones_like(dist)
    if style == "round":
        u = np.clip(dist / max(radius, 1e-9), 0.0, 1.0)
        return np.sqrt(np.clip(1.0 - (1.0 - u) ** 2, 0.0, 1.0))
    if style == "taper":
        u = np.clip(dist / max(taper_len, 1e-9), 0.0, 1.0)
        return tip_ratio + (1.0 - tip_ratio) * u
    raise InvalidProfile(f"unknown cap style {style!r}")


def make_template(length, width_profile, cap_style=("taper", "round"),
                  taper_angle=20.0, tip_width=3.0, margin=12):
    """Straight template with its mask and axis, axis along +x.

    ``width_profile`` is a number, a callable of arc length, or an array of
    widths sampled uniformly over ``[0, length]``.  Caps are shaped inside
    ``[0, length]`` so the axis length is exactly ``length``; ``taper`` ends
    close at ``taper_angle`` degrees down to ``tip_width`` pixels.
    """
    if length <= 0:
        raise InvalidProfile("length must be positive")
    if isinstance(cap_style, str):
        cap_style = (cap_style, cap_style)
    n = int(round(length / STEP))
    s = np.linspace(0.0, length, n + 1)
    if callable(width_profile):
        w = np.asarray(width_profile(s), dtype=float) * np.ones_like(s)
    elif np.isscalar(width_profile):
        w = np.full_like(s, float(width_profile))
    else:
        prof = np.asarray(width_profile, dtype=float)
        w = np.interp(s, np.linspace(0.0, length, len(prof)), prof)
    if np.any(w <= 0):
        raise InvalidProfile("width profile must be positive")
    if w.max() >= length / 3.0:
        raise InvalidProfile(f"max width {w.max():.1f} is not below length/3")
    half_angle = np.radians(taper_angle) / 2.0
    for end, style in zip((0, -1), cap_style):
        w_end = w[end]
        dist = s if end == 0 else length - s
        taper_len = (w_end - tip_width) / (2.0 * np.tan(half_angle))
        w = w * _cap_factor(dist, w_end / 2.0, style, taper_len, min(tip_width / w_end, 1.0))
    template = Template(float(length), s, w, tuple(cap_style))
    body = bend(template, BendProfile(0.0), margin=margin)
    return template, body.mask, body.axis


@dataclass
class BentBody:
    """A rasterised body with its ground truth."""

    mask: np.ndarray
    axis: np.ndarray          # mu(s) at the template stations, (x, y)
    tangents: np.ndarray
    normals: np.ndarray
    stations: np.ndarray
    widths: np.ndarray
    kappa: np.ndarray
    profile: BendProfile = None
    meta: dict = field(default_factory=dict)

    @property
    def sections(self):
        """Section end points ``(upper, lower)`` at every station."""
        h = (self.widths / 2.0)[:, None]
        return self.axis + h * self.normals, self.axis - h * self.normals

    def truth(self, every=4):
        """JSON-ready ground truth; stations are thinned by ``every``."""
        sl = slice(None, None, every)
        return {
            "stations": self.stations[sl].tolist(),
            "axis": self.axis[sl].tolist(),
            "widths": self.widths[sl].tolist(),
            "kappa_spec": self.profile.to_json() if self.profile else None,
            **self.meta,
        }


def integrate_frame(kappa, length, step=STEP, theta0=0.0):
    """RK4 integration of ``theta' = kappa, (x', y') = (cos, sin) theta``."""
    n = int(round(length / step))
    h = length / n
    s = np.linspace(0.0, length, n + 1)
    # kappa depends on s only, so every RK4 stage value is known up front
    k = np.asarray(kappa(np.linspace(0.0, length, 2 * n + 1)), dtype=float)
    state = np.zeros((n + 1, 3))
    th, x, y = theta0, 0.0, 0.0
    state[0] = (th, x, y)
    for i in range(n):
        k1, k2, k4 = k[2 * i], k[2 * i + 1], k[2 * i + 2]
        t2 = th + h / 2 * k1
        t3 = th + h / 2 * k2
        t4 = th + h * k2
        x += h / 6 * (cos(th) + 2 * cos(t2) + 2 * cos(t3) + cos(t4))
        y += h / 6 * (sin(th) + 2 * sin(t2) + 2 * sin(t3) + sin(t4))
        th += h / 6 * (k1 + 4 * k2 + k4)
        state[i + 1] = (th, x, y)
    return s, state[:, 0], state[:, 1:]


def bend(template, profile, theta0=0.0, margin=12, check_overlap=True):
    """Bend ``template`` along the curvature ``profile`` and rasterise it.

    Raises :class:`SelfOverlap` when ``|kappa| w / 2`` exceeds 0.8 anywhere
    or when sections far apart along the axis paint the same pixel.
    """
    if not isinstance(profile, BendProfile):
        profile = BendProfile(profile)
    s, theta, axis = integrate_frame(profile, template.length, theta0=theta0)
    w = template.width(s)
    kappa = profile(s)
    worst = float(np.max(np.abs(kappa) * w / 2.0))
    if worst > MAX_BEND:
        raise SelfOverlap(f"max |kappa| w/2 = {worst:.3f} exceeds {MAX_BEND}")
    tangents = np.column_stack([np.cos(theta), np.sin(theta)])
    normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
    upper = axis + (w / 2.0)[:, None] * normals
    lower = axis - (w / 2.0)[:, None] * normals
    lo = np.minimum(upper.min(axis=0), lower.min(axis=0))
    hi = np.maximum(upper.max(axis=0), lower.max(axis=0))
    # Integer extents land on half-integer coordinates, so a straight body
    # of integer length and even width covers exactly length * width pixels.
    shift = margin - np.floor(lo) + 0.5
    axis = axis + shift
    shape = (int(np.ceil(hi[1] + shift[1])) + margin + 1, int(np.ceil(hi[0] + shift[0])) + margin + 1)
    upper = axis + (w / 2.0)[:, None] * normals
    lower = axis - (w / 2.0)[:, None] * normals
    mask = _paint_strips(upper, lower, shape, template.length, w.max(), check_overlap)
    return BentBody(mask, axis, tangents, normals, s, w, kappa, profile,
                    {"length": template.length, "cap_style": list(template.cap_style)})


def _paint_strips(upper, lower, shape, length, wmax, check_overlap, stride=2):
    owner = np.full(shape, -1, dtype=np.int64)
    mask = np.zeros(shape, dtype=bool)
    n = len(upper)
    idx = list(range(0, n - 1, stride))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    far = int(np.ceil((2.0 * wmax + 4.0) / STEP))
    for a, b in zip(idx[:-1], idx[1:]):
        quad = np.array([upper[a], upper[b], lower[b], lower[a]])
        x0, y0 = np.floor(quad.min(axis=0)).astype(int)
        x1, y1 = np.ceil(quad.max(axis=0)).astype(int)
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        px, py = xs.ravel().astype(float), ys.ravel().astype(float)
        inside = np.ones(px.shape, dtype=bool)
        # convex quad, either orientation: all edge cross products share a sign
        signs = []
        for k in range(4):
            p, q = quad[k], quad[(k + 1) % 4]
            signs.append((q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0]))
        signs = np.array(signs)
        eps = 1e-9
        inside = np.all(signs >= -eps, axis=0) | np.all(signs <= eps, axis=0)
        ok = inside & (px >= 0) & (py >= 0) & (px < shape[1]) & (py < shape[0])
        if not ok.any():
            continue
        xi, yi = px[ok].astype(int), py[ok].astype(int)
        if check_overlap:
            prev = owner[yi, xi]
            clash = (prev >= 0) & (a - prev > far)
            if clash.any():
                raise SelfOverlap(f"sections {prev[clash][0]} and {a} paint the same pixel")
            owner[yi, xi] = np.where(prev >= 0, prev, a)
        mask[yi, xi] = True
    return mask


def add_boundary_noise(mask, amplitude, seed, correlation=2.0):
    """Perturb the body boundary along its normal by smooth zero-mean noise.

    The perturbation is a Gaussian-smoothed random field with RMS
    ``amplitude / 2`` on the boundary band, clipped to ``+-amplitude`` and
    added to the signed distance
    of the mask; a final constant shift makes the realised signed
    perturbation average to zero, so the area is preserved.
    """
    mask = np.asarray(mask, dtype=bool)
    if amplitude <= 0:
        return mask.copy()
    if amplitude > 2.0:
        raise ValueError("amplitude must not exceed 2 px")
    inside = ndimage.distance_transform_edt(mask) - 0.5
    outside = ndimage.distance_transform_edt(~mask) - 0.5
    sd = np.where(mask, inside, -outside)
    rng = np.random.default_rng(seed)
    field_ = ndimage.gaussian_filter(rng.standard_normal(mask.shape), correlation, mode="wrap")
    band = np.abs(sd) <= 1.0
    field_ -= field_[band].mean()
    field_ = np.clip(field_ * (0.5 * amplitude / field_[band].std()), -amplitude, amplitude)
    value = sd + field_
    # recentre so the area is unchanged
    zone = np.abs(sd) <= amplitude + 1.0
    fixed_inside = int(np.count_nonzero(mask & ~zone))
    want = int(np.count_nonzero(mask)) - fixed_inside
    v = np.sort(value[zone])[::-1]
    if 0 < want < len(v):
        c = -0.5 * (v[want - 1] + v[want])
    else:
        c = 0.0
    out = np.where(zone, value + c > 0, mask)
    return out
