"""Synthetic round trips and the desk-scale classification dataset."""

import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .classify import ProfileCurve, consistency_metrics
from .errors import SelfOverlap
from .morph import unwrap_morph
from .neutral import unwrap_neutral
from .synth import BendProfile, add_boundary_noise, bend, make_template


@dataclass(frozen=True)
class TemplateSpec:
    length: float
    width: object
    caps: tuple
    tip_width: float = 5.0

    def build(self):
        return make_template(self.length, self.width, self.caps, tip_width=self.tip_width)


def _w0(s):
    return 24 + 8 * np.sin(np.pi * s / 260)


def _w2(s):
    return 30 - 6 * s / 300


def _w3(s):
    return 28 + 6 * np.sin(2 * np.pi * s / 240) ** 2


TEMPLATES = (
    TemplateSpec(260, _w0, ("taper", "round")),
    TemplateSpec(220, 26.0, ("round", "round")),
    TemplateSpec(300, _w2, ("taper", "flat")),
    TemplateSpec(240, _w3, ("round", "taper")),
)

BENDS = (
    BendProfile(0.004),
    BendProfile(-0.008),
    BendProfile([(0, [-0.01, 0.00008])]),
    BendProfile([(0, [0.012]), (120, [-0.012])]),
    BendProfile([(0, [0.0, 0.0, 3e-7])]),
)


def width_error(w, w_true, max_shift=12, flip=True):
    """``sum |w - w_true| / sum w_true`` over unit stations at the best
    integer shift (and orientation, when ``flip``)."""
    w = np.asarray(w, dtype=float)
    best = np.inf
    for ref in ((w_true, np.asarray(w_true)[::-1]) if flip else (w_true,)):
        ref = np.asarray(ref, dtype=float)
        for d in range(-max_shift, max_shift + 1):
            a = np.arange(len(w))
            b = a + d
            ok = (b >= 0) & (b < len(ref))
            if ok.sum() < 0.8 * min(len(ref), len(w)):
                continue
            err = np.abs(w[ok] - ref[b[ok]]).sum() / ref[b[ok]].sum()
            best = min(best, err)
    return float(best)


def registered_iou(a, b, search=4):
    """Best IoU of two masks over the four axis flips of ``a`` and integer
    translations within ``search`` px of centroid alignment."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    H = 2 * max(a.shape[0], b.shape[0]) + 2 * search + 4
    W = 2 * max(a.shape[1], b.shape[1]) + 2 * search + 4

    def place(m, shift):
        c = np.array(ndimage.center_of_mass(m))
        o = np.rint(np.array([H, W]) / 2 - c).astype(int) + shift
        out = np.zeros((H, W), dtype=bool)
        out[o[0]:o[0] + m.shape[0], o[1]:o[1] + m.shape[1]] = m
        return out

    B = place(b, (0, 0))
    best = 0.0
    for fa in (a, a[:, ::-1], a[::-1], a[::-1, ::-1]):
        for dy in range(-search, search + 1):
            for dx in range(-search, search + 1):
                A = place(fa, (dy, dx))
                best = max(best, (A & B).sum() / (A | B).sum())
    return float(best)


@dataclass
class RoundTrip:
    template: int
    bend: int
    length_true: float
    neutral: object
    morph: object
    mask_true: np.ndarray
    width_true: np.ndarray
    seconds_neutral: float
    seconds_morph: float
    mask: np.ndarray = None
    body: object = None

    def summary(self):
        wn = 2.0 * self.neutral.shape.resample(1.0)[1]
        wm = self.morph.unwrapped.width_profile()
        wm = wm[wm > 0]
        return {
            "template": self.template,
            "bend": self.bend,
            "image_shape": list(self.mask_true.shape),
            "length_true": self.length_true,
            "length_neutral": self.neutral.shape.length,
            "length_reference": self.morph.reference.length,
            "width_error_neutral": width_error(wn, self.width_true),
            "width_error_morph": width_error(wm, self.width_true),
            "iou_morph": registered_iou(self.morph.unwrapped.mask, self.mask_true),
            "cross_method": width_error(wm, wn, flip=False),
            "flags_neutral": list(self.neutral.flags),
            "flags_morph": list(self.morph.flags),
        }


def roundtrip(ti, bi, noise=1.0, seed=None, morph=True):
    spec = TEMPLATES[ti]
    tpl, tmask, _ = spec.build()
    body = bend(tpl, BENDS[bi], theta0=0.3 * bi)
    seed = 10 * ti + bi if seed is None else seed
    m = add_boundary_noise(body.mask, noise, seed=seed)
    t0 = time.perf_counter()
    rn = unwrap_neutral(m)
    t1 = time.perf_counter()
    rm = unwrap_morph(m) if morph else None
    t2 = time.perf_counter()
    wt = tpl.width(np.arange(0.0, tpl.length + 1e-9))
    return RoundTrip(ti, bi, tpl.length, rn, rm, tmask, wt, t1 - t0, t2 - t1, m, body)


def roundtrip_suite(noise=1.0, cases=None, morph=True, timings=False):
    """Every template under every bend; returns ``(report, runs)``."""
    if cases is None:
        cases = [(ti, bi) for ti in range(len(TEMPLATES)) for bi in range(len(BENDS))]
    runs = [roundtrip(ti, bi, noise, morph=morph) for ti, bi in cases]
    rows = []
    for r in runs:
        row = r.summary() if morph else {
            "template": r.template, "bend": r.bend,
            "length_neutral": r.neutral.shape.length, "length_true": r.length_true,
            "width_error_neutral": width_error(2.0 * r.neutral.shape.resample(1.0)[1], r.width_true)}
        if timings:
            row["seconds_neutral"] = r.seconds_neutral
            row["seconds_morph"] = r.seconds_morph
        rows.append(row)
    per_template = {}
    for ti in sorted({r.template for r in runs}):
        shapes = [r.neutral.shape for r in runs if r.template == ti]
        if len(shapes) >= 2:
            per_template[ti] = consistency_metrics(shapes).to_dict()
    report = {"noise": noise, "cases": rows, "consistency": per_template}
    for key in ("width_error_neutral", "width_error_morph", "iou_morph", "cross_method"):
        vals = [row[key] for row in rows if key in row]
        if vals:
            report[key] = {"mean": float(np.mean(vals)), "min": float(np.min(vals)),
                           "max": float(np.max(vals))}
    for m in ("a1", "a2", "a3", "a4", "a5"):
        vals = np.concatenate([np.abs(c[m]["values"]) for c in per_template.values()]) if per_template else []
        if len(vals):
            report[f"{m}_mean_abs"] = float(np.mean(vals))
    return report, runs


# ---------------------------------------------------------------------------
# classification dataset

FAMILIES = {
    "A": (240, lambda u: 26.0 + 0.0 * u),
    "B": (250, lambda u: 22.0 + 8.0 * np.sin(np.pi * u)),
    "C": (280, lambda u: 30.0 - 8.0 * u),
    "D": (260, lambda u: 24.0 + 6.0 * np.sin(2 * np.pi * u) ** 2),
    "E": (300, lambda u: 24.0 + 0.0 * u),
    "F": (230, lambda u: 28.0 - 6.0 * np.sin(np.pi * u)),
}


def family_sample(length, width_fn, rng, length_sd=0.02, width_sd=0.03, noise=1.0):
    """One randomly bent, noisy, neutral-line-unwrapped member of a family."""
    L = length * (1.0 + length_sd * rng.standard_normal())
    scale = 1.0 + width_sd * rng.standard_normal()
    tpl, _, _ = make_template(L, lambda s: scale * width_fn(s / L), ("taper", "round"), tip_width=5)
    while True:
        k0 = rng.uniform(-1, 1) * 2.5 / L
        k1 = rng.uniform(-1, 1) * 4.0 / L ** 2
        try:
            body = bend(tpl, BendProfile([(0, [k0, k1])]), theta0=rng.uniform(0, 2 * np.pi))
            break
        except SelfOverlap:
            continue
    m = add_boundary_noise(body.mask, noise, seed=int(rng.integers(1 << 30)))
    return unwrap_neutral(m).shape


def family_dataset(n_per_family=30, seed=7, families=None, **kw):
    """Profile curves and labels of the synthetic families."""
    rng = np.random.default_rng(seed)
    families = FAMILIES if families is None else families
    curves, labels = [], []
    for lab, (L, wf) in families.items():
        for _ in range(n_per_family):
            shape = family_sample(L, wf, rng, **kw)
            curves.append(ProfileCurve.from_shape(shape, lab).samples)
            labels.append(lab)
    return curves, labels
