"""Acceptance criteria on the synthetic round-trip suite and the family
dataset.  Each test prints one PASS/FAIL line with the measured values."""

import time

import numpy as np
import pytest

from unbend.classify import consistency_metrics, evaluate_splits, format_table
from unbend.evaluation import BENDS, TEMPLATES, family_dataset, roundtrip_suite
from unbend.morph import SENT, alpha_filter, as_field, dilate, disk_offsets, erode, unwrap_morph
from unbend.neutral import StraightenedShape, delta_phi, unwrap_neutral
from unbend.synth import BendProfile, add_boundary_noise, bend, make_template


@pytest.fixture
def emit(capsys):
    def _emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}")
    return _emit


@pytest.fixture(scope="module")
def suite():
    t0 = time.perf_counter()
    report, runs = roundtrip_suite(noise=1.0)
    return report, runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def splits():
    curves, labels = family_dataset(30, seed=7)
    return evaluate_splits(curves, labels, n_splits=200, seed=0)


# ---------------------------------------------------------------------------
# 1-3: round trips

def _full_canvas_seconds():
    # a long, wide body bent into a half turn, centred on a 512 x 512 canvas
    L = 640
    tpl, _, _ = make_template(L, lambda s: 44 + 14 * np.sin(np.pi * s / L), ("taper", "round"))
    m = add_boundary_noise(bend(tpl, BendProfile(1 / 210), theta0=0.4).mask, 1.0, seed=3)
    h, w = m.shape
    canvas = np.zeros((512, 512), bool)
    canvas[(512 - h) // 2:(512 - h) // 2 + h, (512 - w) // 2:(512 - w) // 2 + w] = m
    t0 = time.perf_counter()
    r = unwrap_neutral(canvas)
    return time.perf_counter() - t0, r.shape.length / L


def test_criterion_1_neutral_round_trip(suite, emit):
    report, runs, _ = suite
    assert len(runs) >= 20 and len({r.template for r in runs}) == 4
    # every bend keeps |kappa| * half width within 0.8
    bend_ratio = max(float(np.max(np.abs(r.body.kappa) * r.body.widths / 2)) for r in runs)
    a1, a3, a5 = (report[f"{m}_mean_abs"] for m in ("a1", "a3", "a5"))
    slowest = max(r.seconds_neutral for r in runs)
    canvas_s, canvas_len = _full_canvas_seconds()
    ok = (bend_ratio <= 0.8 and a1 <= 1.5 and a3 <= 3.0 and a5 <= 4.0 and slowest <= 10.0
          and canvas_s <= 10.0)
    emit(1, "neutral round trip",
         ok, f"{len(runs)} bends, max |k|w/2={bend_ratio:.2f}, a1={a1:.2f}% a3={a3:.2f}% "
             f"a5={a5:.2f}% (mean |a|), slowest suite case {slowest:.2f}s, "
             f"512x512 canvas {canvas_s:.2f}s (length ratio {canvas_len:.3f})")
    assert bend_ratio <= 0.8
    assert a1 <= 1.5 and a3 <= 3.0 and a5 <= 4.0
    assert slowest <= 10.0 and canvas_s <= 10.0


def test_criterion_2_morph_round_trip(suite, emit):
    report, runs, _ = suite
    iou = [c["iou_morph"] for c in report["cases"]]
    werr = [c["width_error_morph"] for c in report["cases"]]
    ok = min(iou) >= 0.90 and np.mean(werr) <= 0.04
    emit(2, "morphological round trip", ok,
         f"IoU min {min(iou):.3f} mean {np.mean(iou):.3f}, width error mean "
         f"{100 * np.mean(werr):.2f}% max {100 * max(werr):.2f}%")
    assert min(iou) >= 0.90
    assert np.mean(werr) <= 0.04


def test_criterion_3_cross_method(suite, emit):
    report, _, _ = suite
    cm = [c["cross_method"] for c in report["cases"]]
    ok = max(cm) <= 0.04
    emit(3, "cross-method agreement", ok,
         f"max {100 * max(cm):.2f}% mean {100 * np.mean(cm):.2f}% over {len(cm)} instances")
    assert max(cm) <= 0.04


# ---------------------------------------------------------------------------
# 4: distance and footpoint oracle

def _brute(samples, s, ys, xs, chunk=400):
    best = np.empty(len(xs))
    foot = np.empty(len(xs))
    second = np.empty(len(xs))
    total = s[-1]
    for a in range(0, len(xs), chunk):
        q = np.column_stack([xs[a:a + chunk], ys[a:a + chunk]]).astype(float)
        d = np.hypot(q[:, None, 0] - samples[None, :, 0], q[:, None, 1] - samples[None, :, 1])
        m = d.min(axis=1)
        tied = d <= m[:, None] + 1e-9
        f = np.where(tied, s[None, :], np.inf).min(axis=1)
        i0 = np.argmax(tied, axis=1)
        gap = np.abs(s[None, :] - s[i0][:, None])
        far = np.minimum(gap, total - gap) > 2.0
        best[a:a + chunk], foot[a:a + chunk] = m, f
        second[a:a + chunk] = np.where(far, d, np.inf).min(axis=1)
    return best, foot, second


def test_criterion_4_distance_footpoint_oracle(suite, emit):
    _, runs, _ = suite
    worst, mismatched, checked = 0.0, 0, 0
    for r in runs:
        samples, s = r.morph.contour.densified(0.5)
        ys, xs = np.nonzero(r.mask)
        bd, bf, second = _brute(samples, s, ys, xs)
        worst = max(worst, float(np.max(np.abs(r.morph.delta0[ys, xs] - bd))))
        off = second - bd >= 0.25
        mismatched += int(np.sum(r.morph.s0[ys, xs][off] != bf[off]))
        checked += int(off.sum())
    ok = worst <= 0.5 and mismatched == 0
    emit(4, "distance/footpoint oracle", ok,
         f"max |d delta0|={worst:.2e} px, s0 mismatches {mismatched} of {checked} off-ridge pixels")
    assert worst <= 0.5
    assert mismatched == 0


# ---------------------------------------------------------------------------
# 5: morphology algebra

def _minkowski_sup(f, a, b):
    offs = {(int(p[0] + q[0]), int(p[1] + q[1])) for p in disk_offsets(a) for q in disk_offsets(b)}
    r = a + b
    g = np.pad(f, r, constant_values=-np.inf)
    h, w = f.shape
    out = np.full(f.shape, -np.inf)
    for dx, dy in offs:
        out = np.maximum(out, g[r + dy:r + dy + h, r + dx:r + dx + w])
    return out


def test_criterion_5_morphology_algebra(emit):
    failures = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        raw = rng.normal(size=(26, 30))
        full = as_field(raw, np.ones(raw.shape, bool))
        a, b = (int(v) for v in rng.integers(1, 4, 2))
        r = a + b
        core = (slice(r, -r), slice(r, -r))
        if not np.array_equal(dilate(dilate(full, a), b)[core], _minkowski_sup(raw, a, b)[core]):
            failures.append((seed, "semigroup"))
        mask = np.ones(raw.shape, bool)
        mask[rng.integers(0, 26, 15), rng.integers(0, 30, 15)] = False
        f = as_field(raw, mask)
        inside = mask
        lo, hi = sorted(int(v) for v in rng.integers(0, 5, 2))
        d_lo, d_hi, e_lo, e_hi = dilate(f, lo), dilate(f, hi), erode(f, lo), erode(f, hi)
        if not (np.all(d_lo[inside] >= f[inside]) and np.all(e_lo[inside] <= f[inside])):
            failures.append((seed, "extensivity"))
        if not (np.all(d_lo[inside] <= d_hi[inside]) and np.all(e_lo[inside] >= e_hi[inside])):
            failures.append((seed, "monotonicity"))
        if not np.array_equal(e_hi, -dilate(-f, hi), equal_nan=True):
            failures.append((seed, "duality"))
        kref = as_field(np.where(rng.random(raw.shape) < 0.5, SENT, -SENT), mask)
        al = alpha_filter(f, kref, hi)
        if not (np.all(e_hi[inside] <= al[inside]) and np.all(al[inside] <= d_hi[inside])):
            failures.append((seed, "sandwich"))

    # branch equivalence on mixed-sign curvature fields of S-bent bodies
    branch_bad, branch_px = 0, 0
    for kappa in ([(0, [0.01]), (100, [-0.01])], [(0, [-0.012]), (70, [0.006]), (140, [-0.008])]):
        tpl, _, _ = make_template(200, 20, ("taper", "round"))
        m = unwrap_morph(bend(tpl, BendProfile(kappa)).mask, s_max=4)
        assert (m.kref == SENT).any() and (m.kref == -SENT).any()
        inside = ~np.isnan(m.phi0)
        for s in (1, 2, 3, 4):
            alpha = alpha_filter(m.phi0, m.kref, s)
            oracle = np.where(m.kref < 0, erode(m.phi0, s), dilate(m.phi0, s))
            branch_bad += int(np.sum(alpha[inside] != oracle[inside]))
            branch_px += int(inside.sum())
    ok = not failures and branch_bad == 0
    emit(5, "morphology algebra", ok,
         f"100 random fields, {len(failures)} law violations; branch equivalence "
         f"{branch_bad} mismatches of {branch_px} pixel-scales")
    assert not failures
    assert branch_bad == 0


# ---------------------------------------------------------------------------
# 6: section discrimination and perpendicularity

def _match_rates(body, uncapped, per=4):
    up, lo = body.sections
    tu = np.gradient(up, axis=0)
    tl = np.gradient(lo, axis=0)
    tu /= np.linalg.norm(tu, axis=1, keepdims=True)
    tl /= np.linalg.norm(tl, axis=1, keepdims=True)
    strict, tube = [], []
    for i in range(2 * per, len(up) - 2 * per, per):
        d = {k: float(delta_phi(up[i], tu[i], lo[i + k * per], tl[i + k * per])) for k in (-2, -1, 0, 1, 2)}
        strict.append(all(d[0] < d[k] for k in (-2, -1, 1, 2)))
        tube.append(body.widths[i] >= 0.999 * uncapped[i])
    return np.array(strict), np.array(tube)


def test_criterion_6_section_discrimination(suite, emit):
    _, runs, _ = suite
    strict_all, tube_all = [], []
    for ti, spec in enumerate(TEMPLATES):
        tpl, _, _ = spec.build()
        w = spec.width(tpl.stations) if callable(spec.width) else np.full(len(tpl.stations), spec.width)
        for bi in range(len(BENDS)):
            body = bend(tpl, BENDS[bi], theta0=0.3 * bi)
            s, t = _match_rates(body, w)
            strict_all.append(s)
            tube_all.append(t)
    strict, tube = np.concatenate(strict_all), np.concatenate(tube_all)
    match_tube = float(strict[tube].mean())
    match_all = float(strict.mean())

    angles = []
    for r in runs:
        secs = r.neutral.sections[1:-1]
        chords = np.array([c.p_I - c.p_II for c in secs])
        chords /= np.linalg.norm(chords, axis=1, keepdims=True)
        tang = r.neutral.neutral.tangents()[1:-1]
        cosang = np.clip(np.abs(np.sum(chords * tang, axis=1)), 0, 1)
        angles.append(np.degrees(np.arccos(cosang)))
    angles = np.concatenate(angles)
    perp = float(np.mean(angles >= 85.0))
    ok = match_tube >= 0.95 and perp >= 0.90
    emit(6, "section discrimination", ok,
         f"strict minimum at the true match {100 * match_tube:.1f}% of tube sections "
         f"({100 * match_all:.1f}% including cap zones); perpendicular within 5 deg "
         f"{100 * perp:.1f}% of {len(angles)} sections")
    assert match_tube >= 0.95
    assert perp >= 0.90


# ---------------------------------------------------------------------------
# 7: classification

def test_criterion_7_classification(splits, emit):
    acc = splits["accuracy_mean"]
    conv = splits["converged_fraction"]
    epochs_ok = float(np.mean(np.array(splits["epochs"]) <= 50))
    table = format_table(splits)
    ok = (len(splits["families"]) == 6 and splits["splits"] == 200 and acc >= 0.97
          and conv >= 0.95 and epochs_ok >= 0.95)
    emit(7, "classification", ok,
         f"mean test accuracy {100 * acc:.2f}% (sd {100 * splits['accuracy_std']:.2f}), "
         f"converged {100 * conv:.1f}% of splits\n{table}")
    assert len(splits["families"]) == 6 and splits["splits"] == 200
    assert all(row["number"] == 30 for row in splits["table"])
    assert acc >= 0.97
    assert conv >= 0.95 and epochs_ok >= 0.95
    for row in splits["table"]:
        assert 0 <= row["zero_error_pct"] + row["one_error_pct"] <= 100


# ---------------------------------------------------------------------------
# 8: metric formulas

def _band(L, half):
    st = np.arange(0.0, L + 1e-9)
    return StraightenedShape(st, np.broadcast_to(half(st) if callable(half) else half, st.shape).astype(float))


def test_criterion_8_metric_formulas(emit):
    checks = []
    rep = consistency_metrics([_band(99, 5.0), _band(101, 5.0)])
    checks.append(("lengths 99/101", rep.a["a1"], [-1.0, 1.0]))

    # constant width 4 against a linear taper 2 -> 6 over 10 stations:
    # equal area 40, widths 4 and 2 + 0.4 x average to 3 + 0.2 x with mean 4
    a = _band(10, 2.0)
    b = _band(10, lambda x: 1.0 + 0.2 * x)
    rep = consistency_metrics([a, b])
    per_a = 2 * 10 + 4 + 4
    per_b = 2 * np.hypot(10, 2) + 2 + 6
    per_mean = (per_a + per_b) / 2
    checks += [
        ("equal lengths", rep.a["a1"], [0.0, 0.0]),
        ("equal areas", rep.a["a2"], [0.0, 0.0]),
        ("width deviation", rep.a["a3"], [0.0, 0.0]),
        ("perimeters", rep.a["a4"], [(per_a - per_mean) / per_mean * 100, (per_b - per_mean) / per_mean * 100]),
        ("max sections 4/6", rep.a["a5"], [-20.0, 20.0]),
    ]
    # widths 9 and 11 everywhere: a3 and a5 are -10% and +10%
    rep = consistency_metrics([_band(50, 4.5), _band(50, 5.5)])
    checks += [("widths 9/11", rep.a["a3"], [-10.0, 10.0]), ("max 9/11", rep.a["a5"], [-10.0, 10.0])]
    s = _band(60, lambda x: 3 + np.sin(x / 7))
    rep = consistency_metrics([s, s, s])
    checks += [(f"identical {m}", rep.a[m], [0.0] * 3) for m in ("a1", "a2", "a3", "a4", "a5")]

    bad = [name for name, got, want in checks if not np.allclose(got, want, rtol=0, atol=1e-12)]
    emit(8, "metric formulas", not bad, f"{len(checks) - len(bad)} of {len(checks)} hand-computed cases")
    assert not bad
