"""Prototype classification of straightened profiles and consistency metrics.

A profile curve holds one sample per unit station of straightened arc
length: a half width, or several offsets per station (shape ``(L, m)``).
Curves are compared after a rigid translation along the axis only.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import RefTooShort, TooFewInstances

MIN_STATIONS = 10


@dataclass
class ProfileCurve:
    samples: np.ndarray
    label: str = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if len(self.samples) < MIN_STATIONS:
            raise ValueError(f"profile needs at least {MIN_STATIONS} stations")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("profile samples must be finite")

    def __len__(self):
        return len(self.samples)

    @classmethod
    def from_shape(cls, shape, label=None, step=1.0):
        """Half widths of a straightened shape at unit stations."""
        _, half = shape.resample(step)
        return cls(half, label)


def _samples(c):
    return c.samples if isinstance(c, ProfileCurve) else np.asarray(c, dtype=float)


def _flat(a):
    return a.reshape(len(a), -1)


def sliding_distances(c, ref):
    """``D[d] = sum_s ||c(s) - ref(s + d)||**2`` for ``d = 0..len(ref) - len(c)``."""
    c, ref = _flat(_samples(c)), _flat(_samples(ref))
    n = len(c)
    win = sliding_window_view(ref, n, axis=0)          # (positions, m, n)
    diff = win - c.T[None]
    return np.einsum("dmn,dmn->d", diff, diff)


def align(c, ref):
    """Translation ``d`` of ``c`` along ``ref`` minimising the summed squared
    distance, by exhaustive search; ties go to the smallest ``d``.

    Returns ``(d, distance)``.
    """
    c, ref = _samples(c), _samples(ref)
    if len(ref) < len(c):
        raise RefTooShort(f"reference has {len(ref)} stations, curve has {len(c)}")
    dist = sliding_distances(c, ref)
    d = int(np.argmin(dist))
    return d, float(dist[d])


def curve_distance(c, rep):
    """Aligned distance between a query and a representative.

    When the query is the longer curve the roles swap and the sum runs over
    the representative.  Returns ``(d, distance, swapped)``.
    """
    c, rep = _samples(c), _samples(rep)
    if len(rep) >= len(c):
        d, dist = align(c, rep)
        return d, dist, False
    d, dist = align(rep, c)
    return d, dist, True


@dataclass
class GroupModel:
    curve: np.ndarray
    count: float
    label: str

    def __post_init__(self):
        self.curve = np.asarray(self.curve, dtype=float)


@dataclass
class Ensemble:
    models: list
    generation: int = 1

    def __post_init__(self):
        labels = [m.label for m in self.models]
        if len(set(labels)) != len(labels):
            raise ValueError("model labels must be unique")

    @property
    def labels(self):
        return [m.label for m in self.models]

    def model(self, label):
        for m in self.models:
            if m.label == label:
                return m
        raise KeyError(label)

    def copy(self):
        return Ensemble([GroupModel(m.curve.copy(), m.count, m.label) for m in self.models],
                        self.generation)


def group_mean(members, label=None):
    """Representative of a group: members aligned to the longest one and
    averaged per station over the members covering it."""
    curves = [_samples(m) for m in members]
    if not curves:
        raise ValueError("group needs at least one member")
    anchor = curves[int(np.argmax([len(c) for c in curves]))]
    total = np.zeros_like(anchor)
    cover = np.zeros(len(anchor))
    for c in curves:
        d, _ = align(c, anchor)
        total[d:d + len(c)] += c
        cover[d:d + len(c)] += 1
    shape = (-1,) + (1,) * (anchor.ndim - 1)
    return GroupModel(total / cover.reshape(shape), float(len(curves)), label)


def build_ensemble(curves, labels):
    groups = {}
    for c, lab in zip(curves, labels):
        groups.setdefault(lab, []).append(c)
    return Ensemble([group_mean(groups[k], k) for k in sorted(groups)])


def assign(c, ensemble):
    """Label of the representative at minimum aligned distance, ties to the
    smallest label, with all distances."""
    dist = {m.label: curve_distance(c, m.curve)[1] for m in ensemble.models}
    order = sorted(dist)
    best = order[int(np.argmin([dist[k] for k in order]))]
    return best, dist


def beta_weight(rep, c, d, swapped=False):
    """``exp(-mean squared distance)`` over the overlapped stations."""
    rep, c = _flat(_samples(rep)), _flat(_samples(c))
    if swapped:
        diff = rep - c[d:d + len(rep)]
    else:
        diff = rep[d:d + len(c)] - c
    return float(np.exp(-np.mean(np.sum(diff ** 2, axis=1))))


def _overlap(rep, c, d, swapped):
    """Slices of the representative and the sample that face each other."""
    if swapped:
        return slice(0, len(rep)), slice(d, d + len(rep))
    return slice(d, d + len(c)), slice(0, len(c))


def update_model(model, c, sign, literal=False, floor=0.1):
    """One re-estimation step of ``model`` with sample ``c``.

    ``sign = -1`` pushes the model away (wrong group), ``+1`` pulls it
    closer (right group).  ``literal`` uses ``N - beta`` as the denominator
    and count update of the pull, as printed.  Returns ``(beta, applied)``;
    updates whose count would drop to ``floor`` or below are skipped.
    """
    c = _samples(c)
    d, _, swapped = curve_distance(c, model.curve)
    beta = beta_weight(model.curve, c, d, swapped)
    n = model.count
    new_n = n - beta if (sign < 0 or literal) else n + beta
    if new_n <= floor:
        return beta, False
    rs, cs = _overlap(model.curve, c, d, swapped)
    model.curve[rs] = (n * model.curve[rs] + sign * beta * c[cs]) / new_n
    model.count = new_n
    return beta, True


@dataclass
class TuneResult:
    ensemble: Ensemble
    epochs: int
    rates: list
    flags: list = field(default_factory=list)

    @property
    def converged(self):
        return "max-epochs" not in self.flags


def training_rate(ensemble, curves, labels):
    pred = [assign(c, ensemble)[0] for c in curves]
    return float(np.mean([p == t for p, t in zip(pred, labels)])), pred


def tune(ensemble, curves, labels, target_rate=0.98, max_epochs=50, literal=False):
    """Re-estimate the representatives on misclassified training samples
    until the training success rate reaches ``target_rate``.

    Each epoch classifies every training curve, then, in sample order, pushes
    the wrongly chosen model away from each misclassified sample and pulls
    the right one towards it.
    """
    ens = ensemble.copy()
    rates, flags = [], []
    missing = set(labels) - set(ens.labels)
    if missing:
        raise ValueError(f"no model for labels {sorted(missing)}")
    epoch = 0
    while True:
        rate, pred = training_rate(ens, curves, labels)
        rates.append(rate)
        if rate >= target_rate:
            break
        if epoch >= max_epochs:
            flags.append("max-epochs")
            break
        for c, p, t in zip(curves, pred, labels):
            if p == t:
                continue
            for label, sign in ((p, -1), (t, +1)):
                _, ok = update_model(ens.model(label), c, sign, literal)
                if not ok and "degenerate-count" not in flags:
                    flags.append("degenerate-count")
        ens.generation += 1
        epoch += 1
    return TuneResult(ens, epoch, rates, flags)


# ---------------------------------------------------------------------------
# evaluation over random splits

def split_indices(labels, rng):
    """Seeded 50/50 split by random permutation."""
    idx = rng.permutation(len(labels))
    half = len(labels) // 2
    return np.sort(idx[:half]), np.sort(idx[half:])


@dataclass
class SplitOutcome:
    accuracy: float
    train_rate: float
    epochs: int
    converged: bool
    errors: dict             # family -> misclassified test samples
    confusion: np.ndarray


def evaluate_split(curves, labels, train, test, families, target_rate=0.98,
                   max_epochs=50, literal=False):
    ens = build_ensemble([curves[i] for i in train], [labels[i] for i in train])
    res = tune(ens, [curves[i] for i in train], [labels[i] for i in train],
               target_rate, max_epochs, literal)
    pos = {f: k for k, f in enumerate(families)}
    conf = np.zeros((len(families), len(families)), dtype=int)
    errors = {f: 0 for f in families}
    for i in test:
        p = assign(curves[i], res.ensemble)[0]
        conf[pos[labels[i]], pos[p]] += 1
        if p != labels[i]:
            errors[labels[i]] += 1
    acc = float(np.trace(conf) / max(conf.sum(), 1))
    return SplitOutcome(acc, res.rates[-1], res.epochs, res.converged, errors, conf)


def evaluate_splits(curves, labels, n_splits=200, seed=0, **kw):
    """Repeated random train/test evaluation; returns a JSON-ready report."""
    rng = np.random.default_rng(seed)
    families = sorted(set(labels))
    outcomes = []
    for _ in range(n_splits):
        train, test = split_indices(labels, rng)
        outcomes.append(evaluate_split(curves, labels, train, test, families, **kw))
    return split_report(outcomes, families, labels, seed)


def split_report(outcomes, families, labels, seed=None):
    acc = np.array([o.accuracy for o in outcomes])
    table = []
    for f in families:
        errs = np.array([o.errors[f] for o in outcomes])
        table.append({
            "family": f,
            "number": int(sum(1 for x in labels if x == f)),
            "zero_error_pct": float(100.0 * np.mean(errs == 0)),
            "one_error_pct": float(100.0 * np.mean(errs == 1)),
        })
    return {
        "seed": seed,
        "splits": len(outcomes),
        "families": families,
        "accuracy_mean": float(acc.mean()),
        "accuracy_std": float(acc.std()),
        "accuracy": acc.tolist(),
        "train_rate": [o.train_rate for o in outcomes],
        "epochs": [o.epochs for o in outcomes],
        "converged_fraction": float(np.mean([o.converged for o in outcomes])),
        "confusion": np.sum([o.confusion for o in outcomes], axis=0).tolist(),
        "table": table,
    }


def format_table(report):
    lines = [f"{'family':<16}{'number':>8}{'0 errors %':>12}{'1 error %':>12}"]
    for row in report["table"]:
        lines.append(f"{str(row['family']):<16}{row['number']:>8}"
                     f"{row['zero_error_pct']:>12.1f}{row['one_error_pct']:>12.1f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# consistency of several unwrapped instances of one body

@dataclass
class ConsistencyReport:
    a: dict                  # name -> per-instance signed percent
    stations: int            # common stations used for the width measure

    def mean(self, name):
        return float(np.mean(self.a[name]))

    def std(self, name):
        return float(np.std(self.a[name]))

    def mean_abs(self, name):
        return float(np.mean(np.abs(self.a[name])))

    def to_dict(self):
        return {
            name: {"values": list(map(float, v)), "mean": self.mean(name),
                   "std": self.std(name), "mean_abs": self.mean_abs(name)}
            for name, v in self.a.items()
        } | {"stations": self.stations}


METRICS = ("a1", "a2", "a3", "a4", "a5")


def _deviation(x):
    x = np.asarray(x, dtype=float)
    return (x - x.mean()) / x.mean() * 100.0


def consistency_metrics(instances, step=1.0):
    """Percent deviations from the across-instance mean of length (a1), area
    (a2), width (a3), perimeter (a4) and maximum cross section (a5).

    Widths are compared at common stations ``x_j``, every ``step`` from the
    first station up to the shortest instance.
    """
    if len(instances) < 2:
        raise TooFewInstances("consistency needs at least two instances")
    L = np.array([s.length for s in instances])
    grid = np.arange(0.0, L.min() + 1e-9, step)
    y = np.array([np.interp(grid, s.stations - s.stations[0], s.widths) for s in instances])
    ybar = y.mean(axis=0)
    a3 = (y - ybar).mean(axis=1) / ybar.mean() * 100.0
    a = {
        "a1": _deviation(L),
        "a2": _deviation([s.area() for s in instances]),
        "a3": a3,
        "a4": _deviation([s.perimeter() for s in instances]),
        "a5": _deviation([s.max_cross_section() for s in instances]),
    }
    return ConsistencyReport(a, len(grid))
