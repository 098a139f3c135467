"""Command line interface.

Every subcommand accepts ``--config file.json`` holding a flat object of
option names (as spelled in ``--help``, dashes or underscores); unknown keys
are rejected.  Options given on the command line win over the file.
``UNBEND_OUT_DIR`` prefixes relative output paths and ``UNBEND_THREADS``
sets the worker count of batch subcommands.  Failures print one JSON
object on stderr and exit nonzero.
"""

import argparse
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import io as uio
from .errors import ConfigError, UnbendError

OUT_ENV = "UNBEND_OUT_DIR"
THREADS_ENV = "UNBEND_THREADS"


class InputError(UnbendError):
    module = "cli-io"


def _out(path):
    if path is None:
        return None
    base = os.environ.get(OUT_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from exc


def _need(path):
    if not os.path.exists(path):
        err = InputError(f"no such file: {path}")
        err.path = path
        raise err
    return path


def _map(fn, items):
    n = _threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands

def cmd_contour(a):
    from .geometry import trace_contour
    mask = uio.read_mask(_need(a.mask))
    c = trace_contour(mask)
    uio.write_contour(_out(a.out), c)
    if a.svg:
        uio.write_svg(_out(a.svg), uio.svg_overlay(mask.shape, c, mask=mask))
    return {"points": len(c.points), "length": c.length}


def cmd_unwrap_neutral(a):
    from .neutral import unwrap_neutral
    mask = uio.read_mask(_need(a.mask))
    r = unwrap_neutral(mask, sparse=a.sparse, dense=a.dense, window_fraction=a.window_fraction)
    uio.write_profile(_out(a.out_profile), r.shape)
    if a.out_contour:
        uio.write_contour(_out(a.out_contour), r.contour)
    if a.svg:
        secs = [(s.p_I, s.p_II) for s in r.sections]
        uio.write_svg(_out(a.svg), uio.svg_overlay(mask.shape, r.contour, secs, [r.neutral.midpoints], mask))
    return {"length": r.shape.length, "sections": len(r.sections), "flags": r.flags}


def cmd_unwrap_morph(a):
    from .morph import unwrap_morph
    mask = uio.read_mask(_need(a.mask))
    image = uio.read_image(_need(a.image)).astype(float) if a.image else None
    if image is not None and image.shape[:2] != mask.shape:
        raise ConfigError(f"image {image.shape[:2]} and mask {mask.shape} differ in size")
    r = unwrap_morph(mask, image, s_max=a.s_max, threshold=a.threshold)
    un = r.unwrapped
    if image is None:
        uio.write_png(_out(a.out), un.mask)
    else:
        inside = un.mask if un.image.ndim == 2 else un.mask[..., None]
        uio.write_png(_out(a.out), uio.to_uint8(np.where(inside, un.image, 0.0)))
    if a.out_profile:
        uio.write_profile(_out(a.out_profile), r.unwrapped.shape())
    if a.fields_dir:
        d = _out(a.fields_dir)
        for name, f in (("delta0", r.delta0), ("s0", r.s0), ("phi", r.phi_min), ("sigma", r.sigma)):
            uio.write_field(os.path.join(d, f"{name}.pgm"), f)
    return {"reference_length": r.reference.length, "flags": r.flags}


def cmd_synth(a):
    from .synth import BendProfile, add_boundary_noise, bend, make_template
    width = json.loads(a.width)
    caps = tuple(a.cap_style.split(","))
    tpl, _, _ = make_template(a.length, width, caps if len(caps) == 2 else caps[0],
                              tip_width=a.tip_width)
    body = bend(tpl, BendProfile.parse(a.kappa_spec), theta0=a.theta0)
    mask = add_boundary_noise(body.mask, a.noise, seed=a.seed)
    uio.write_mask(_out(a.out), mask)
    truth = body.truth() | {"seed": a.seed, "noise": a.noise, "theta0": a.theta0,
                            "template_width": tpl.widths[::4].tolist()}
    if a.truth:
        uio.write_json(_out(a.truth), truth)
    return {"shape": list(mask.shape), "pixels": int(mask.sum())}


def _profiles(folder):
    _need(folder)
    names = sorted(f for f in os.listdir(folder) if f.endswith(".csv"))
    if not names:
        raise InputError(f"no profile CSV files in {folder}")
    shapes = _map(lambda n: uio.read_profile(os.path.join(folder, n)), names)
    return [os.path.splitext(n)[0] for n in names], shapes


def _labels(path):
    with open(_need(path), newline="") as fh:
        rows = [r.strip().split(",") for r in fh if r.strip()]
    if rows and rows[0][:2] == ["name", "label"]:
        rows = rows[1:]
    return {r[0]: r[1] for r in rows}


def _curves(shapes):
    from .classify import ProfileCurve
    return [ProfileCurve.from_shape(s).samples for s in shapes]


def cmd_train(a):
    from .classify import build_ensemble, tune
    names, shapes = _profiles(a.profiles)
    lab = _labels(a.labels)
    missing = [n for n in names if n not in lab]
    if missing:
        raise ConfigError(f"no label for {missing[:5]}")
    curves, labels = _curves(shapes), [lab[n] for n in names]
    res = tune(build_ensemble(curves, labels), curves, labels, a.target_rate, a.max_epochs, a.literal)
    doc = uio.ensemble_to_json(res.ensemble) | {"epochs": res.epochs, "rates": res.rates,
                                                "flags": res.flags}
    uio.write_json(_out(a.out), doc)
    return {"epochs": res.epochs, "train_rate": res.rates[-1], "flags": res.flags}


def cmd_classify(a):
    from .classify import assign
    names, shapes = _profiles(a.profiles)
    ens = uio.ensemble_from_json(uio.read_json(_need(a.ensemble)))
    truth = _labels(a.labels) if a.labels else {}
    curves = _curves(shapes)
    results = _map(lambda c: assign(c, ens), curves)
    samples = []
    for n, (p, dist) in zip(names, results):
        samples.append({"name": n, "predicted": p, "true": truth.get(n), "distances": dist})
    report = {"samples": samples}
    if truth:
        fams = sorted(set(ens.labels) | set(truth.values()))
        pos = {f: k for k, f in enumerate(fams)}
        conf = np.zeros((len(fams), len(fams)), dtype=int)
        for s in samples:
            if s["true"] is not None:
                conf[pos[s["true"]], pos[s["predicted"]]] += 1
        errors = {f: int(conf[pos[f]].sum() - conf[pos[f], pos[f]]) for f in fams}
        report |= {"families": fams, "confusion": conf.tolist(),
                   "accuracy": float(np.trace(conf) / max(conf.sum(), 1)), "errors": errors}
    uio.write_json(_out(a.report), report)
    return {"samples": len(samples), "accuracy": report.get("accuracy")}


def cmd_metrics(a):
    from .classify import consistency_metrics
    names, shapes = _profiles(a.profiles)
    rep = consistency_metrics(shapes).to_dict() | {"instances": names}
    uio.write_json(_out(a.report), rep)
    return {m: rep[m]["mean_abs"] for m in ("a1", "a2", "a3", "a4", "a5")}


def cmd_eval_roundtrip(a):
    from .classify import evaluate_splits
    from .evaluation import family_dataset, roundtrip_suite
    report = {"seed": a.seed}
    if a.suite in ("unwrap", "all"):
        rep, _ = roundtrip_suite(noise=a.noise, timings=a.timings)
        report["unwrap"] = rep
    if a.suite in ("classify", "all"):
        curves, labels = family_dataset(a.per_family, seed=a.seed)
        rep = evaluate_splits(curves, labels, n_splits=a.splits, seed=a.seed)
        report["classify"] = rep
    uio.write_json(_out(a.report), report)
    summary = {}
    if "unwrap" in report:
        u = report["unwrap"]
        summary |= {k: u[k]["mean"] for k in ("width_error_neutral", "width_error_morph",
                                             "iou_morph", "cross_method")}
    if "classify" in report:
        summary["accuracy_mean"] = report["classify"]["accuracy_mean"]
    return summary


# ---------------------------------------------------------------------------
# parser

def build_parser():
    p = argparse.ArgumentParser(prog="unbend", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--version", action="version", version=version_string())
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.add_argument("--config", help="flat JSON object of option values")
        sp.set_defaults(func=fn)
        return sp

    sp = add("contour", cmd_contour, "trace and condition the body contour")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out", required=True, help="CSV x,y,s")
    sp.add_argument("--svg")

    sp = add("unwrap-neutral", cmd_unwrap_neutral, "straighten by neutral-line detection")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out-profile", required=True, help="CSV lambda_x,half_width")
    sp.add_argument("--out-contour")
    sp.add_argument("--svg")
    sp.add_argument("--sparse", type=float, default=3.0, help="part I sample spacing (px)")
    sp.add_argument("--dense", type=float, default=1.0, help="part II sample spacing (px)")
    sp.add_argument("--window-fraction", type=float, default=0.05,
                    help="candidate window as a fraction of contour length")

    sp = add("unwrap-morph", cmd_unwrap_morph, "straighten by morphological inversion")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--image")
    sp.add_argument("--out", required=True, help="straightened PNG")
    sp.add_argument("--out-profile")
    sp.add_argument("--fields-dir", help="dump delta0, s0, phi, sigma as 16-bit PGM")
    sp.add_argument("--s-max", type=int, default=None, help="largest scale (default ceil max delta0)")
    sp.add_argument("--threshold", type=float, default=0.3, help="ridge deviation threshold")

    sp = add("synth", cmd_synth, "bend a straight template")
    sp.add_argument("--length", type=float, required=True)
    sp.add_argument("--width", required=True, help="number or JSON list of widths")
    sp.add_argument("--kappa-spec", default="0", help="number or JSON [[s0, [c0, c1, ...]], ...]")
    sp.add_argument("--cap-style", default="taper,round")
    sp.add_argument("--tip-width", type=float, default=3.0)
    sp.add_argument("--theta0", type=float, default=0.0)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth")

    sp = add("train", cmd_train, "build and tune family representatives")
    sp.add_argument("--profiles", required=True, help="directory of profile CSV files")
    sp.add_argument("--labels", required=True, help="CSV name,label (name = file stem)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--target-rate", type=float, default=0.98)
    sp.add_argument("--max-epochs", type=int, default=50)
    sp.add_argument("--literal", action="store_true", help="use N - beta in the reinforcing update")

    sp = add("classify", cmd_classify, "assign profiles to the nearest representative")
    sp.add_argument("--profiles", required=True)
    sp.add_argument("--ensemble", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--labels", help="true labels, for the confusion matrix")

    sp = add("metrics", cmd_metrics, "consistency measures a1-a5 of several instances")
    sp.add_argument("--profiles", required=True)
    sp.add_argument("--report", required=True)

    sp = add("eval-roundtrip", cmd_eval_roundtrip, "synthetic unwrapping and classification benchmark")
    sp.add_argument("--suite", choices=("unwrap", "classify", "all"), default="unwrap")
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--per-family", type=int, default=30)
    sp.add_argument("--splits", type=int, default=200)
    sp.add_argument("--timings", action="store_true", help="include run times (breaks byte identity)")
    sp.add_argument("--report", required=True)
    return p


def version_string():
    import scipy
    return (f"unbend {__version__} (python {platform.python_version()}, "
            f"numpy {np.__version__}, scipy {scipy.__version__})")


def _explicit(sp, argv):
    given = set()
    for action in sp._actions:
        for opt in action.option_strings:
            if any(t == opt or t.startswith(opt + "=") for t in argv):
                given.add(action.dest)
    return given


def _config_error(path, message):
    err = ConfigError(message)
    err.path = path
    return err


def apply_config(args, sp, argv):
    if not getattr(args, "config", None):
        return args
    try:
        with open(_need(args.config)) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise _config_error(args.config, f"{args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise _config_error(args.config, f"{args.config}: expected a flat JSON object")
    dests = {a.dest: a for a in sp._actions if a.option_strings and a.dest not in ("help", "config")}
    unknown = [k for k in doc if k.replace("-", "_") not in dests]
    if unknown:
        raise _config_error(args.config, f"unknown config keys: {', '.join(sorted(unknown))}")
    given = _explicit(sp, argv)
    for k, v in doc.items():
        dest = k.replace("-", "_")
        if dest in given:
            continue
        action = dests[dest]
        if dest in ("width", "kappa_spec") and not isinstance(v, str):
            v = json.dumps(v)
        elif action.type is not None and v is not None:
            try:
                v = action.type(v)
            except (TypeError, ValueError) as exc:
                raise _config_error(args.config, f"config key {k}: {exc}") from exc
        setattr(args, dest, v)
    missing = [a.dest for a in dests.values() if a.required and getattr(args, a.dest) is None]
    if missing:
        raise _config_error(args.config, f"missing required options: {', '.join(missing)}")
    return args


def _parse(argv):
    p = build_parser()
    subs = next(a for a in p._actions if isinstance(a, argparse._SubParsersAction))
    # required options may come from the config file, so parse leniently first
    name = next((t for t in argv if t in subs.choices), None)
    if name is not None and any(t == "--config" or t.startswith("--config=") for t in argv):
        sp = subs.choices[name]
        saved = [(a, a.required) for a in sp._actions]
        for a, _ in saved:
            a.required = False
        try:
            args = p.parse_args(argv)
        finally:
            for a, r in saved:
                a.required = r
        return apply_config(args, sp, argv)
    return p.parse_args(argv)


def _error(exc, args):
    module = exc.module if isinstance(exc, UnbendError) else "cli-io"
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    if path is None and args is not None:
        path = next((getattr(args, k) for k in ("mask", "profiles", "config")
                     if getattr(args, k, None)), None)
    return {"error": type(exc).__name__, "module": module, "message": str(exc),
            "path": path, "command": getattr(args, "command", None)}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = None
    try:
        args = _parse(argv)
        summary = args.func(args)
    except (UnbendError, OSError, ValueError) as exc:
        print(json.dumps(_error(exc, args), sort_keys=True), file=sys.stderr)
        return 2
    print(json.dumps(uio._jsonable(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
