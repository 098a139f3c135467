"""File formats: PGM/PNG masks and images, CSV curves, JSON, SVG overlays.

Writers go through a temporary file in the target directory and an atomic
rename, so a crashed run never leaves half-written outputs.
"""

import contextlib
import csv
import io as _io
import json
import os
import tempfile

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import Contour


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(tmp)
        raise


# ---------------------------------------------------------------------------
# PGM

def _pgm_tokens(data):
    """Header tokens of a PNM file (comments stripped) and the payload offset."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path):
    """Integer array from a P2 or P5 file; 16-bit data is big-endian."""
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), pos = _pgm_tokens(data)
    w, h, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else "u1"
        arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    elif magic == b"P2":
        arr = np.array(data[pos - 1:].split()[:w * h], dtype=np.int64)
    else:
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    if arr.size != w * h:
        raise ValueError(f"{path}: truncated PGM payload")
    return arr.reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, array, maxval=None, binary=True):
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    a = a.astype(np.int64)
    if maxval is None:
        maxval = 255 if a.max(initial=0) <= 255 else 65535
    if a.min(initial=0) < 0 or a.max(initial=0) > maxval:
        raise ValueError("values outside [0, maxval]")
    h, w = a.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode()
    with atomic_open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(a.astype(">u2" if maxval > 255 else "u1").tobytes())
        else:
            for row in a:
                fh.write((" ".join(map(str, row)) + "\n").encode())


# ---------------------------------------------------------------------------
# masks and images

def read_image(path):
    """Grayscale (or RGB) array from PGM or any Pillow-readable file."""
    path = os.fspath(path)
    if path.lower().endswith((".pgm", ".pnm")):
        return read_pgm(path)
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "I;16", "I"):
            im = im.convert("RGB" if "A" not in im.mode and im.mode != "P" else "L")
        return np.asarray(im)


def read_mask(path, threshold=128):
    """Body = pixels at or above ``threshold`` (PGM and PNG alike)."""
    a = read_image(path)
    if a.ndim == 3:
        a = a.mean(axis=2)
    return np.asarray(a) >= threshold


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    if os.fspath(path).lower().endswith(".png"):
        write_png(path, mask.astype(np.uint8) * 255)
    else:
        write_pgm(path, mask)


def write_png(path, array):
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    buf = _io.BytesIO()
    Image.fromarray(a).save(buf, format="PNG")
    with atomic_open(path, "wb") as fh:
        fh.write(buf.getvalue())


def to_uint8(image):
    """Float image to 8 bits; NaN becomes 0."""
    a = np.nan_to_num(np.asarray(image, dtype=float), nan=0.0)
    lo, hi = float(a.min()), float(a.max())
    if hi <= 1.0 and lo >= 0.0:
        a = a * 255.0
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# CSV and JSON

def write_csv(path, header, rows):
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path):
    """Header and float columns of a numeric CSV file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return header, data


def write_contour(path, contour):
    pts = contour.points
    write_csv(path, ["x", "y", "s"], np.column_stack([pts, contour.cumulative_length]))


def read_contour(path):
    header, data = read_csv(path)
    if header != ["x", "y", "s"]:
        raise ValueError(f"{path}: expected header x,y,s")
    return Contour(data[:, :2])


def write_profile(path, shape):
    write_csv(path, ["lambda_x", "half_width"], np.column_stack([shape.stations, shape.half_widths]))


def read_profile(path):
    from .neutral import StraightenedShape
    header, data = read_csv(path)
    if header != ["lambda_x", "half_width"]:
        raise ValueError(f"{path}: expected header lambda_x,half_width")
    return StraightenedShape(data[:, 0], data[:, 1])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj):
    with atomic_open(path) as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def ensemble_to_json(ensemble):
    return {
        "generation": ensemble.generation,
        "models": [{"label": m.label, "count": m.count, "curve": m.curve.tolist()}
                   for m in ensemble.models],
    }


def ensemble_from_json(doc):
    from .classify import Ensemble, GroupModel
    return Ensemble([GroupModel(np.array(m["curve"], dtype=float), float(m["count"]), m["label"])
                     for m in doc["models"]], int(doc["generation"]))


# ---------------------------------------------------------------------------
# field dumps and SVG

def write_field(path, field_):
    """16-bit PGM of a float field scaled to [1, 65535] (0 = outside), with
    the scaling recorded in ``path + '.txt'``."""
    f = np.asarray(field_, dtype=float)
    inside = np.isfinite(f)
    lo = float(f[inside].min()) if inside.any() else 0.0
    hi = float(f[inside].max()) if inside.any() else 0.0
    span = hi - lo if hi > lo else 1.0
    q = np.zeros(f.shape, dtype=np.int64)
    q[inside] = 1 + np.rint((f[inside] - lo) / span * 65534).astype(np.int64)
    write_pgm(path, q, maxval=65535)
    with atomic_open(os.fspath(path) + ".txt") as fh:
        fh.write(f"min {lo!r}\nmax {hi!r}\nzero outside\n")


def read_field(path):
    q = read_pgm(path).astype(float)
    with open(os.fspath(path) + ".txt") as fh:
        meta = dict(line.split(None, 1) for line in fh if line.strip())
    lo, hi = float(meta["min"]), float(meta["max"])
    span = hi - lo if hi > lo else 1.0
    out = lo + (q - 1) / 65534 * span
    out[q == 0] = np.nan
    return out


def _polyline(pts, color, width=1.0, closed=False):
    d = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    tag = "polygon" if closed else "polyline"
    return f'<{tag} points="{d}" fill="none" stroke="{color}" stroke-width="{width}"/>'


def svg_overlay(shape, contour=None, sections=(), lines=(), mask=None):
    """SVG text with the contour, section chords and extra polylines drawn
    over the pixel grid of ``shape`` (rows, cols)."""
    h, w = shape
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
           f'viewBox="-0.5 -0.5 {w} {h}">']
    if mask is not None:
        ys, xs = np.nonzero(mask)
        out.append('<g fill="#dddddd">')
        out.extend(f'<rect x="{x - 0.5}" y="{y - 0.5}" width="1" height="1"/>' for x, y in zip(xs, ys))
        out.append("</g>")
    if contour is not None:
        out.append(_polyline(contour.points, "#1f77b4", closed=True))
    for a, b in sections:
        out.append(f'<line x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                   'stroke="#2ca02c" stroke-width="0.5"/>')
    for pts in lines:
        out.append(_polyline(pts, "#d62728", width=1.5))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, text):
    with atomic_open(path) as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# histogram threshold segmentation

def segment_threshold(gray, smooth=5):
    """Binary body mask from an 8-bit grayscale image.

    The 256-bin histogram is smoothed by a ``smooth``-bin moving average.
    Starting from the background mode (the highest bin) and walking towards
    the other end of the range, the first local minimum is the threshold;
    the body is the side away from the background.  A histogram without
    such a turning point falls back to the median and is flagged.  The mask
    is opened and closed with a radius-1 disk, reduced to its largest
    component and padded when it touches the border.

    Returns ``(mask, threshold, flags)``.
    """
    g = np.asarray(gray)
    if g.ndim == 3:
        g = g.mean(axis=2)
    g = np.clip(np.rint(g), 0, 255).astype(np.uint8)
    hist = np.bincount(g.ravel(), minlength=256).astype(float)
    hs = np.convolve(hist, np.ones(smooth) / smooth, mode="same")
    mode = int(np.argmax(hs))
    dark_body = mode >= 128
    step = -1 if dark_body else 1
    flags = []
    t = None
    i = mode
    while 0 < i + step < 255:
        nxt = i + step
        if hs[nxt + step] > hs[nxt] and hs[nxt] <= hs[i]:
            # middle of a flat valley
            j = nxt
            while hs[j - step] == hs[nxt] and j - step != mode:
                j -= step
            t = (nxt + j) // 2 if step > 0 else (nxt + j + 1) // 2
            break
        i = nxt
    if t is None:
        flags.append("no-turning-point")
        t = float(np.median(g))
    mask = g < t if dark_body else g > t
    if not mask.any():
        mask = g <= t if dark_body else g >= t
    cross = ndimage.generate_binary_structure(2, 1)
    # edge replication keeps the opening from shaving bodies that touch the border
    big = np.pad(mask, 2, mode="edge")
    mask = ndimage.binary_closing(ndimage.binary_opening(big, cross), cross)[2:-2, 2:-2]
    lab, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n > 1:
        sizes = np.bincount(lab.ravel())
        sizes[0] = 0
        mask = lab == int(np.argmax(sizes))
    if mask.any() and (mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any()):
        mask = np.pad(mask, 1)
        flags.append("padded")
    return mask, t, flags
