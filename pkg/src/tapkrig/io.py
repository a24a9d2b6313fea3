"""File formats: point CSV, grid CSV/binary, 8-bit PGM images and JSON."""
from __future__ import annotations

import csv
import json
import math

import numpy as np


class DataFormatError(ValueError):
    pass


def read_points_csv(path):
    """Read ``x,y,value`` rows; returns ``(points (n, 2), values (n,))``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["x", "y", "value"]:
            raise DataFormatError(f"{path}: expected header x,y,value, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"{path}: non-finite values")
    return arr[:, :2], arr[:, 2]


def write_points_csv(path, points, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for (x, y), v in zip(points, values):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def write_grid_csv(path, coords, mean, variance=None):
    """``x,y,mean,variance`` rows; variance left blank when unavailable."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "mean", "variance"])
        for i, ((x, y), m) in enumerate(zip(coords, mean)):
            v = "" if variance is None else repr(float(variance[i]))
            w.writerow([repr(float(x)), repr(float(y)), repr(float(m)), v])


def write_grid_binary(path, nx, ny, mean, variance=None):
    """Little-endian: int64 nx, int64 ny, nx*ny float64 means, then variances.

    Missing variances are written as NaN so the layout is fixed.
    """
    mean = np.asarray(mean, "<f8").ravel()
    if mean.size != nx * ny:
        raise DataFormatError("grid size mismatch")
    var = np.full(nx * ny, np.nan) if variance is None else np.asarray(variance, float).ravel()
    with open(path, "wb") as fh:
        fh.write(np.array([nx, ny], "<i8").tobytes())
        fh.write(mean.tobytes())
        fh.write(np.asarray(var, "<f8").tobytes())


def read_grid_binary(path):
    """Returns ``(nx, ny, mean, variance)`` with arrays shaped ``(ny, nx)``."""
    raw = open(path, "rb").read()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated header")
    nx, ny = (int(v) for v in np.frombuffer(raw[:16], "<i8"))
    m = nx * ny
    if len(raw) != 16 + 16 * m:
        raise DataFormatError(f"{path}: expected {16 + 16 * m} bytes, got {len(raw)}")
    vals = np.frombuffer(raw[16:], "<f8")
    return nx, ny, vals[:m].reshape(ny, nx).copy(), vals[m:].reshape(ny, nx).copy()


def write_pgm(path, values, vmin=None, vmax=None):
    """8-bit binary PGM of a ``(ny, nx)`` array, first row of the image at the top.

    Rows are flipped so that increasing y points up.  Linear min-max
    scaling; the range used is written to ``path + '.txt'``.
    """
    v = np.asarray(values, float)
    if v.ndim != 2:
        raise DataFormatError("PGM needs a 2-D array")
    lo = float(np.nanmin(v)) if vmin is None else float(vmin)
    hi = float(np.nanmax(v)) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0
    img = np.clip(np.rint((v - lo) / span * 255.0), 0, 255)
    img = np.where(np.isnan(img), 0, img).astype(np.uint8)[::-1]
    ny, nx = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    with open(str(path) + ".txt", "w", encoding="utf-8") as fh:
        fh.write(f"min = {lo!r}\nmax = {hi!r}\n# value = min + pixel / 255 * (max - min)\n")
    return lo, hi


def read_pgm(path):
    raw = open(path, "rb").read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise DataFormatError(f"{path}: not a binary PGM")
    nx, ny = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(ny, nx)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
