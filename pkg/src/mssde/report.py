"""Deterministic report serialization and the binary path dump.

JSON reports use sorted keys and 17-significant-digit floats, so parsing and
re-emitting a report reproduces it byte for byte.  Wall-clock timings are
left out (``seconds`` written as null / empty) unless ``timing=True``, which
keeps reports from the same seed byte-identical.

Binary path dump layout (all little-endian)::

    8 bytes   magic b"MSSDEPTH"
    int64     n, d, m0, M
    float64   T, eps
    uint64    seed
    float64   (M + 1) rows of [t, X_1..X_n, alpha]
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct

import numpy as np

from .experiments import ConvergenceReport

CSV_COLUMNS = ("epsilon", "estimate", "std_err", "reference", "n_paths", "seconds")
DUMP_MAGIC = b"MSSDEPTH"
_HEADER = struct.Struct("<8s4q2dQ")


def format_float(x):
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj):
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _report_dict(report, timing):
    doc = report.to_dict() if isinstance(report, ConvergenceReport) else dict(report)
    if not timing:
        doc["estimates"] = [dict(e, seconds=None) for e in doc["estimates"]]
    return doc


def emit_report(report, fmt="json", timing=False):
    """Serialize a report to bytes (``fmt`` is ``"json"`` or ``"csv"``)."""
    doc = _report_dict(report, timing)
    if fmt == "json":
        return (_encode(doc) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for e in doc["estimates"]:
            w.writerow([
                format_float(e["eps"]), format_float(e["estimate"]), format_float(e["std_err"]),
                "" if e["reference"] is None else format_float(e["reference"]),
                str(int(e["n_paths"])),
                "" if e["seconds"] is None else format_float(e["seconds"])])
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(data):
    """Inverse of ``emit_report(..., "json")``; returns a plain dict."""
    return json.loads(data)


def write_path_dump(fh, grid, X, alpha, eps, seed, d, m0):
    """Write one path: grid times, X rows and the regime at each grid point."""
    X = np.asarray(X, dtype="<f8")
    M1, n = X.shape
    fh.write(_HEADER.pack(DUMP_MAGIC, n, d, m0, M1 - 1, float(grid.T), float(eps), int(seed)))
    rows = np.column_stack([grid.times, X, np.asarray(alpha, dtype=float)]).astype("<f8")
    fh.write(rows.tobytes())


def read_path_dump(fh):
    head = fh.read(_HEADER.size)
    magic, n, d, m0, M, T, eps, seed = _HEADER.unpack(head)
    if magic != DUMP_MAGIC:
        raise ValueError("not a path dump")
    rows = np.frombuffer(fh.read(), dtype="<f8").reshape(M + 1, n + 2)
    return {"n": n, "d": d, "m0": m0, "M": M, "T": T, "eps": eps, "seed": seed,
            "t": rows[:, 0], "X": rows[:, 1:1 + n], "alpha": rows[:, -1].astype(int)}
