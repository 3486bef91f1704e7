"""Event files (CSV, 1-based components) and JSON manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Realization
from .errors import DataError

HEADER_UNMARKED = ["time", "component"]
HEADER_MARKED = ["time", "component", "mark"]


def write_events(real: Realization, path) -> Path:
    """Write ``time,component[,mark]`` rows; floats use shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if real.marks is None:
            w.writerow(HEADER_UNMARKED)
            for t, c in zip(real.times.tolist(), real.components.tolist()):
                w.writerow([repr(t), c + 1])
        else:
            w.writerow(HEADER_MARKED)
            for t, c, k in zip(real.times.tolist(), real.components.tolist(), real.marks.tolist()):
                w.writerow([repr(t), c + 1, repr(k)])
    return path


def _parse_float(text, what, line):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {line}: {what} {text!r} is not a number") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}: {what} must be finite")
    return v


def read_events(path, horizon: Optional[float] = None, dim: Optional[int] = None,
                jitter: bool = False) -> Realization:
    """Parse an event file strictly.

    Without ``horizon`` the last event time is used; without ``dim`` the
    largest component index.  Unsorted rows are sorted; tied times are an
    error unless ``jitter`` is set.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    if header not in (HEADER_UNMARKED, HEADER_MARKED):
        raise DataError(f"{path}: header must be 'time,component' or 'time,component,mark', got {rows[0]}")
    marked = len(header) == 3
    times, comps, marks = [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not x.strip() for x in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path} line {line}: expected {len(header)} fields, got {len(row)}")
        t = _parse_float(row[0], "time", line)
        try:
            c = int(row[1])
        except ValueError:
            raise DataError(f"{path} line {line}: component {row[1]!r} is not an integer") from None
        if c < 1:
            raise DataError(f"{path} line {line}: components are 1-based")
        times.append(t)
        comps.append(c - 1)
        if marked:
            marks.append(_parse_float(row[2], "mark", line))
    times = np.array(times, dtype=float)
    comps = np.array(comps, dtype=np.int64)
    if dim is None:
        dim = int(comps.max()) + 1 if comps.size else 1
    elif comps.size and comps.max() >= dim:
        raise DataError(f"{path}: component {comps.max() + 1} exceeds dimension {dim}")
    if horizon is None:
        if times.size == 0:
            raise DataError(f"{path}: no events and no horizon given")
        horizon = float(times.max())
    mk = np.array(marks, dtype=float) if marked else None
    try:
        return Realization.from_unsorted(times, comps, horizon, dim, marks=mk, jitter=jitter)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")
    return path


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def config_hash(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_table(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path
