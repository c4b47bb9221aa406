"""CSV and JSON serialization with 17-significant-digit floats.

Column orders:

* menu:      ``y1..yn, price``
* solution:  ``x1..xm, y1..yn, z, u, ic_slack, ir_slack``
* segment:   ``t, y1..yn, z, residual``
* responses: ``x1..xm, y1..yn, z, u``
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ModelError
from .geometry import IndirectUtility, Menu, ic_slacks, ir_slacks
from .model import ModelSpec


def fmt(value) -> str:
    return format(float(value), ".17g")


def _names(prefix, count):
    return [f"{prefix}{i + 1}" for i in range(count)]


def menu_header(spec: ModelSpec):
    return _names("y", spec.n) + ["price"]


def solution_header(spec: ModelSpec):
    return _names("x", spec.m) + _names("y", spec.n) + ["z", "u", "ic_slack", "ir_slack"]


def segment_header(spec: ModelSpec):
    return ["t"] + _names("y", spec.n) + ["z", "residual"]


def response_header(spec: ModelSpec):
    return _names("x", spec.m) + _names("y", spec.n) + ["z", "u"]


def write_csv(target, header, rows):
    """Write ``rows`` (2-D array-like of numbers) under ``header``; ``target`` is a path, stream or None (stdout)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    text = buf.getvalue()
    if target is None:
        sys.stdout.write(text)
    elif hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text)
    return text


def read_csv(source, expected=None):
    """Read a numeric CSV; returns ``(header, array)``.  ``expected`` checks the header."""
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ModelError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if expected is not None and header != list(expected):
        raise ModelError(f"CSV header {header} does not match {list(expected)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ModelError(f"non-numeric CSV entry ({exc})") from None
    if data.size == 0:
        data = np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise ModelError("CSV rows do not match the header width")
    return header, data


def menu_rows(menu: Menu):
    return np.column_stack([menu.grid, menu.prices])


def write_menu(target, spec: ModelSpec, menu: Menu):
    return write_csv(target, menu_header(spec), menu_rows(menu))


def read_menu(source, spec: ModelSpec) -> Menu:
    _, data = read_csv(source, menu_header(spec))
    return Menu(data[:, : spec.n], data[:, spec.n])


def solution_rows(spec: ModelSpec, alloc: IndirectUtility):
    """Per-agent rows; ``ic_slack`` is the smallest gain over taking any other agent's contract."""
    S = ic_slacks(spec, alloc)
    if S.shape[0] > 1:
        np.fill_diagonal(S, np.inf)
        ic = S.min(axis=1)
    else:
        ic = np.zeros(1)
    ir = ir_slacks(spec, alloc)
    y = np.asarray(alloc.y, dtype=float).reshape(-1, spec.n)
    return np.column_stack([alloc.agents, y, alloc.z, alloc.values, ic, ir])


def write_solution(target, spec: ModelSpec, alloc: IndirectUtility):
    return write_csv(target, solution_header(spec), solution_rows(spec, alloc))


def read_solution(source, spec: ModelSpec) -> IndirectUtility:
    _, data = read_csv(source, solution_header(spec))
    m, n = spec.m, spec.n
    agents = data[:, :m]
    return IndirectUtility(agents, spec.weights(agents), data[:, m + n + 1], y=data[:, m : m + n], z=data[:, m + n])


def _clean(obj):
    """JSON-ready copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), indent=2) + "\n"


def write_json(target, doc):
    text = dumps(doc)
    if target is None:
        sys.stdout.write(text)
    elif hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text)
    return text
