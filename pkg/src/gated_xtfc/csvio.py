"""Plain CSV and key-value files with 17-significant-digit floats."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (str, bytes)):
        return v if isinstance(v, str) else v.decode()
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, columns) -> Path:
    """Write equal-length ``columns`` under ``header``; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = [np.asarray(c) if not isinstance(c, list) else c for c in columns]
    if len(header) != len(columns):
        raise ValueError("header and columns differ in length")
    n = len(columns[0]) if columns else 0
    if any(len(c) != n for c in columns):
        raise ValueError("columns differ in length")
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(c[i]) for c in columns) + "\n")
    return path


def read_csv(path) -> dict:
    """Read a CSV written by :func:`write_csv`; numeric columns become arrays."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in col], dtype=float)
        except ValueError:
            out[name] = col
    return out


def write_kv(path, items) -> Path:
    """Write ``key = value`` lines; sequences become space-separated values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for key, val in items:
            if isinstance(val, (list, tuple, np.ndarray)):
                val = " ".join(_fmt(v) for v in np.ravel(val))
            else:
                val = _fmt(val)
            fh.write(f"{key} = {val}\n")
    return path


def read_kv(path) -> dict:
    """Parse ``key = value`` lines into strings; ``#`` starts a comment."""
    out = {}
    with Path(path).open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep or not key.strip():
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip()] = val.strip()
    return out
