"""Atomic, reproducible file output plus plain CSV helpers.

Every writer lands the full payload in a temporary file first and renames it
into place, so interrupted runs never leave half-written artifacts.  Floats
are rendered with 17 significant digits, which round-trips IEEE doubles.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np


def format_float(value: float) -> str:
    return f"{float(value):.17g}"


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def write_json(path: str, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = [
            format_float(cell) if isinstance(cell, (float, np.floating)) else str(cell)
            for cell in row
        ]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with one header row -> (column names, float matrix)."""
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().strip()
    if not header:
        raise ValueError(f"{path}: empty file")
    names = [cell.strip() for cell in header.split(",")]
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=float, ndmin=2)
    if data.shape[1] != len(names):
        raise ValueError(f"{path}: header names {len(names)} columns, data has {data.shape[1]}")
    return names, data
