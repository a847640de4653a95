"""Plain-text I/O shared by the graph loaders, datasets and the CLI."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


class CSVParseError(ValueError):
    """Malformed numeric CSV. `line` is 1-based."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def read_csv_matrix(path) -> np.ndarray:
    """Read a dense, header-free, comma-separated matrix of reals.

    Every row must have the same number of cells and every cell must parse as
    a float. Trailing blank lines are ignored; blank lines inside the data are
    an error.
    """
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise CSVParseError(path, 1, "no data")
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            raise CSVParseError(path, lineno, "empty line")
        cells = line.strip().split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise CSVParseError(path, lineno, f"expected {width} cells, found {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise CSVParseError(path, lineno, f"non-numeric cell {bad!r}") from None
    return np.array(rows, dtype=float)


def _is_float(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def write_csv_matrix(path, matrix) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    atomic_write_text(path, "\n".join(lines) + "\n")


def format_value(value) -> str:
    """Deterministic text form for CSV cells (floats use shortest repr)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path, header, rows) -> None:
    """Write a CSV table atomically."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        if np.isnan(obj):
            return "nan"
        if np.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    return obj


def write_json(path, payload) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    atomic_write_text(path, text + "\n")


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
