"""CSV reading with column-level schema validation.

The upstream engine writes plain CSV with an optional leading `# manifest:`
comment.  Every figure declares the columns it needs; mismatches raise
SchemaError with a diagnostic naming the offending column.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class SchemaError(Exception):
    """Input CSV does not match the documented schema."""


def read_table(path: str | Path, required: list[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with path.open() as fh:
        rows = [r for r in csv.reader(line for line in fh
                                      if not line.startswith("#"))]
    if not rows:
        raise SchemaError(f"{path}: empty file, expected header {required}")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(
            f"{path}: missing column(s) {missing}; found {header}")
    body = rows[1:]
    if not body:
        raise SchemaError(f"{path}: no data rows")
    idx = {c: header.index(c) for c in required}
    out = {}
    for col, j in idx.items():
        try:
            out[col] = np.array([float(r[j]) for r in body])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: column '{col}' is not numeric "
                              f"({exc})") from exc
    return out
