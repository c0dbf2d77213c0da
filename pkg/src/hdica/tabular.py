"""Numeric CSV and JSON helpers shared by the command line tools."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or non-conformable input file."""


def format_float(x: float) -> str:
    # repr gives the shortest string that parses back to the same double
    return repr(float(x))


def read_matrix(path, header: bool = False) -> np.ndarray:
    """Parse a numeric CSV file into an (n, d) array."""
    rows: List[List[float]] = []
    width = None
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if header and r == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            values = []
            for c, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {c}: "
                                    f"cannot parse {cell!r} as a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {r}, column {c}: non-finite value {cell!r}")
                values.append(v)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataError(f"{path}: row {r} has {len(values)} columns, expected {width}")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def write_matrix(path, M, header: Optional[Sequence[str]] = None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in M:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def write_records(path, fields: Sequence[str], records: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow({k: _cell(rec.get(k)) for k in fields})


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else format_float(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dump_json(obj, path=None) -> str:
    text = json.dumps(_jsonable(obj), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
