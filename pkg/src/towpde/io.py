"""Artifact writers: versioned CSV with round-trip floats and JSON metadata."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

CSV_SCHEMA = "towpde-csv/1"
JSON_SCHEMA = "towpde-json/1"


def format_value(v) -> str:
    """Shortest round-trip text for numbers; ``str`` for everything else."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f) or math.isinf(f):
            return str(f)
        return repr(f)
    return str(v)


def write_csv(path, kind: str, columns: list[str], rows: Iterable) -> Path:
    """Write rows under a ``# schema: ...`` line and a header line."""
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write(f"# schema: {CSV_SCHEMA} kind={kind}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")
    return path


def read_csv(path) -> tuple[str, list[str], np.ndarray]:
    """Inverse of :func:`write_csv` for all-numeric tables."""
    with Path(path).open() as fh:
        schema = fh.readline().strip()
        columns = fh.readline().strip().split(",")
        data = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    return schema, columns, np.array(data).reshape(len(data), len(columns))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, kind: str, payload: dict) -> Path:
    """JSON object whose first line carries the schema version."""
    body = {"schema_version": JSON_SCHEMA, "kind": kind, **_jsonable(payload)}
    text = json.dumps(body, indent=2, allow_nan=True)
    # pull the first key onto the opening line
    text = "{" + text[1:].lstrip()
    path = Path(path)
    path.write_text(text + "\n")
    return path
