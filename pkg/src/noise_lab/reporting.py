"""Byte-deterministic CSV / JSON / JSONL emission.

CSV floats are rendered with 17 significant digits so values round-trip
exactly; JSON uses sorted keys and Python's shortest-round-trip float
repr. Identical inputs always produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def to_jsonable(obj):
    """Recursively convert dataclasses / numpy values into JSON-safe types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def emit_csv(records: Sequence[Mapping], path, columns: Sequence[str]) -> Path:
    """Header row plus one line per record, fields in declared order."""
    path = Path(path)
    lines = [",".join(columns)]
    for rec in records:
        lines.append(",".join(format_value(rec[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def emit_jsonl(records: Sequence, path) -> Path:
    """One compact JSON object per line."""
    path = Path(path)
    lines = [json.dumps(to_jsonable(rec), sort_keys=True, separators=(",", ":"))
             for rec in records]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
