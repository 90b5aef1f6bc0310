"""Deterministic CSV / JSON writers carrying a rerun header."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def meta(cfg_hash: str, seed) -> dict:
    return {"artifact": "switchband", "version": __version__, "config_hash": cfg_hash, "seed": seed}


def write_json(path: Path, payload: dict, metadata: dict) -> None:
    body = {"meta": metadata, **payload}
    Path(path).write_text(json.dumps(to_jsonable(body), sort_keys=True, indent=2) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns: list[str], rows, metadata: dict) -> None:
    """Header lines start with ``#``; rows may be any iterable of sequences."""
    with open(path, "w", newline="") as fh:
        for key in ("artifact", "version", "config_hash", "seed"):
            fh.write(f"# {key}={metadata[key]}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_columns(path: Path, table: dict, metadata: dict) -> None:
    """Write equal-length column arrays."""
    cols = list(table)
    arrays = [np.asarray(table[c]) for c in cols]
    write_csv(path, cols, zip(*(a.tolist() for a in arrays)), metadata)
