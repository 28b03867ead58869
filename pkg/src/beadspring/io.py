"""Deterministic text serialisation and atomic file output."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = ["fmt_float", "to_jsonable", "dumps_json", "csv_text", "write_atomic", "write_all", "sha256"]


def fmt_float(x) -> str:
    """Shortest round-trip decimal form."""
    return repr(float(x))


def to_jsonable(obj):
    """Convert numpy containers and non-finite floats (to ``None``) recursively."""
    if isinstance(obj, Mapping):
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
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n"


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(fmt_float(v) for v in row))
    return "\n".join(out) + "\n"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_atomic(path: str, data: bytes) -> None:
    """Write via a temporary file in the target directory and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_all(directory: str, files: Mapping[str, bytes]) -> list[str]:
    """Write every file atomically; nothing is written unless all contents exist."""
    paths = []
    for name, data in files.items():
        path = os.path.join(directory, name)
        write_atomic(path, data)
        paths.append(path)
    return paths
