"""Atomic file output and manifests."""

from __future__ import annotations

import json
import os
import platform
import tempfile
import time
from pathlib import Path

import numpy as np
import scipy

import kinhom


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def versions() -> dict:
    return {"kinhom": kinhom.__version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


def write_manifest(path, config, files, metadata: dict, wall_time: float) -> Path:
    """Manifest JSON. All timing information lives here, never in CSVs."""
    doc = {
        "scenario": config.scenario,
        "preset": config.preset,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "versions": versions(),
        "files": [Path(f).name for f in files],
        "metadata": metadata,
        "wall_time_s": wall_time,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    return atomic_write(path, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
