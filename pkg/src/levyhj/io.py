"""Deterministic CSV and JSON writers with provenance."""

from __future__ import annotations

import csv
import json
import math
import subprocess
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__


@lru_cache(maxsize=1)
def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"],
                              cwd=Path(__file__).resolve().parent, capture_output=True,
                              text=True, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, config_sha256: str, seed: int) -> Path:
    """CSV with a ``# config_sha256=... seed=...`` comment line and a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_sha256={config_sha256} seed={seed} version={version_string()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Rows of a file written by :func:`write_csv` (comment line skipped)."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj: dict, config_sha256: str, seed: int) -> Path:
    """JSON report with a ``provenance`` block; keys sorted for byte stability."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(jsonable(obj))
    doc["provenance"] = {"config_sha256": config_sha256, "seed": seed,
                         "version": version_string()}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
