"""Deterministic JSON/CSV writers shared by every stage."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from pathlib import Path

import numpy as np

UNBOUNDED_TOKEN = "UNBOUNDED"


def _clean(obj):
    """Make ``obj`` strict-JSON: NaN -> null, +/-inf -> "UNBOUNDED", numpy -> python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return UNBOUNDED_TOKEN if x > 0 else "-" + UNBOUNDED_TOKEN
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (dt.date, dt.datetime)):
        return obj.isoformat()
    if hasattr(obj, "value") and hasattr(obj, "name"):       # enums
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return UNBOUNDED_TOKEN
        return repr(x)
    return str(x)


def write_csv(path: str | Path, header: list[str], rows: list[list], manifest_hash: str | None = None) -> Path:
    """CSV with an optional leading ``# manifest: <hash>`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    if manifest_hash is not None:
        buf.write(f"# manifest: {manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path: str | Path) -> tuple[str | None, list[dict]]:
    """Return (manifest hash or None, rows as dicts)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    manifest = None
    if lines and lines[0].startswith("# manifest:"):
        manifest = lines[0].split(":", 1)[1].strip()
        lines = lines[1:]
    return manifest, list(csv.DictReader(lines))
