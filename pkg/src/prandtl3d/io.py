"""Snapshot files, CSV/JSON writers and the artifact manifest.

Outputs are byte-deterministic: JSON is written with sorted keys, floats
use repr, and npz members carry the fixed zip epoch timestamp.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import zipfile
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .state import FlowState, make_state

SNAPSHOT_KEYS = ("u", "v", "t", "epsilon", "grid")


class SnapshotError(OSError):
    """Unreadable or inconsistent snapshot file; maps to exit status 4."""


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows: list[dict]) -> Path:
    """Rows may have differing keys; the header is their ordered union."""
    path = Path(path)
    header: list = []
    for r in rows:
        for k in r:
            if k not in header:
                header.append(k)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in header])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_snapshot(path, state: FlowState) -> Path:
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, u=state.u, v=state.v, t=np.float64(state.t), epsilon=np.float64(state.epsilon),
                 grid=np.array(json.dumps(state.grid.spec.to_dict(), sort_keys=True)))
    return path


def read_snapshot(path) -> FlowState:
    """Load a snapshot; every failure names the file."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            missing = [k for k in SNAPSHOT_KEYS if k not in data.files]
            if missing:
                raise SnapshotError(f"{path}: missing member(s) {', '.join(missing)}")
            spec = GridSpec.from_dict(json.loads(str(data["grid"])))
            u, v = np.array(data["u"]), np.array(data["v"])
            t, eps = float(data["t"]), float(data["epsilon"])
    except SnapshotError:
        raise
    except FileNotFoundError:
        raise SnapshotError(f"{path}: no such file") from None
    except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile, json.JSONDecodeError) as e:
        raise SnapshotError(f"{path}: unreadable or truncated snapshot ({type(e).__name__}: {e})") from None
    grid = spec.build()
    if u.shape != grid.shape or v.shape != grid.shape:
        raise SnapshotError(f"{path}: field shape {u.shape} does not match grid {grid.shape}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise SnapshotError(f"{path}: non-finite field values")
    return make_state(grid, u, v, t, eps)


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _shape_of(path: Path):
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as d:
            return list(d["u"].shape)
    if path.suffix == ".csv":
        rows = read_csv(path)
        return [len(rows), len(rows[0]) if rows else 0]
    return None


def write_manifest(out_dir) -> Path:
    """manifest.json listing every other file with its shape and checksum."""
    out_dir = Path(out_dir)
    entries = []
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            entries.append({"name": p.relative_to(out_dir).as_posix(), "shape": _shape_of(p),
                            "bytes": p.stat().st_size, "sha256": sha256(p)})
    return write_json(out_dir / "manifest.json", {"files": entries})


def verify_manifest(out_dir) -> list[str]:
    """Names whose checksum no longer matches."""
    out_dir = Path(out_dir)
    man = json.loads((out_dir / "manifest.json").read_text())
    return [e["name"] for e in man["files"] if sha256(out_dir / e["name"]) != e["sha256"]]
