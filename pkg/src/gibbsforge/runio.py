"""Run-directory output: metric CSVs, JSON documents, the config echo and the run manifest.

Every file is written whole to a temporary name and renamed into place,
so readers never observe a partial file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__

METRIC_COLUMNS = ("time", "subset", "metric", "value", "protocol", "seed")
METRIC_TYPES = {"time": "float", "subset": "str", "metric": "str", "value": "float", "protocol": "str", "seed": "int"}


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def metric_rows(times, values, subset: str, metric: str, protocol: str, seed) -> list[tuple]:
    seed = -1 if seed is None else int(seed)
    return [(float(t), subset, metric, float(v), protocol, seed) for t, v in zip(times, values)]


def csv_text(rows: Iterable[tuple], columns=METRIC_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def read_metric_csv(path) -> list[dict]:
    """Parse a metric CSV back into typed dictionaries."""
    casts = {"float": float, "int": int, "str": str}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: header {reader.fieldnames} does not match {METRIC_COLUMNS}")
        return [{k: casts[METRIC_TYPES[k]](v) for k, v in row.items()} for row in reader]


@dataclass
class RunManifest:
    config_hash: str
    master_seed: int
    code_version: str = __version__
    started: float = field(default_factory=time.time)
    wall_time: float = 0.0
    files: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "master_seed": self.master_seed,
            "wall_time": self.wall_time,
            "files": sorted(self.files),
            "errors": self.errors,
        }


class RunDirectory:
    """Single writer for one run directory; records every emitted file in the manifest."""

    def __init__(self, root, config_hash: str, master_seed: int):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(config_hash, master_seed)

    def write_text(self, name: str, text: str) -> Path:
        path = self.root / name
        _atomic_write(path, text)
        if name not in self.manifest.files:
            self.manifest.files.append(name)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n")

    def write_csv(self, name: str, rows, columns=METRIC_COLUMNS) -> Path:
        return self.write_text(name, csv_text(rows, columns))

    def finish(self) -> Path:
        self.manifest.wall_time = time.time() - self.manifest.started
        path = self.root / "manifest.json"
        _atomic_write(path, json.dumps(self.manifest.to_dict(), indent=2) + "\n")
        return path
