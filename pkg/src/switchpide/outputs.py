"""Deterministic CSV/JSON writers and run manifests."""

from __future__ import annotations

import datetime as _dt
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

__all__ = ["fmt", "csv_text", "write_csv", "write_json", "sha256_file", "RunManifest"]


def fmt(value) -> str:
    """17 significant digits for floats, plain text otherwise (locale independent)."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(csv_text(header, rows))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunManifest:
    """Collects outputs of one command and writes ``manifest.json`` last."""

    def __init__(self, out_dir, command: str, spec_path=None, config: dict | None = None):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.spec_hash = None if spec_path is None else sha256_file(spec_path)
        self.config = config or {}
        self.started = _now()
        self.outputs: list[str] = []

    def csv(self, name: str, header, rows) -> Path:
        path = write_csv(self.out / name, header, rows)
        self.outputs.append(name)
        return path

    def json(self, name: str, data) -> Path:
        path = write_json(self.out / name, data)
        self.outputs.append(name)
        return path

    def close(self) -> Path:
        return write_json(
            self.out / "manifest.json",
            {
                "command": self.command,
                "spec_sha256": self.spec_hash,
                "config": self.config,
                "version": __version__,
                "started": self.started,
                "finished": _now(),
                "outputs": sorted(self.outputs),
            },
        )


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
