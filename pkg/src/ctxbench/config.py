"""Runtime configuration: one JSON file plus environment overrides.

Precedence: explicit arguments, then ``CTXBENCH_*`` variables, then the file
named by ``--config`` or ``CTXBENCH_CONFIG``, then defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

CONFIG_ENV = "CTXBENCH_CONFIG"
_ENV = {
    "data_dir": "CTXBENCH_DATA_DIR",
    "host": "CTXBENCH_HOST",
    "port": "CTXBENCH_PORT",
    "fixture_mode": "CTXBENCH_FETCH_MODE",
    "seed": "CTXBENCH_SEED",
    "output": "CTXBENCH_OUTPUT",
}


@dataclass(frozen=True)
class Config:
    data_dir: str = "./bench-data"
    host: str = "127.0.0.1"
    port: int = 8000
    fixture_mode: bool = True
    seed: int = 0
    output: str = "./bench-out"

    def ensure_dirs(self) -> "Config":
        Path(self.data_dir).mkdir(parents=True, exist_ok=True)
        return self


def _coerce(name: str, raw):
    if name in ("port", "seed"):
        return int(raw)
    if name == "fixture_mode":
        if isinstance(raw, bool):
            return raw
        return str(raw).lower() not in ("live", "0", "false", "no")
    return str(raw)


def load_config(path: Optional[str] = None, **overrides) -> Config:
    values: dict = {}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(Config)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: _coerce(k, v) for k, v in data.items()})
    for name, env in _ENV.items():
        if env in os.environ:
            values[name] = _coerce(name, os.environ[env])
    values.update({k: _coerce(k, v) for k, v in overrides.items() if v is not None})
    return replace(Config(), **values)
