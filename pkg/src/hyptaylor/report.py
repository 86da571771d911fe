"""Structured run reports and atomic file output."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

SCHEMA_VERSION = "1"
DIVERGED = "diverged"


def _finite_or_flag(value):
    if isinstance(value, float) and not math.isfinite(value):
        return DIVERGED
    return value


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    diverged: bool = False
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        out = asdict(self)
        out["metrics"] = {k: _finite_or_flag(v) for k, v in self.metrics.items()}
        out["series"] = {k: [_finite_or_flag(v) for v in vs] for k, vs in self.series.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {data.get('schema_version')!r}")
        return cls(**data)

    def metrics_block(self) -> str:
        """Canonical text of the metrics map, for reproducibility comparisons."""
        return json.dumps(self.to_dict()["metrics"], sort_keys=True)


def write_atomic(path, text: str):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
