"""Machine-readable result emission: JSON reports and CSV tables.

Every report echoes its full configuration (no silent defaults), records
the seed of any randomized sweep, and attaches to every numeric check
the tolerance it was judged against.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Sequence

SCHEMA_VERSION = 1


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    @classmethod
    def le(cls, name: str, value: float, tolerance: float, detail: str = "") -> "Check":
        return cls(name=name, value=float(value), tolerance=float(tolerance),
                   passed=bool(abs(value) <= tolerance), detail=detail)


@dataclass
class Report:
    command: str
    config: Dict[str, Any]
    seed: int | None = None
    checks: List[Check] = field(default_factory=list)
    values: Dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
            "values": self.values,
        }

    def write(self, path: str) -> None:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, default=_coerce)


def _coerce(obj):
    import numpy as np
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    count = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
            count += 1
    return count


_REPORT_SCHEMA = {
    "schema_version": int,
    "command": str,
    "config": dict,
    "passed": bool,
    "checks": list,
}

_CHECK_SCHEMA = {
    "name": str,
    "value": (int, float),
    "tolerance": (int, float),
    "passed": bool,
}


def validate_report(doc: dict) -> None:
    """Structural validation of a report document; raises on mismatch."""
    for key, typ in _REPORT_SCHEMA.items():
        if key not in doc:
            raise ValueError(f"report missing key {key!r}")
        if not isinstance(doc[key], typ):
            raise ValueError(f"report key {key!r} has type "
                             f"{type(doc[key]).__name__}, wanted {typ}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValueError("unknown report schema version")
    for c in doc["checks"]:
        for key, typ in _CHECK_SCHEMA.items():
            if key not in c:
                raise ValueError(f"check missing key {key!r}")
            if not isinstance(c[key], typ):
                raise ValueError(f"check key {key!r} wrong type")
    if "seed" in doc and doc["seed"] is not None and not isinstance(doc["seed"], int):
        raise ValueError("seed must be an integer when present")


def roundtrip(report: Report) -> dict:
    doc = json.loads(json.dumps(report.to_json(), default=_coerce))
    validate_report(doc)
    return doc
