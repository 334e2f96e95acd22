"""Verification report record shared by all checks."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["VerificationReport", "to_jsonable"]


def to_jsonable(obj):
    """Recursively convert numpy and complex values to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": to_jsonable(float(obj.real)), "im": to_jsonable(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


@dataclass
class VerificationReport:
    """Outcome of one named check.

    ``target`` is the exact or bounding value, ``estimate`` what was measured
    and ``tolerance`` the allowed slack.  ``details`` carries check-specific
    diagnostics (failure locations, per-level tables).
    """

    name: str
    passed: bool
    target: float | None = None
    estimate: float | None = None
    tolerance: float | None = None
    stderr: float | None = None
    n_samples: int | None = None
    seed: int | None = None
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    wall_time: float | None = None

    def __bool__(self):
        return bool(self.passed)

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = to_jsonable(asdict(self))
        if not include_wall_time:
            d.pop("wall_time", None)
        return d

    def to_json(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_time), indent=2, sort_keys=True)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = [f"[{status}] {self.name}"]
        for label, val in (("target", self.target), ("estimate", self.estimate),
                           ("tol", self.tolerance), ("stderr", self.stderr)):
            if val is not None:
                parts.append(f"{label}={val:.6g}")
        if self.n_samples is not None:
            parts.append(f"n={self.n_samples}")
        return " ".join(parts)
