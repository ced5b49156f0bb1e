from typing import Any, List, Optional, Sequence

import numpy as np

from coagkit_errors import ConfigError


class Truncation:
    """A truncation set B: everything, an interval (0, x_max], or a finite mass set."""

    def __init__(self, kind: str, x_max: Optional[float] = None, masses: Optional[Sequence[float]] = None, rel_tol: float = 1e-12):
        if kind not in ("all", "interval", "set"):
            raise ConfigError(f"Unknown truncation kind {kind!r}", field="truncation")
        self.kind = kind
        self.x_max = None if x_max is None else float(x_max)
        self.masses = None if masses is None else np.unique(np.asarray(masses, dtype=float))
        self.rel_tol = rel_tol
        if kind == "interval" and not (self.x_max and self.x_max > 0):
            raise ConfigError(f"Interval truncation needs x_max > 0, got {x_max}", field="truncation.interval")
        if kind == "set" and (self.masses is None or len(self.masses) == 0 or np.any(self.masses <= 0)):
            raise ConfigError("Finite truncation needs a non-empty set of positive masses", field="truncation.set")

    @classmethod
    def everything(cls) -> "Truncation":
        return cls("all")

    @classmethod
    def interval(cls, x_max: float) -> "Truncation":
        return cls("interval", x_max=x_max)

    @classmethod
    def finite(cls, masses: Sequence[float]) -> "Truncation":
        return cls("set", masses=masses)

    @property
    def is_all(self) -> bool:
        return self.kind == "all"

    @property
    def upper(self) -> float:
        if self.kind == "all":
            return np.inf
        if self.kind == "interval":
            return self.x_max
        return float(self.masses[-1])

    def contains(self, masses) -> np.ndarray:
        masses = np.asarray(masses, dtype=float)
        if self.kind == "all":
            return np.ones(masses.shape, dtype=bool)
        if self.kind == "interval":
            return (masses > 0) & (masses <= self.x_max * (1 + self.rel_tol))
        idx = np.clip(np.searchsorted(self.masses, masses), 0, len(self.masses) - 1)
        left = np.clip(idx - 1, 0, len(self.masses) - 1)
        tol = self.rel_tol * np.abs(masses)
        return (np.abs(self.masses[idx] - masses) <= tol) | (np.abs(self.masses[left] - masses) <= tol)

    def issubset(self, other: "Truncation") -> bool:
        if other.kind == "all":
            return True
        if self.kind == "all":
            return False
        if self.kind == "interval":
            return other.kind == "interval" and self.x_max <= other.x_max
        return bool(np.all(other.contains(self.masses)))

    def label(self) -> str:
        if self.kind == "all":
            return "all"
        if self.kind == "interval":
            return f"(0,{self.x_max:g}]"
        if len(self.masses) <= 6:
            return "{" + ",".join(f"{m:g}" for m in self.masses) + "}"
        return f"{{{self.masses[0]:g},...,{self.masses[-1]:g}}}#{len(self.masses)}"

    def to_json(self) -> Any:
        if self.kind == "all":
            return "all"
        if self.kind == "interval":
            return {"interval": self.x_max}
        return {"set": self.masses.tolist()}

    def __eq__(self, other):
        if not isinstance(other, Truncation):
            return NotImplemented
        return self.issubset(other) and other.issubset(self)

    __hash__ = None

    def __repr__(self):
        return f"Truncation({self.label()})"


def parse_truncation(spec: Any) -> Truncation:
    if spec == "all" or spec is None:
        return Truncation.everything()
    if isinstance(spec, dict):
        if "interval" in spec:
            return Truncation.interval(float(spec["interval"]))
        if "set" in spec:
            return Truncation.finite(spec["set"])
        if "range" in spec:
            lo, hi = int(spec["range"][0]), int(spec["range"][1])
            if lo < 1 or hi < lo:
                raise ConfigError(f"Range truncation needs 1 <= lo <= hi, got {spec['range']}", field="truncation.range")
            return Truncation.finite(np.arange(lo, hi + 1, dtype=float))
    raise ConfigError(f"Malformed truncation spec {spec!r}", field="truncation")


def ensure_nested(truncations: List[Truncation]) -> None:
    for k in range(1, len(truncations)):
        if not truncations[k - 1].issubset(truncations[k]):
            raise ConfigError(
                f"Truncations must be nested: {truncations[k - 1].label()} is not inside {truncations[k].label()}",
                field=f"truncations[{k}]",
            )
