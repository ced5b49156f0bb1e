"""
Coagulation kernels K(x, y), each paired with a sublinear phi and a margin
such that K(x, y) <= margin * phi(x) * phi(y).
"""

import math
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

import sublinear
from coagkit_errors import ConfigError, DominationError, MeasureError
from coagkit_logging import logger
from sublinear import SublinearFn

DOMINATION_SLACK = 1e-12


class Kernel:
    def __init__(
        self,
        name: str,
        evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray],
        dominating: SublinearFn,
        margin: float = 1.0,
        descriptor: Optional[Dict[str, Any]] = None,
        support_masses: Optional[Sequence[float]] = None,
    ):
        if margin < 1:
            raise ConfigError(f"Kernel margin must be >= 1, got {margin}", field="kernel.margin")
        self.name = name
        self._evaluator = evaluator
        self.phi = dominating
        self.margin = float(margin)
        self.descriptor = descriptor or {"type": name}
        self.support_masses = None if support_masses is None else np.asarray(support_masses, dtype=float)

    def __repr__(self):
        return f"Kernel({self.descriptor}, phi={self.phi.descriptor}, margin={self.margin:g})"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        values = self._evaluator(x, y)
        if np.ndim(values) == 0:
            return float(values)
        return np.asarray(values, dtype=float)

    def matrix(self, masses: np.ndarray) -> np.ndarray:
        masses = np.asarray(masses, dtype=float)
        return np.broadcast_to(self(masses[:, None], masses[None, :]), (len(masses), len(masses))).copy()

    @property
    def is_zero(self) -> bool:
        return self.descriptor.get("type") == "constant" and self.descriptor.get("c", 1.0) == 0.0


def eval_kernel(kernel: Kernel, x: float, y: float) -> float:
    if not (x > 0 and y > 0):
        raise MeasureError(f"Kernel arguments must be positive masses, got ({x}, {y})")
    return float(kernel(x, y))


def constant_kernel(c: float = 1.0) -> Kernel:
    phi = sublinear.constant(math.sqrt(c)) if c > 0 else sublinear.constant(1.0)
    return Kernel("constant", lambda x, y: np.full(np.broadcast(x, y).shape, float(c)), phi, 1.0, {"type": "constant", "c": float(c)})


def additive_kernel() -> Kernel:
    return Kernel("additive", lambda x, y: x + y, sublinear.power_sum([(1.0, 0.0), (1.0, 1.0)]), 1.0, {"type": "additive"})


def multiplicative_kernel(c: float = 1.0) -> Kernel:
    phi = sublinear.identity() if c == 1.0 else sublinear.power(1.0, math.sqrt(c))
    return Kernel("multiplicative", lambda x, y: c * (x * y), phi, 1.0, {"type": "multiplicative", "c": float(c)})


def brownian_kernel() -> Kernel:
    third = 1.0 / 3.0

    def evaluate(x, y):
        return (np.power(x, third) + np.power(y, third)) * (np.power(x, -third) + np.power(y, -third))

    return Kernel("brownian", evaluate, sublinear.brownian_phi(), 1.0, {"type": "brownian"})


class ClassTable:
    """Maps a mass to its chain class n >= 1 by exact lookup in x_1 < x_2 < ...; anything else is class 0."""

    def __init__(self, classes: Sequence[float], rel_tol: float = 1e-12):
        self.classes = np.asarray(classes, dtype=float)
        if len(self.classes) == 0 or np.any(self.classes <= 0) or np.any(np.diff(self.classes) <= 0):
            raise ConfigError("index_chain classes must be positive and strictly increasing", field="kernel.classes")
        self.rel_tol = rel_tol

    def __call__(self, masses) -> np.ndarray:
        masses = np.asarray(masses, dtype=float)
        idx = np.clip(np.searchsorted(self.classes, masses), 0, len(self.classes) - 1)
        left = np.clip(idx - 1, 0, len(self.classes) - 1)
        closer_left = np.abs(self.classes[left] - masses) < np.abs(self.classes[idx] - masses)
        best = np.where(closer_left, left, idx)
        hit = np.abs(self.classes[best] - masses) <= self.rel_tol * np.abs(masses)
        return np.where(hit, best + 1, 0)


def index_chain_kernel(classes: Sequence[float], lambda_base: float = 8.0) -> Kernel:
    table = ClassTable(classes)
    count = len(table.classes)

    def evaluate(x, y):
        n = table(x)
        m = table(y)
        lo = np.minimum(n, m)
        hi = np.maximum(n, m)
        neighbours = (hi - lo == 1) & (lo >= 1)
        return np.where(neighbours, np.power(float(lambda_base), lo.astype(float)), 0.0)

    phi = sublinear.constant(float(lambda_base) ** ((count - 1) / 2.0)) if count > 1 and lambda_base > 0 else sublinear.constant(1.0)
    kernel = Kernel(
        "index_chain",
        evaluate,
        phi,
        1.0,
        {"type": "index_chain", "lambda_base": float(lambda_base), "classes": table.classes.tolist()},
        support_masses=table.classes,
    )
    kernel.class_of = table
    return kernel


def verify_domination(
    kernel: Kernel,
    samples: int = 10_000,
    mass_range: Tuple[float, float] = (1e-3, 1e3),
    seed: int = 12345,
) -> Dict[str, Any]:
    """Largest sampled K(x, y) / (phi(x) phi(y)); passes iff <= margin (1 + 1e-12)."""
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    if kernel.support_masses is not None:
        pool = kernel.support_masses
        x = rng.choice(pool, size=samples)
        y = rng.choice(pool, size=samples)
        diag = pool
        x = np.concatenate((x, pool[:-1], diag))
        y = np.concatenate((y, pool[1:], diag))
    else:
        lo, hi = np.log(mass_range[0]), np.log(mass_range[1])
        x = np.exp(rng.uniform(lo, hi, samples))
        y = np.exp(rng.uniform(lo, hi, samples))
        diag = np.exp(np.linspace(lo, hi, max(2, min(samples, 1000))))
        x = np.concatenate((x, diag))
        y = np.concatenate((y, diag))

    phi_x = kernel.phi(x)
    phi_y = kernel.phi(y)
    if np.any(phi_x <= 0) or np.any(phi_y <= 0):
        k = int(np.argmin(np.minimum(phi_x, phi_y)))
        raise ConfigError(f"Dominating phi vanishes at mass {x[k] if phi_x[k] <= 0 else y[k]}", field="kernel.phi")
    ratio = kernel(x, y) / (phi_x * phi_y)
    k = int(np.argmax(ratio))
    max_ratio = float(ratio[k])
    passed = max_ratio <= kernel.margin * (1 + DOMINATION_SLACK)
    report = {
        "max_ratio": max_ratio,
        "worst_pair": [float(x[k]), float(y[k])],
        "margin": kernel.margin,
        "passed": bool(passed),
        "samples": int(len(x)),
    }
    logger.debug(f"verify_domination {kernel.name}: {report}")
    return report


_REGISTRY: Dict[str, Kernel] = {}


def register_kernel(name: str, kernel: Kernel, samples: int = 10_000, mass_range: Tuple[float, float] = (1e-3, 1e3)) -> Kernel:
    report = verify_domination(kernel, samples, mass_range)
    if not report["passed"]:
        raise DominationError(
            f"Kernel {name} exceeds its declared margin {kernel.margin}: ratio {report['max_ratio']:.6g} at {report['worst_pair']}"
        )
    _REGISTRY[name] = kernel
    logger.info(f"Registered kernel {name} (max ratio {report['max_ratio']:.4g}, margin {kernel.margin:g})")
    return kernel


def registered_kernel(name: str) -> Kernel:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"No kernel registered under {name!r}", field="kernel.name")


def parse_kernel(spec: Dict[str, Any]) -> Kernel:
    """Build a kernel from its JSON description, honouring optional phi / margin overrides."""
    try:
        kind = spec["type"]
        if kind == "constant":
            kernel = constant_kernel(float(spec.get("c", 1.0)))
        elif kind == "additive":
            kernel = additive_kernel()
        elif kind == "multiplicative":
            kernel = multiplicative_kernel(float(spec.get("c", 1.0)))
        elif kind == "brownian":
            kernel = brownian_kernel()
        elif kind == "index_chain":
            kernel = index_chain_kernel(spec["classes"], float(spec.get("lambda_base", 8.0)))
        elif kind == "registered":
            return registered_kernel(spec["name"])
        else:
            raise ConfigError(f"Unknown kernel type {kind!r}", field="kernel.type")
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Malformed kernel spec {spec}: {e}", field="kernel")

    if "phi" in spec or "margin" in spec:
        if "phi" in spec:
            kernel.phi = sublinear.parse_sublinear(spec["phi"])
        if "margin" in spec:
            kernel.margin = float(spec["margin"])
            if kernel.margin < 1:
                raise ConfigError(f"Kernel margin must be >= 1, got {kernel.margin}", field="kernel.margin")
        report = verify_domination(kernel)
        if not report["passed"]:
            raise DominationError(f"Kernel {kind} is not dominated by the supplied phi: ratio {report['max_ratio']:.6g}")
    return kernel
