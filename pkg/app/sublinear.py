"""
Sublinear weight functions phi: (0, inf) -> [0, inf).

phi(l x) <= l phi(x) for l >= 1, which forces phi(x + y) <= phi(x) + phi(y).
"""

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from coagkit_errors import ConfigError


class SublinearFn:
    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray], descriptor: Dict[str, Any]):
        self._evaluator = evaluator
        self.descriptor = descriptor

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        values = self._evaluator(np.asarray(x, dtype=float))
        return float(values) if scalar else values

    def __repr__(self):
        return f"SublinearFn({self.descriptor})"

    @property
    def kind(self) -> str:
        return self.descriptor["type"]


def identity() -> SublinearFn:
    return SublinearFn(lambda x: x.copy(), {"type": "identity"})


def constant(c: float = 1.0) -> SublinearFn:
    if c <= 0:
        raise ConfigError(f"Constant phi must be positive, got {c}", field="phi.c")
    return SublinearFn(lambda x: np.full(np.shape(x), float(c)), {"type": "constant", "c": c})


def power(alpha: float, c: float = 1.0) -> SublinearFn:
    if alpha > 1:
        raise ConfigError(f"Power phi needs alpha <= 1, got {alpha}", field="phi.alpha")
    if c <= 0:
        raise ConfigError(f"Power phi needs a positive coefficient, got {c}", field="phi.c")
    return SublinearFn(lambda x: c * np.power(x, alpha), {"type": "power", "alpha": alpha, "c": c})


def max_with(c: float) -> SublinearFn:
    if c <= 0:
        raise ConfigError(f"max(x, c) phi needs c > 0, got {c}", field="phi.c")
    return SublinearFn(lambda x: np.maximum(x, c), {"type": "max", "c": c})


def power_sum(terms: Sequence[Tuple[float, float]]) -> SublinearFn:
    """Sum of c_i x^alpha_i with c_i > 0 and alpha_i <= 1; negative exponents allowed."""
    terms = [(float(c), float(a)) for c, a in terms]
    if not terms:
        raise ConfigError("power_sum phi needs at least one term", field="phi.terms")
    for c, a in terms:
        if c <= 0 or a > 1:
            raise ConfigError(f"power_sum term ({c}, {a}) needs c > 0 and alpha <= 1", field="phi.terms")

    def evaluate(x):
        total = np.zeros(np.shape(x))
        for c, a in terms:
            total = total + c * np.power(x, a)
        return total

    return SublinearFn(evaluate, {"type": "power_sum", "terms": [list(t) for t in terms]})


def table(xs: Sequence[float], ys: Sequence[float], samples: int = 2000, seed: int = 0) -> SublinearFn:
    """
    Piecewise linear phi through (x_k, y_k), extended as y_0 x / x_0 below the
    first node and y_last x / x_last above the last one. The result is checked
    on sampled pairs before it is returned.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 1 or len(xs) != len(ys) or np.any(np.diff(xs) <= 0) or np.any(xs <= 0) or np.any(ys <= 0):
        raise ConfigError("Table phi needs strictly increasing positive x and positive y of equal length", field="phi")

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        inside = np.interp(x, xs, ys)
        below = ys[0] * x / xs[0]
        above = ys[-1] * x / xs[-1]
        return np.where(x < xs[0], below, np.where(x > xs[-1], above, inside))

    fn = SublinearFn(evaluate, {"type": "table", "x": xs.tolist(), "y": ys.tolist()})
    report = check_sublinear(fn, samples=samples, rng=np.random.default_rng(seed), mass_range=(xs[0] / 10, xs[-1] * 10))
    if not report["passed"]:
        raise ConfigError(f"Table phi is not sublinear/subadditive on samples: worst {report['worst']}", field="phi")
    return fn


def custom(evaluator: Callable[[np.ndarray], np.ndarray], name: str = "custom") -> SublinearFn:
    return SublinearFn(evaluator, {"type": "custom", "name": name})


def truncate_sublinear(phi: SublinearFn, n: int) -> SublinearFn:
    """
    phi_n(x) = n x phi(1/n) on (0, 1/n], phi(x) on (1/n, n], 0 beyond n.
    phi_n increases to phi as n grows.
    """
    if n < 1:
        raise ValueError(f"Truncation level must be >= 1, got {n}")
    inner = 1.0 / n
    slope = n * phi(inner)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= inner, slope * x, np.where(x <= n, phi(x), 0.0))

    return SublinearFn(evaluate, {"type": "truncated", "n": n, "base": phi.descriptor})


def check_sublinear(
    phi: SublinearFn,
    samples: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    mass_range: Tuple[float, float] = (1e-3, 1e3),
    rel_tol: float = 1e-12,
) -> Dict[str, Any]:
    """Sampled check of phi(l x) <= l phi(x) and phi(x + y) <= phi(x) + phi(y)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    lo, hi = np.log(mass_range[0]), np.log(mass_range[1])
    x = np.exp(rng.uniform(lo, hi, samples))
    y = np.exp(rng.uniform(lo, hi, samples))
    scale = np.exp(rng.uniform(0.0, np.log(100.0), samples))

    lhs_lin, rhs_lin = phi(scale * x), scale * phi(x)
    lhs_add, rhs_add = phi(x + y), phi(x) + phi(y)
    lin_excess = lhs_lin - rhs_lin * (1 + rel_tol)
    add_excess = lhs_add - rhs_add * (1 + rel_tol)

    worst: List[Any] = []
    if np.any(lin_excess > 0):
        k = int(np.argmax(lin_excess))
        worst.append({"check": "sublinear", "x": float(x[k]), "scale": float(scale[k])})
    if np.any(add_excess > 0):
        k = int(np.argmax(add_excess))
        worst.append({"check": "subadditive", "x": float(x[k]), "y": float(y[k])})
    return {
        "sublinear": bool(np.all(lin_excess <= 0)),
        "subadditive": bool(np.all(add_excess <= 0)),
        "passed": not worst,
        "worst": worst,
    }


def parse_sublinear(spec: Dict[str, Any]) -> SublinearFn:
    try:
        kind = spec["type"]
        if kind == "identity":
            return identity()
        elif kind == "constant":
            return constant(float(spec.get("c", 1.0)))
        elif kind == "power":
            return power(float(spec["alpha"]), float(spec.get("c", 1.0)))
        elif kind == "max":
            return max_with(float(spec["c"]))
        elif kind == "power_sum":
            return power_sum(spec["terms"])
        elif kind == "table":
            return table(spec["x"], spec["y"])
        elif kind == "brownian":
            return brownian_phi()
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Malformed phi spec {spec}: {e}", field="phi")
    raise ConfigError(f"Unknown phi type {spec.get('type')!r}", field="phi.type")


def brownian_phi() -> SublinearFn:
    third = 1.0 / 3.0
    fn = power_sum([(2.0, third), (2.0, -third)])
    fn.descriptor = {"type": "brownian"}
    return fn


def positive_on(phi: SublinearFn, masses: np.ndarray) -> bool:
    values = phi(np.asarray(masses, dtype=float))
    return bool(np.all(values > 0)) and bool(np.all(np.isfinite(values)))


def sup_on(phi: SublinearFn, masses: np.ndarray) -> float:
    if len(masses) == 0:
        return 0.0
    return float(np.max(phi(np.asarray(masses, dtype=float))))


def sq(phi: SublinearFn) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.square(phi(x))

