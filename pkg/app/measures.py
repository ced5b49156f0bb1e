"""
Finite atomic measures on (0, inf).

A DiscreteMeasure is an immutable value: sorted numpy arrays of masses and
weights plus the quantization resolution ``epsilon_mass`` that decided which
atoms were merged at construction time.
"""

import math
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from coagkit_errors import MeasureError
from coagkit_logging import logger


class DiscreteMeasure:
    __slots__ = ("_masses", "_weights", "_epsilon_mass")

    def __init__(self, masses: np.ndarray, weights: np.ndarray, epsilon_mass: float = 0.0):
        # Callers outside this module go through make_measure
        masses = np.array(masses, dtype=float)
        weights = np.array(weights, dtype=float)
        masses.setflags(write=False)
        weights.setflags(write=False)
        self._masses = masses
        self._weights = weights
        self._epsilon_mass = float(epsilon_mass)

    @property
    def masses(self) -> np.ndarray:
        return self._masses

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def epsilon_mass(self) -> float:
        return self._epsilon_mass

    def __len__(self):
        return len(self._masses)

    def __repr__(self):
        body = ", ".join(f"{m:g}: {w:g}" for m, w in zip(self._masses[:6], self._weights[:6]))
        more = ", ..." if len(self) > 6 else ""
        return f"DiscreteMeasure({{{body}{more}}}, epsilon_mass={self._epsilon_mass:g})"

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self._epsilon_mass == other._epsilon_mass
            and np.array_equal(self._masses, other._masses)
            and np.array_equal(self._weights, other._weights)
        )

    __hash__ = None

    def atoms(self) -> List[Tuple[float, float]]:
        return [(float(m), float(w)) for m, w in zip(self._masses, self._weights)]

    def total_mass(self) -> float:
        """Total variation norm, i.e. the sum of weights."""
        return math.fsum(self._weights)

    def weight_at(self, mass: float) -> float:
        idx = np.searchsorted(self._masses, mass)
        for candidate in (idx - 1, idx):
            if 0 <= candidate < len(self._masses) and abs(self._masses[candidate] - mass) <= self._epsilon_mass:
                return float(self._weights[candidate])
        return 0.0

    def weighted(self, f: Callable) -> "DiscreteMeasure":
        """The measure f·mu, same sites."""
        return DiscreteMeasure(self._masses, _evaluate(f, self._masses) * self._weights, self._epsilon_mass)

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self._masses, self._weights * factor, self._epsilon_mass)

    def restrict(self, mask: np.ndarray) -> "DiscreteMeasure":
        return DiscreteMeasure(self._masses[mask], self._weights[mask], self._epsilon_mass)

    def to_json(self) -> Dict[str, Any]:
        return {"epsilon_mass": self._epsilon_mass, "atoms": [[m, w] for m, w in self.atoms()]}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"mass": self._masses, "weight": self._weights})

    def to_csv(self, csv_path) -> None:
        self.to_frame().to_csv(csv_path, index=False, float_format="%.17g")


def _evaluate(f: Callable, masses: np.ndarray) -> np.ndarray:
    try:
        values = np.asarray(f(masses), dtype=float)
        if values.shape == masses.shape:
            return values
        if values.ndim == 0:
            return np.full(masses.shape, float(values))
    except (TypeError, ValueError):
        pass
    return np.array([float(f(float(m))) for m in masses], dtype=float)


def _cluster_starts(sorted_masses: np.ndarray, epsilon_mass: float) -> np.ndarray:
    # Neighbours within epsilon chain into one cluster
    if len(sorted_masses) == 0:
        return np.zeros(0, dtype=int)
    gaps = np.diff(sorted_masses)
    breaks = gaps > epsilon_mass if epsilon_mass > 0 else gaps > 0
    return np.concatenate(([0], np.nonzero(breaks)[0] + 1))


def make_measure(pairs: Iterable[Sequence[float]], epsilon_mass: float = 0.0) -> DiscreteMeasure:
    if epsilon_mass < 0 or not math.isfinite(epsilon_mass):
        raise MeasureError(f"epsilon_mass must be a finite non-negative number, got {epsilon_mass}")

    masses, weights = [], []
    for index, pair in enumerate(pairs):
        try:
            mass, weight = float(pair[0]), float(pair[1])
        except (TypeError, ValueError, IndexError) as e:
            raise MeasureError(f"Atom is not a (mass, weight) pair: {pair!r}: {e}", index)
        if not (math.isfinite(mass) and mass > 0):
            raise MeasureError(f"Atom mass must be positive and finite, got {mass}", index)
        if not (math.isfinite(weight) and weight >= 0):
            raise MeasureError(f"Atom weight must be non-negative and finite, got {weight}", index)
        masses.append(mass)
        weights.append(weight)

    if not masses:
        return DiscreteMeasure(np.zeros(0), np.zeros(0), epsilon_mass)

    masses = np.asarray(masses)
    weights = np.asarray(weights)
    order = np.argsort(masses, kind="stable")
    masses, weights = masses[order], weights[order]

    starts = _cluster_starts(masses, epsilon_mass)
    if len(starts) == len(masses):
        return DiscreteMeasure(masses, weights, epsilon_mass)

    ends = np.append(starts[1:], len(masses))
    merged_masses = np.empty(len(starts))
    merged_weights = np.empty(len(starts))
    for k, (lo, hi) in enumerate(zip(starts, ends)):
        cluster_m, cluster_w = masses[lo:hi], weights[lo:hi]
        total = math.fsum(cluster_w)
        merged_weights[k] = total
        if hi - lo == 1 or np.all(cluster_m == cluster_m[0]):
            merged_masses[k] = cluster_m[0]
        elif total > 0:
            merged_masses[k] = math.fsum(cluster_m * cluster_w) / total
        else:
            merged_masses[k] = math.fsum(cluster_m) / (hi - lo)
    logger.debug(f"make_measure merged {len(masses)} atoms into {len(starts)} at epsilon {epsilon_mass:g}")
    return DiscreteMeasure(merged_masses, merged_weights, epsilon_mass)


def empty_measure(epsilon_mass: float = 0.0) -> DiscreteMeasure:
    return DiscreteMeasure(np.zeros(0), np.zeros(0), epsilon_mass)


def default_epsilon(masses: Sequence[float]) -> float:
    """Zero for integer lattices, x_min * 1e-9 otherwise."""
    masses = np.asarray(masses, dtype=float)
    if len(masses) == 0 or np.all(masses == np.round(masses)):
        return 0.0
    return float(masses.min()) * 1e-9


def moment(mu: DiscreteMeasure, f: Callable) -> float:
    if len(mu) == 0:
        return 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        terms = _evaluate(f, mu.masses) * mu.weights
    if not np.all(np.isfinite(terms)):
        logger.warning("moment: non-finite terms encountered, reporting overflow as inf")
        return math.inf if not np.any(np.isnan(terms)) else math.nan
    return math.fsum(terms)


def signed_difference(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Tuple[np.ndarray, np.ndarray]:
    """Sites and weights of mu - nu, with sites closer than epsilon identified."""
    if mu.epsilon_mass != nu.epsilon_mass:
        raise MeasureError(f"Measures carry different epsilon_mass ({mu.epsilon_mass} vs {nu.epsilon_mass})")
    masses = np.concatenate((mu.masses, nu.masses))
    weights = np.concatenate((mu.weights, -nu.weights))
    if len(masses) == 0:
        return masses, weights
    order = np.argsort(masses, kind="stable")
    masses, weights = masses[order], weights[order]
    starts = _cluster_starts(masses, mu.epsilon_mass)
    return masses[starts], np.add.reduceat(weights, starts)


def total_variation(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    _, diff = signed_difference(mu, nu)
    return math.fsum(np.abs(diff))


def pair_integral(mu: DiscreteMeasure, g: Callable, n: float = 1.0) -> float:
    """
    Integral of g(x, y) against the pair-counting measure
    mu^(n)(A x A') = mu(A) mu(A') - mu(A n A') / n.
    For integer-valued n*mu this counts ordered pairs of distinct particles.
    """
    if len(mu) == 0:
        return 0.0
    x = mu.masses[:, None]
    y = mu.masses[None, :]
    values = np.broadcast_to(np.asarray(g(x, y), dtype=float), (len(mu), len(mu)))
    products = values * np.outer(mu.weights, mu.weights)
    diagonal = np.diag(values) * mu.weights / n
    return math.fsum(products.ravel()) - math.fsum(diagonal)


def sample_empirical(mu0: DiscreteMeasure, n: int, rng: np.random.Generator) -> DiscreteMeasure:
    """Empirical distribution of an i.i.d. sample of size n from the probability measure mu0."""
    if n < 1:
        raise MeasureError(f"Sample size must be positive, got {n}")
    total = mu0.total_mass()
    if len(mu0) == 0 or abs(total - 1.0) > 1e-9:
        raise MeasureError(f"Sampling needs a probability measure, total weight is {total}")
    draws = rng.choice(len(mu0), size=n, p=mu0.weights / total)
    counts = np.bincount(draws, minlength=len(mu0))
    keep = counts > 0
    return DiscreteMeasure(mu0.masses[keep], counts[keep] / n, mu0.epsilon_mass)


def measure_from_counts(masses: np.ndarray, epsilon_mass: float = 0.0, scale: float = 1.0) -> DiscreteMeasure:
    """Integer-valued measure of a particle array, weights multiplied by scale."""
    if len(masses) == 0:
        return empty_measure(epsilon_mass)
    sites, counts = np.unique(np.asarray(masses, dtype=float), return_counts=True)
    if epsilon_mass > 0:
        return make_measure(zip(sites, counts * scale), epsilon_mass)
    return DiscreteMeasure(sites, counts * scale, epsilon_mass)


def measure_from_json(payload: Dict[str, Any]) -> DiscreteMeasure:
    try:
        return make_measure(payload["atoms"], float(payload.get("epsilon_mass", 0.0)))
    except (KeyError, TypeError) as e:
        raise MeasureError(f"Malformed measure JSON: {e}")


def measure_from_csv(csv_path, epsilon_mass: float = 0.0) -> DiscreteMeasure:
    frame = pd.read_csv(csv_path, dtype={"mass": float, "weight": float}, float_precision="round_trip")
    return make_measure(zip(frame["mass"], frame["weight"]), epsilon_mass)


def monodisperse(count: float, mass: float = 1.0) -> DiscreteMeasure:
    return make_measure([(mass, count)], 0.0)
