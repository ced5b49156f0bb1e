"""
Exact simulation of the stochastic coalescent and of the truncated chain
(X^B, Lambda^B), plus the generator checks that compare Monte Carlo drift with
the exact pair-counting drift.

Pairs are proposed against the majorant margin * phi(x_i) phi(x_j) and thinned
with probability K(x_i, x_j) / (margin phi(x_i) phi(x_j)); particles are drawn
proportionally to phi from a binary indexed tree.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from coagkit_errors import CacheCoherenceError, DominationError, InvariantViolation, MonotonicityViolation
from coagkit_logging import logger
from coagkit_settings import settings
from kernels import DOMINATION_SLACK, Kernel
from measures import DiscreteMeasure, measure_from_counts, pair_integral
from phi_tree import PhiTree
from sublinear import SublinearFn
from truncated_system import Trajectory, TruncatedState
from truncation import Truncation

MERGE_IN = "merge-in-B"
MERGE_LEAK = "merge-leak"
SINGLE_LEAK = "single-leak"


class ParticleSystem:
    """
    Particles stored slot-wise; a merge keeps the first slot and frees the
    second, so slots are never reused. S1 and S2 cache the sums of phi and
    phi^2 over live particles.
    """

    def __init__(self, masses: Sequence[float], phi: SublinearFn, B: Optional[Truncation] = None, lam: float = 0.0, t: float = 0.0, epsilon_mass: float = 0.0):
        self.masses = np.array(masses, dtype=float)
        if len(self.masses) and np.any(self.masses <= 0):
            raise ValueError("Particle masses must be positive")
        self.phi = phi
        self.B = B if B is not None else Truncation.everything()
        self.lam = float(lam)
        self.t = float(t)
        self.epsilon_mass = epsilon_mass
        self.alive = np.ones(len(self.masses), dtype=bool)
        self.count = len(self.masses)
        values = np.asarray(phi(self.masses), dtype=float) if len(self.masses) else np.zeros(0)
        self.tree = PhiTree(values)
        self.S1 = math.fsum(values)
        self.S2 = math.fsum(values * values)

    @classmethod
    def restricted(cls, masses: Sequence[float], phi: SublinearFn, B: Truncation, epsilon_mass: float = 0.0) -> "ParticleSystem":
        """X^B_0 = 1_B X_0 with Lambda^B_0 = <phi 1_{B^c}, X_0>."""
        masses = np.asarray(masses, dtype=float)
        inside = B.contains(masses)
        lam0 = math.fsum(np.asarray(phi(masses[~inside]), dtype=float)) if np.any(~inside) else 0.0
        return cls(masses[inside], phi, B, lam0, 0.0, epsilon_mass)

    def __repr__(self):
        return f"ParticleSystem(count={self.count}, lam={self.lam:g}, t={self.t:g}, B={self.B.label()})"

    def live_masses(self) -> np.ndarray:
        return self.masses[self.alive]

    def measure(self, scale: float = 1.0) -> DiscreteMeasure:
        return measure_from_counts(self.live_masses(), self.epsilon_mass, scale)

    def phi_total(self) -> float:
        return self.S1 + self.lam

    def pair_majorant(self, margin: float) -> float:
        if self.count < 2:
            return 0.0
        return max(0.0, margin * (self.S1 * self.S1 - self.S2) / 2.0)

    def remove(self, slot: int) -> float:
        value = self.tree.value(slot)
        self.tree.set_value(slot, 0.0)
        self.alive[slot] = False
        self.count -= 1
        self.S1 -= value
        self.S2 -= value * value
        return value

    def replace(self, slot: int, mass: float) -> None:
        old = self.tree.value(slot)
        value = float(self.phi(mass))
        self.masses[slot] = mass
        self.tree.set_value(slot, value)
        self.S1 += value - old
        self.S2 += value * value - old * old

    def refresh(self, tolerance: float) -> None:
        """Recompute the cached sums and the tree; drift beyond tolerance is a bug."""
        values = np.where(self.alive, np.asarray(self.phi(self.masses), dtype=float) if len(self.masses) else 0.0, 0.0)
        S1 = math.fsum(values)
        S2 = math.fsum(values * values)
        for name, cached, exact in (("S1", self.S1, S1), ("S2", self.S2, S2)):
            if abs(cached - exact) > tolerance * max(abs(exact), 1.0):
                raise CacheCoherenceError(f"Cached {name}={cached!r} drifted from recomputed {exact!r}")
        self.S1, self.S2 = S1, S2
        self.tree.rebuild(values)


@dataclass
class EventLog:
    times: List[float] = field(default_factory=list)
    kinds: List[str] = field(default_factory=list)
    m1: List[float] = field(default_factory=list)
    m2: List[float] = field(default_factory=list)
    m_out: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def append(self, t: float, kind: str, m1: float, m2: float = math.nan, m_out: float = math.nan) -> None:
        if self.times and t <= self.times[-1]:
            raise InvariantViolation(f"Event at t={t!r} does not follow t={self.times[-1]!r}", invariant="time-order")
        self.times.append(t)
        self.kinds.append(kind)
        self.m1.append(m1)
        self.m2.append(m2)
        self.m_out.append(m_out)

    def rescaled(self, n: float) -> "EventLog":
        return EventLog([t * n for t in self.times], list(self.kinds), list(self.m1), list(self.m2), list(self.m_out))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "kind": self.kinds, "m1": self.m1, "m2": self.m2, "m_out": self.m_out})

    def to_csv(self, csv_path) -> None:
        self.to_frame().to_csv(csv_path, index=False, float_format="%.17g")


@dataclass
class ChainRun:
    trajectory: Trajectory
    events: EventLog
    final: ParticleSystem


def _rng(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _snapshot(system: ParticleSystem, t: float) -> TruncatedState:
    return TruncatedState(system.measure(), system.lam, system.B, float(t))


def simulate_coupled(
    X0: ParticleSystem,
    kernel: Kernel,
    phi: SublinearFn,
    t_end: float,
    seed: Union[int, np.random.Generator],
    sample_times: Optional[Sequence[float]] = None,
) -> ChainRun:
    """
    Run (X^B, Lambda^B) to t_end. Pairs leave at rate K and either merge inside
    B or leak phi(x_i + x_j) into Lambda; a single particle leaks at rate
    phi(x_i) Lambda. X0 is advanced in place.
    """
    rng = _rng(seed)
    system = X0
    margin = kernel.margin
    times = np.linspace(0.0, t_end, settings.sampleGridPoints) if sample_times is None else np.asarray(sample_times, dtype=float)
    refresh_every = settings.s2RefreshEvery
    tolerance = settings.cacheTolerance
    log = EventLog()
    snapshots: List[TruncatedState] = []
    k = 0
    accepted = 0
    proposals = 0

    while True:
        pair_rate = system.pair_majorant(margin)
        single_rate = system.lam * system.S1 if system.count else 0.0
        total = pair_rate + single_rate
        t_next = system.t + rng.exponential(1.0 / total) if total > 0 else math.inf
        while k < len(times) and times[k] < t_next and times[k] <= t_end:
            snapshots.append(_snapshot(system, times[k]))
            k += 1
        if t_next > t_end:
            break
        system.t = t_next
        proposals += 1

        before = system.phi_total()
        if single_rate > 0 and rng.random() * total >= pair_rate:
            i = system.tree.sample(rng)
            x = float(system.masses[i])
            system.lam += system.remove(i)
            log.append(system.t, SINGLE_LEAK, x)
        else:
            i = system.tree.sample(rng)
            j = system.tree.sample(rng)
            while j == i:
                i = system.tree.sample(rng)
                j = system.tree.sample(rng)
            x, y = float(system.masses[i]), float(system.masses[j])
            phi_x, phi_y = system.tree.value(i), system.tree.value(j)
            ratio = float(kernel(x, y)) / (margin * phi_x * phi_y)
            if ratio > 1 + DOMINATION_SLACK:
                raise DominationError(f"K({x:g}, {y:g}) exceeds margin * phi(x) phi(y) by a factor {ratio:.6g}")
            if rng.random() >= ratio:
                continue
            z = x + y
            if system.B.is_all or bool(system.B.contains(z)):
                system.remove(j)
                system.replace(i, z)
                log.append(system.t, MERGE_IN, x, y, z)
            else:
                system.remove(i)
                system.remove(j)
                system.lam += float(phi(z))
                log.append(system.t, MERGE_LEAK, x, y, z)

        after = system.phi_total()
        if after > before * (1 + 1e-12) + 1e-300:
            raise MonotonicityViolation(f"<phi, X> + Lambda rose from {before!r} to {after!r} at t={system.t:g}")
        accepted += 1
        if accepted % refresh_every == 0:
            system.refresh(tolerance)

    logger.debug(f"Chain on {system.B.label()}: {accepted} events from {proposals} proposals, {system.count} particles left")
    return ChainRun(Trajectory(times[: len(snapshots)], snapshots, phi, {"events": accepted, "proposals": proposals, "truncation": system.B.to_json()}), log, system)


def simulate_coalescent(
    X0: ParticleSystem,
    kernel: Kernel,
    phi: SublinearFn,
    t_end: float,
    seed: Union[int, np.random.Generator],
    sample_times: Optional[Sequence[float]] = None,
) -> ChainRun:
    """The plain stochastic coalescent: every pair merges at rate K(x_i, x_j)."""
    if not X0.B.is_all or X0.lam != 0.0:
        raise ValueError("simulate_coalescent expects an untruncated system with Lambda = 0")
    return simulate_coupled(X0, kernel, phi, t_end, seed, sample_times)


def rescale_path(path: Trajectory, n: float) -> Trajectory:
    """The rescaled path n^-1 X_{t/n}: times multiplied by n, weights and Lambda divided by n."""
    if n < 1:
        raise ValueError(f"Rescaling needs n >= 1, got {n}")
    if n == 1:
        return path
    states = [TruncatedState(s.mu.scaled(1.0 / n), s.lam / n, s.B, s.t * n) for s in path.states]
    return Trajectory(path.times * n, states, path.phi, dict(path.meta, rescaled_by=n))


def _increment(f: Callable, x: np.ndarray, y: np.ndarray, phi: SublinearFn, B: Optional[Truncation], a: float) -> np.ndarray:
    z = x + y
    jump = -np.asarray(f(x), dtype=float) - np.asarray(f(y), dtype=float)
    if B is None or B.is_all:
        return jump + np.asarray(f(z), dtype=float)
    inside = B.contains(z)
    return jump + np.where(inside, np.asarray(f(z), dtype=float), a * np.asarray(phi(z), dtype=float))


def pair_generator(mu: DiscreteMeasure, kernel: Kernel, f: Callable, n: float = 1.0) -> float:
    """L^(n)(mu)(f) = 1/2 int {f(x+y) - f(x) - f(y)} K(x, y) mu^(n)(dx, dy)."""
    return 0.5 * pair_integral(mu, lambda x, y: (f(x + y) - f(x) - f(y)) * kernel(x, y), n)


def pair_quadratic(mu: DiscreteMeasure, kernel: Kernel, f: Callable, n: float = 1.0) -> float:
    """Q^(n)(mu)(f) = (2n)^-1 int {f(x+y) - f(x) - f(y)}^2 K(x, y) mu^(n)(dx, dy)."""
    return 0.5 / n * pair_integral(mu, lambda x, y: np.square(f(x + y) - f(x) - f(y)) * kernel(x, y), n)


def truncated_pair_generator(mu: DiscreteMeasure, lam: float, kernel: Kernel, phi: SublinearFn, B: Truncation, f: Callable, a: float, quadratic: bool = False) -> float:
    """
    Exact drift (or squared-jump rate) of <f, X^B> + a Lambda^B for the chain
    at integer-valued X^B = mu and Lambda^B = lam.
    """
    power = 2 if quadratic else 1
    pairs = 0.5 * pair_integral(mu, lambda x, y: np.power(_increment(f, x, y, phi, B, a), power) * kernel(x, y), 1.0)
    if len(mu) == 0 or lam == 0:
        return pairs
    masses = mu.masses
    single = np.power(a * np.asarray(phi(masses), dtype=float) - np.asarray(f(masses), dtype=float), power) * np.asarray(phi(masses), dtype=float)
    return pairs + lam * math.fsum(single * mu.weights)


def _pick(P: np.ndarray, S1: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One column per row drawn proportionally to the row of P."""
    cumulative = np.cumsum(P, axis=1)
    u = rng.random(len(P)) * S1
    slots = np.minimum((cumulative <= u[:, None]).sum(axis=1), P.shape[1] - 1)
    stuck = P[np.arange(len(P)), slots] <= 0
    while np.any(stuck):
        rows = np.nonzero(stuck)[0]
        redraw = np.minimum((cumulative[rows] <= (rng.random(len(rows)) * S1[rows])[:, None]).sum(axis=1), P.shape[1] - 1)
        slots[rows] = redraw
        stuck[rows] = P[rows, redraw] <= 0
    return slots


def batched_thinning(
    kernel: Kernel,
    phi: SublinearFn,
    masses0: Sequence[float],
    reps: int,
    dt: float,
    rng: np.random.Generator,
    B: Optional[Truncation] = None,
    lam0: float = 0.0,
):
    """
    Run reps independent copies of the chain from the same small particle
    array up to time dt, all copies advanced together. Returns the final
    (masses, alive, lam) arrays, one row per copy.
    """
    masses0 = np.asarray(masses0, dtype=float)
    m = len(masses0)
    X = np.tile(masses0, (reps, 1))
    alive = np.ones((reps, m), dtype=bool)
    lam = np.full(reps, float(lam0))
    t = np.zeros(reps)
    active = np.ones(reps, dtype=bool)
    margin = kernel.margin
    truncated = B is not None and not B.is_all

    while np.any(active):
        rows = np.nonzero(active)[0]
        P = np.where(alive[rows], np.asarray(phi(X[rows]), dtype=float), 0.0)
        S1 = P.sum(axis=1)
        S2 = np.square(P).sum(axis=1)
        count = alive[rows].sum(axis=1)
        pair_rate = np.where(count >= 2, np.maximum(margin * (S1 * S1 - S2) / 2.0, 0.0), 0.0)
        single_rate = lam[rows] * S1
        total = pair_rate + single_rate
        with np.errstate(divide="ignore"):
            wait = np.where(total > 0, rng.standard_exponential(len(rows)) / total, np.inf)
        done = t[rows] + wait > dt
        active[rows[done]] = False
        go = ~done
        if not np.any(go):
            break
        rows, P, S1 = rows[go], P[go], S1[go]
        pair_rate, single_rate, total = pair_rate[go], single_rate[go], total[go]
        t[rows] += wait[go]

        choose_single = (single_rate > 0) & (rng.random(len(rows)) * total >= pair_rate)
        if np.any(choose_single):
            r = rows[choose_single]
            k = _pick(P[choose_single], S1[choose_single], rng)
            alive[r, k] = False
            lam[r] += np.asarray(phi(X[r, k]), dtype=float)

        proposing = ~choose_single
        if not np.any(proposing):
            continue
        r = rows[proposing]
        Pp, S1p = P[proposing], S1[proposing]
        i = _pick(Pp, S1p, rng)
        j = _pick(Pp, S1p, rng)
        same = i == j
        while np.any(same):
            i[same] = _pick(Pp[same], S1p[same], rng)
            j[same] = _pick(Pp[same], S1p[same], rng)
            same = i == j
        x, y = X[r, i], X[r, j]
        ratio = np.asarray(kernel(x, y), dtype=float) / (margin * Pp[np.arange(len(r)), i] * Pp[np.arange(len(r)), j])
        if np.any(ratio > 1 + DOMINATION_SLACK):
            raise DominationError(f"K exceeds margin * phi phi by a factor {ratio.max():.6g}")
        accept = rng.random(len(r)) < ratio
        r, i, j, z = r[accept], i[accept], j[accept], (x + y)[accept]
        inside = B.contains(z) if truncated else np.ones(len(z), dtype=bool)
        X[r[inside], i[inside]] = z[inside]
        alive[r[inside], j[inside]] = False
        leak = ~inside
        alive[r[leak], i[leak]] = False
        alive[r[leak], j[leak]] = False
        lam[r[leak]] += np.asarray(phi(z[leak]), dtype=float)

    return X, alive, lam


def generator_consistency(
    kernel: Kernel,
    phi: SublinearFn,
    X0: Sequence[float],
    f: Callable,
    reps: int,
    dt: Optional[float] = None,
    seed: int = 0,
    B: Optional[Truncation] = None,
    a: float = 0.0,
    lam0: float = 0.0,
) -> Dict[str, Any]:
    """
    Monte Carlo drift of <f, X> (plus a Lambda for the truncated chain) over a
    short window dt against the exact drift from the pair-counting measure.
    Also reports the ratio of the empirical squared increment to its exact rate.
    """
    masses0 = np.asarray(X0, dtype=float)
    mu0 = measure_from_counts(masses0)
    truncated = B is not None and not B.is_all
    if truncated and not np.all(B.contains(masses0)):
        raise ValueError("generator_consistency needs X0 inside B")
    if truncated:
        drift = truncated_pair_generator(mu0, lam0, kernel, phi, B, f, a)
        quadratic = truncated_pair_generator(mu0, lam0, kernel, phi, B, f, a, quadratic=True)
    else:
        drift = pair_generator(mu0, kernel, f)
        quadratic = pair_quadratic(mu0, kernel, f)

    if dt is None:
        values = np.asarray(phi(masses0), dtype=float)
        majorant = kernel.margin * (values.sum() ** 2 - np.square(values).sum()) / 2.0 + lam0 * values.sum()
        dt = 0.01 / majorant if majorant > 0 else 1.0

    rng = np.random.default_rng(seed)
    X, alive, lam = batched_thinning(kernel, phi, masses0, reps, dt, rng, B if truncated else None, lam0)
    start = math.fsum(np.asarray(f(masses0), dtype=float)) + a * lam0
    finish = np.where(alive, np.asarray(f(X), dtype=float), 0.0).sum(axis=1) + a * lam
    D = finish - start
    mean = float(D.mean())
    sd = float(D.std(ddof=1)) if reps > 1 else 0.0
    stderr = sd / math.sqrt(reps) if reps > 0 else math.inf
    expected = drift * dt
    if stderr > 0:
        z = (mean - expected) / stderr
    else:
        z = 0.0 if math.isclose(mean, expected, abs_tol=1e-15) else math.inf
    second = float(np.mean(D * D))
    q_ratio = second / (quadratic * dt) if quadratic > 0 else None
    return {
        "drift_exact": drift,
        "drift_estimate": mean / dt,
        "stderr": stderr / dt,
        "z": z,
        "quadratic_exact": quadratic,
        "q_ratio": q_ratio,
        "reps": reps,
        "dt": dt,
    }
