"""
One realization of the coupled truncated chains (X^B, Lambda^B) for a nested
list of truncations, all driven by the same exponential clocks.

Every round labels the particles of the untruncated chain X^E as 1..m; each
X^B is the sub-multiset I(B), chosen increasing in B. Clocks per round:

    T_ij  Exp(K(x_i, x_j)), shared by i < j and j < i
    S_ij  Exp(phi(x_i) phi(x_j) - K(x_i, x_j)), ordered pairs
    S^B_i = E_i / (phi(x_i) nu^B), nu^B = Lambda^B - sum_{j not in I(B)} phi(x_j)

with T^B_i = min_{j not in I(B)} (T_ij ^ S_ij) ^ S^B_i. The first clock to
ring moves every chain at once and the construction restarts from there.
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from coagkit_errors import ConfigError, MonotonicityViolation
from coagkit_logging import logger
from coagkit_settings import settings
from coalescent import MERGE_IN, MERGE_LEAK, SINGLE_LEAK, EventLog
from kernels import Kernel
from measures import DiscreteMeasure, empty_measure
from random_streams import round_generator
from sublinear import SublinearFn
from truncated_system import Trajectory, TruncatedState
from truncation import Truncation, ensure_nested


class _Chain:
    def __init__(self, B: Truncation, particles: Counter, lam: float):
        self.B = B
        self.particles = particles
        self.lam = lam

    def phi_total(self, phi: SublinearFn) -> float:
        if not self.particles:
            return self.lam
        masses = np.array(list(self.particles.keys()))
        counts = np.array(list(self.particles.values()), dtype=float)
        return math.fsum(np.asarray(phi(masses), dtype=float) * counts) + self.lam

    def measure(self, epsilon_mass: float) -> DiscreteMeasure:
        if not self.particles:
            return empty_measure(epsilon_mass)
        masses = np.array(sorted(self.particles))
        return DiscreteMeasure(masses, np.array([self.particles[m] for m in masses], dtype=float), epsilon_mass)

    def take(self, mass: float) -> None:
        self.particles[mass] -= 1
        if self.particles[mass] == 0:
            del self.particles[mass]


@dataclass
class FamilyRun:
    truncations: List[Truncation]
    trajectories: List[Trajectory]
    events: List[EventLog]
    rounds: int


def _membership(master: np.ndarray, particles: Counter) -> np.ndarray:
    """The first count_B(x) master particles of each mass x belong to I(B)."""
    in_B = np.zeros(len(master), dtype=bool)
    if len(master) == 0:
        return in_B
    starts = np.concatenate(([0], np.nonzero(np.diff(master))[0] + 1))
    ends = np.append(starts[1:], len(master))
    used = 0
    for lo, hi in zip(starts, ends):
        c = particles.get(master[lo], 0)
        if c > hi - lo:
            raise MonotonicityViolation(f"Truncated chain holds {c} particles of mass {master[lo]:g}, the untruncated chain only {hi - lo}")
        in_B[lo : lo + c] = True
        used += c
    if used != sum(particles.values()):
        raise MonotonicityViolation("Truncated chain holds a particle the untruncated chain does not")
    return in_B


def _check_ordering(chains: List[_Chain], phi: SublinearFn, t: float, tolerance: float) -> None:
    for small, large in zip(chains[:-1], chains[1:]):
        for mass, count in small.particles.items():
            if count > large.particles.get(mass, 0):
                raise MonotonicityViolation(f"X^B exceeds X^B' at mass {mass:g} at t={t:g} ({small.B.label()} inside {large.B.label()})")
        small_total, large_total = small.phi_total(phi), large.phi_total(phi)
        if large_total > small_total + tolerance * max(1.0, small_total):
            raise MonotonicityViolation(
                f"<phi, X^B'> + Lambda^B' = {large_total!r} exceeds the B value {small_total!r} at t={t:g} ({small.B.label()} inside {large.B.label()})"
            )


def simulate_coupled_family(
    X0: Sequence[float],
    kernel: Kernel,
    phi: SublinearFn,
    B_list: List[Truncation],
    t_end: float,
    seed: int,
    sample_times: Optional[Sequence[float]] = None,
    epsilon_mass: float = 0.0,
) -> FamilyRun:
    if kernel.margin > 1:
        logger.warning(f"Coupled family disabled for kernel {kernel.name}: margin {kernel.margin:g} > 1")
        raise ConfigError("The coupled family needs a kernel with margin 1", field="kernel.margin")
    if not B_list:
        raise ConfigError("simulate_coupled_family needs at least one truncation", field="truncations")
    ensure_nested(B_list)
    X0 = np.asarray(X0, dtype=float)
    if len(X0) > settings.maxFamilyParticles:
        raise ConfigError(f"{len(X0)} particles exceed maxFamilyParticles={settings.maxFamilyParticles}", field="initial")

    truncations = list(B_list)
    if not truncations[-1].is_all:
        truncations.append(Truncation.everything())
    chains = []
    for B in truncations:
        inside = B.contains(X0)
        lam0 = math.fsum(np.asarray(phi(X0[~inside]), dtype=float)) if np.any(~inside) else 0.0
        chains.append(_Chain(B, Counter(X0[inside].tolist()), lam0))
    master = chains[-1]

    times = np.linspace(0.0, t_end, settings.sampleGridPoints) if sample_times is None else np.asarray(sample_times, dtype=float)
    snapshots: List[List[TruncatedState]] = [[] for _ in chains]
    logs = [EventLog() for _ in chains]
    tolerance = settings.monotonicityTolerance
    t = 0.0
    k = 0
    rounds = 0
    _check_ordering(chains, phi, t, tolerance)

    while True:
        xm = np.array(sorted(master.particles.elements()), dtype=float)
        m = len(xm)
        p = np.asarray(phi(xm), dtype=float) if m else np.zeros(0)
        members = [_membership(xm, chain.particles) for chain in chains]
        nus = np.array([chain.lam - math.fsum(p[~in_B]) for chain, in_B in zip(chains, members)])
        if np.any(nus < -tolerance * max(1.0, float(np.abs(nus).max()))):
            raise MonotonicityViolation(f"nu^B = {nus.min():.3e} < 0 at t={t:g}")
        nus = np.maximum(nus, 0.0)

        rng = round_generator(seed, rounds)
        rounds += 1
        K = kernel.matrix(xm) if m else np.zeros((0, 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            T = np.triu(rng.standard_exponential((m, m)), 1) / K
            T = np.where(np.triu(np.ones((m, m), dtype=bool), 1) & (K > 0), T, np.inf)
            T = np.minimum(T, T.T)
            spare = np.maximum(np.outer(p, p) - K, 0.0)
            S = np.where(spare > 0, rng.standard_exponential((m, m)) / spare, np.inf)
            E = rng.standard_exponential(m)
        np.fill_diagonal(S, np.inf)
        U = np.minimum(T, S)

        T_pair = float(T.min()) if m > 1 else math.inf
        singles = []
        for in_B, nu in zip(members, nus):
            with np.errstate(divide="ignore"):
                own = np.where(p * nu > 0, E / (p * nu), np.inf)
            outside = np.where(in_B[None, :], np.inf, U)
            clock = np.minimum(outside.min(axis=1) if m else np.zeros(0), own)
            singles.append(np.where(in_B, clock, np.inf))
        T_single = min((float(s.min()) for s in singles if len(s)), default=math.inf)
        T_next = min(T_pair, T_single)

        t_next = t + T_next
        while k < len(times) and times[k] < t_next and times[k] <= t_end:
            for c, chain in enumerate(chains):
                snapshots[c].append(TruncatedState(chain.measure(epsilon_mass), chain.lam, chain.B, float(times[k])))
            k += 1
        if t_next > t_end:
            break
        t = t_next

        pair = None
        if T_pair == T_next:
            i, j = np.unravel_index(int(np.argmin(T)), T.shape)
            pair = (int(min(i, j)), int(max(i, j)))
        for c, chain in enumerate(chains):
            in_B = members[c]
            if pair is not None and in_B[pair[0]] and in_B[pair[1]]:
                x, y = float(xm[pair[0]]), float(xm[pair[1]])
                z = x + y
                chain.take(x)
                chain.take(y)
                if chain.B.is_all or bool(chain.B.contains(z)):
                    chain.particles[z] += 1
                    logs[c].append(t, MERGE_IN, x, y, z)
                else:
                    chain.lam += float(phi(z))
                    logs[c].append(t, MERGE_LEAK, x, y, z)
                continue
            hit = np.nonzero(singles[c] == T_next)[0]
            if len(hit):
                i = int(hit[0])
                x = float(xm[i])
                chain.take(x)
                chain.lam += float(p[i])
                logs[c].append(t, SINGLE_LEAK, x)
        _check_ordering(chains, phi, t, tolerance)

    logger.debug(f"Coupled family over {len(chains)} truncations: {rounds} rounds, final t={t:g}")
    trajectories = [
        Trajectory(times[: len(s)], s, phi, {"truncation": chain.B.to_json(), "events": len(log)})
        for s, chain, log in zip(snapshots, chains, logs)
    ]
    return FamilyRun(truncations, trajectories, logs, rounds)
