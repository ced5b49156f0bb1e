"""
The truncated coagulation system on M_B x R.

Atoms live on a finite lattice of sites inside B that is closed under pair
sums landing in B. Pair merges leaving B feed the scalar tracker lambda with
phi(x + y); every atom additionally decays at rate lambda * phi(x).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from coagkit_errors import ConfigError, InvariantViolation, NumericalFailure
from coagkit_logging import logger
from kernels import Kernel
from measures import DiscreteMeasure, moment
from sublinear import SublinearFn
from truncation import Truncation


@dataclass(frozen=True)
class TruncatedState:
    mu: DiscreteMeasure
    lam: float
    B: Truncation
    t: float = 0.0

    def phi_mass(self, phi: SublinearFn) -> float:
        """<phi, mu> + lambda, the quantity that never increases."""
        return moment(self.mu, phi) + self.lam


class SignedAtoms:
    """A finite signed measure given as (mass, rate) pairs, the output of a generator."""

    def __init__(self, masses: np.ndarray, rates: np.ndarray):
        order = np.argsort(masses, kind="stable")
        self.masses = np.asarray(masses, dtype=float)[order]
        self.rates = np.asarray(rates, dtype=float)[order]

    def as_dict(self) -> Dict[float, float]:
        return {float(m): float(r) for m, r in zip(self.masses, self.rates)}

    def integrate(self, f: Callable) -> float:
        if len(self.masses) == 0:
            return 0.0
        values = np.asarray(f(self.masses), dtype=float)
        values = np.broadcast_to(values, self.masses.shape)
        return math.fsum(values * self.rates)

    def __len__(self):
        return len(self.masses)


@dataclass
class Trajectory:
    times: np.ndarray
    states: List[TruncatedState]
    phi: SublinearFn
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("Trajectory needs one state per timestamp")
        if np.any(np.diff(self.times) <= 0):
            raise InvariantViolation("Trajectory timestamps must be strictly increasing", invariant="time-order")

    def __len__(self):
        return len(self.states)

    def state_at(self, t: float) -> TruncatedState:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-12, abs_tol=1e-14):
            raise KeyError(f"No sample at t={t}")
        return self.states[k]

    def diagnostics(self) -> pd.DataFrame:
        phi = self.phi
        rows = []
        for t, state in zip(self.times, self.states):
            rows.append(
                {
                    "t": t,
                    "mass": moment(state.mu, lambda x: x),
                    "phi_moment": moment(state.mu, phi),
                    "phi2_moment": moment(state.mu, lambda x: np.square(phi(x))),
                    "lam": state.lam,
                }
            )
        return pd.DataFrame(rows, columns=["t", "mass", "phi_moment", "phi2_moment", "lam"])

    def long_frame(self) -> pd.DataFrame:
        """Tidy (t, mass, weight) table with one row per atom per sample."""
        frames = []
        for t, state in zip(self.times, self.states):
            frames.append(pd.DataFrame({"t": t, "mass": state.mu.masses, "weight": state.mu.weights}))
        if not frames:
            return pd.DataFrame(columns=["t", "mass", "weight"])
        return pd.concat(frames, ignore_index=True)


def _fresh_sites(candidates: np.ndarray, sites: np.ndarray, epsilon_mass: float) -> np.ndarray:
    """Candidates further than epsilon from every existing site, de-duplicated."""
    candidates = np.unique(candidates)
    if len(candidates) == 0:
        return candidates
    if len(sites):
        idx = np.clip(np.searchsorted(sites, candidates), 0, len(sites) - 1)
        left = np.clip(idx - 1, 0, len(sites) - 1)
        near = np.minimum(np.abs(sites[idx] - candidates), np.abs(sites[left] - candidates))
        candidates = candidates[near > epsilon_mass] if epsilon_mass > 0 else candidates[near > 0]
    if epsilon_mass > 0 and len(candidates) > 1:
        keep = np.concatenate(([True], np.diff(candidates) > epsilon_mass))
        candidates = candidates[keep]
    return candidates


def _nearest_index(sites: np.ndarray, values: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(sites, values), 0, len(sites) - 1)
    left = np.clip(idx - 1, 0, len(sites) - 1)
    return np.where(np.abs(sites[left] - values) < np.abs(sites[idx] - values), left, idx)


def support_closure(initial_sites: np.ndarray, B: Truncation, epsilon_mass: float, max_atoms: int) -> np.ndarray:
    """Smallest site set containing the initial sites and every pair sum that lands in B."""
    if B.is_all:
        raise ConfigError("The deterministic solver needs a bounded truncation set B", field="truncation")
    sites = np.unique(np.asarray(initial_sites, dtype=float))
    frontier = sites
    while len(frontier):
        sums = (frontier[:, None] + sites[None, :]).ravel()
        sums = sums[B.contains(sums)]
        fresh = _fresh_sites(sums, sites, epsilon_mass)
        if len(fresh) == 0:
            break
        sites = np.union1d(sites, fresh)
        frontier = fresh
        if len(sites) > max_atoms:
            raise NumericalFailure(
                f"Support closure inside {B.label()} exceeds maxAtoms={max_atoms}; use a coarser epsilon_mass or a smaller B"
            )
    return sites


class LatticeSystem:
    """Dense vector form of L^B on a closed site lattice."""

    def __init__(self, sites: np.ndarray, kernel: Kernel, phi: SublinearFn, B: Optional[Truncation], epsilon_mass: float = 0.0):
        self.sites = np.asarray(sites, dtype=float)
        self.kernel = kernel
        self.phi = phi
        self.B = B
        self.epsilon_mass = epsilon_mass
        n = len(self.sites)
        self.K = kernel.matrix(self.sites) if n else np.zeros((0, 0))
        self.phi_sites = np.asarray(phi(self.sites), dtype=float) if n else np.zeros(0)
        self.phi2_sites = np.square(self.phi_sites)

        sums = self.sites[:, None] + self.sites[None, :]
        inside = B.contains(sums) if B is not None else np.ones(sums.shape, dtype=bool)
        target = np.full(sums.shape, -1, dtype=int)
        if n and np.any(inside):
            nearest = _nearest_index(self.sites, sums[inside])
            tol = epsilon_mass if epsilon_mass > 0 else 1e-12 * sums[inside]
            if np.any(np.abs(self.sites[nearest] - sums[inside]) > tol):
                raise NumericalFailure("Site lattice is not closed under pair sums inside B")
            target[inside] = nearest
        self.inside = inside
        self.target_flat = target[inside]
        self.leak_phi = np.where(inside, 0.0, np.asarray(phi(sums), dtype=float))

    @property
    def size(self) -> int:
        return len(self.sites)

    def weights_of(self, mu: DiscreteMeasure) -> np.ndarray:
        w = np.zeros(self.size)
        if len(mu) == 0:
            return w
        idx = _nearest_index(self.sites, mu.masses)
        tol = max(self.epsilon_mass, 0.0)
        if np.any(np.abs(self.sites[idx] - mu.masses) > tol + 1e-12 * mu.masses):
            raise InvariantViolation("Measure has atoms off the solver lattice", invariant="support")
        np.add.at(w, idx, mu.weights)
        return w

    def measure_of(self, w: np.ndarray) -> DiscreteMeasure:
        return DiscreteMeasure(self.sites, np.maximum(w, 0.0), self.epsilon_mass)

    def pair_terms(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        """Gain, loss and leak flux of the pair part of the generator."""
        KW = self.K * np.outer(w, w)
        gain = 0.5 * np.bincount(self.target_flat, weights=KW[self.inside], minlength=self.size)
        loss = w * (self.K @ w)
        leak = 0.5 * float(np.sum(self.leak_phi * KW))
        return gain, loss, leak

    def rhs(self, w: np.ndarray, lam: float) -> Tuple[np.ndarray, float]:
        gain, loss, leak = self.pair_terms(w)
        dw = gain - loss - lam * self.phi_sites * w
        dlam = leak + lam * float(np.dot(self.phi2_sites, w))
        return dw, dlam

    def packed_rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        # Evaluated on clamped weights so tiny negative excursions cannot feed back
        w = np.maximum(y[:-1], 0.0)
        lam = max(y[-1], 0.0)
        dw, dlam = self.rhs(w, lam)
        return np.append(dw, dlam)

    def lipschitz_constant(self, w: np.ndarray, lam: float) -> float:
        """
        Local Lipschitz constant of L^B on the ball of radius 2 ||(w, lam)||.
        L^B is quadratic, so ||L^B(u) - L^B(v)|| <= c ||u - v|| (||u|| + ||v||) with c
        collecting the pair, leak and lambda-decay terms.
        """
        if self.size == 0:
            return 0.0
        k_sup = float(np.max(self.K))
        phi_sup = float(np.max(self.phi_sites))
        leak_sup = float(np.max(self.leak_phi))
        c = k_sup * (1.5 + 0.5 * leak_sup) + phi_sup + phi_sup**2
        radius = 2.0 * (float(np.sum(np.abs(w))) + abs(lam))
        return 2.0 * c * radius


def lattice_for(mu0: DiscreteMeasure, kernel: Kernel, phi: SublinearFn, B: Truncation, max_atoms: int) -> LatticeSystem:
    inside = B.contains(mu0.masses)
    sites = support_closure(mu0.masses[inside], B, mu0.epsilon_mass, max_atoms)
    logger.debug(f"Lattice for {B.label()}: {len(sites)} sites")
    return LatticeSystem(sites, kernel, phi, B, mu0.epsilon_mass)


def initial_state(mu0: DiscreteMeasure, phi: SublinearFn, B: Truncation) -> TruncatedState:
    """mu^B_0 = 1_B mu0 and lambda^B_0 = <phi 1_{B^c}, mu0>."""
    inside = B.contains(mu0.masses)
    lam0 = math.fsum(np.asarray(phi(mu0.masses[~inside]), dtype=float) * mu0.weights[~inside]) if np.any(~inside) else 0.0
    return TruncatedState(mu0.restrict(inside), lam0, B, 0.0)


def apply_L(mu: DiscreteMeasure, kernel: Kernel) -> SignedAtoms:
    """L(mu) as a signed atom list on supp(mu) together with all pair sums."""
    if len(mu) == 0:
        return SignedAtoms(np.zeros(0), np.zeros(0))
    sums = (mu.masses[:, None] + mu.masses[None, :]).ravel()
    sites = np.union1d(mu.masses, _fresh_sites(sums, mu.masses, mu.epsilon_mass))
    system = LatticeSystem(sites, kernel, _unit_phi, None, mu.epsilon_mass)
    w = system.weights_of(mu)
    gain, loss, _ = system.pair_terms(w)
    return SignedAtoms(sites, gain - loss)


def apply_LB(state: TruncatedState, kernel: Kernel, phi: SublinearFn) -> Tuple[SignedAtoms, float]:
    mu = state.mu
    if len(mu) and not np.all(state.B.contains(mu.masses[mu.weights > 0])):
        raise InvariantViolation(f"State has mass outside {state.B.label()}", invariant="support")
    if len(mu) == 0:
        return SignedAtoms(np.zeros(0), np.zeros(0)), 0.0
    sums = (mu.masses[:, None] + mu.masses[None, :]).ravel()
    sums = sums[state.B.contains(sums)]
    sites = np.union1d(mu.masses, _fresh_sites(sums, mu.masses, mu.epsilon_mass))
    system = LatticeSystem(sites, kernel, phi, state.B, mu.epsilon_mass)
    dw, dlam = system.rhs(system.weights_of(mu), state.lam)
    return SignedAtoms(sites, dw), dlam


def _unit_phi(x):
    return np.ones(np.shape(x))
