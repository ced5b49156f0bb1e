"""
Picard iteration for the truncated system.

The horizon [0, t_end] is cut into sub-intervals of length at most (2C)^-1,
C being the local Lipschitz constant of L^B at the left end. On each piece the
fixed-point map u -> u(a) + int_a^t L^B(u) is iterated on Chebyshev-Lobatto
nodes with a spectral integration matrix until successive iterates agree.
"""

import math
from typing import Dict, Tuple

import numpy as np
from numpy.polynomial import chebyshev

from coagkit_errors import PicardDivergenceError
from coagkit_logging import logger
from truncated_system import LatticeSystem


def lobatto_nodes(count: int) -> np.ndarray:
    """Chebyshev-Lobatto nodes on [-1, 1], ascending."""
    if count < 2:
        raise ValueError(f"Picard needs at least 2 nodes, got {count}")
    return -np.cos(np.pi * np.arange(count) / (count - 1))


def integration_matrix(nodes: np.ndarray) -> np.ndarray:
    """S with (S f)_j = int_{-1}^{x_j} p(s) ds, p the interpolant of f on the nodes."""
    degree = len(nodes) - 1
    vander = chebyshev.chebvander(nodes, degree)
    integrals = np.empty((len(nodes), degree + 1))
    for k in range(degree + 1):
        basis = np.zeros(degree + 1)
        basis[k] = 1.0
        integrals[:, k] = chebyshev.chebval(nodes, chebyshev.chebint(basis, lbnd=-1))
    return integrals @ np.linalg.inv(vander)


class PicardIntegrator:
    def __init__(self, system: LatticeSystem, nodes: int = 16, tolerance: float = 1e-12, max_iterations: int = 50):
        self.system = system
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.nodes = lobatto_nodes(nodes)
        self.S = integration_matrix(self.nodes)
        self.stats: Dict[str, float] = {"subintervals": 0, "iterations": 0, "max_iterations_used": 0, "integrating_factor_gap": 0.0}

    def _field(self, U: np.ndarray) -> np.ndarray:
        F = np.empty_like(U)
        for j in range(U.shape[0]):
            F[j] = self.system.packed_rhs(0.0, U[j])
        return F

    def step(self, u0: np.ndarray, h: float, check_integrating_factor: bool = False) -> np.ndarray:
        """Converged node values on [a, a + h]; row j is the state at node j."""
        S = self.S * (h / 2.0)
        U = np.tile(u0, (len(self.nodes), 1))
        scale = max(1.0, float(np.sum(np.abs(u0))))
        for iteration in range(1, self.max_iterations + 1):
            U_next = u0 + S @ self._field(U)
            change = float(np.max(np.sum(np.abs(U_next - U), axis=1)))
            U = U_next
            if change < self.tolerance * scale:
                break
        else:
            raise PicardDivergenceError(
                f"Picard iteration did not settle below {self.tolerance:g} in {self.max_iterations} iterations (last change {change:.3e}, h={h:.3e})"
            )
        self.stats["subintervals"] += 1
        self.stats["iterations"] += iteration
        self.stats["max_iterations_used"] = max(self.stats["max_iterations_used"], iteration)
        if check_integrating_factor:
            gap = _integrating_factor_gap(self.system, U, S)
            self.stats["integrating_factor_gap"] = max(self.stats["integrating_factor_gap"], gap)
        return U

    def integrate(self, u0: np.ndarray, sample_times: np.ndarray, check_integrating_factor: bool = False) -> np.ndarray:
        """States at every sample time (the first sample must be 0)."""
        samples = np.empty((len(sample_times), len(u0)))
        u = np.array(u0, dtype=float)
        t = 0.0
        k = 0
        while k < len(sample_times) and sample_times[k] <= 0.0:
            samples[k] = u
            k += 1
        while k < len(sample_times):
            size = self.system.size
            C = self.system.lipschitz_constant(np.maximum(u[:size], 0.0), max(u[size], 0.0))
            h = 1.0 / (2.0 * C) if C > 0 else math.inf
            target = sample_times[k]
            h = min(h, target - t)
            U = self.step(u, h, check_integrating_factor)
            u = U[-1]
            t = target if math.isclose(t + h, target, rel_tol=1e-14, abs_tol=1e-15) else t + h
            if t >= target:
                samples[k] = u
                k += 1
        logger.debug(f"Picard: {self.stats}")
        return samples


def _integrating_factor_gap(system: LatticeSystem, U: np.ndarray, S: np.ndarray) -> float:
    """
    Rebuild the weights on one sub-interval through the integrating factor
    theta_t(x) = exp int (sum_y K(x, y) mu_s(y) + lambda_s phi(x)) ds.
    The transformed weights theta mu solve an equation with a non-negative
    right-hand side, so the rebuilt weights are non-negative by construction;
    the return value is their largest TV distance from the Picard iterate.
    """
    size = system.size
    W = np.maximum(U[:, :size], 0.0)
    lam = np.maximum(U[:, size], 0.0)
    rates = W @ system.K.T + lam[:, None] * system.phi_sites[None, :]
    log_theta = S @ rates
    theta = np.exp(log_theta)
    gains = np.array([system.pair_terms(w)[0] for w in W])
    transformed = W[0] + S @ (theta * gains)
    rebuilt = transformed / theta
    return float(np.max(np.sum(np.abs(rebuilt - U[:, :size]), axis=1)))


def solve_picard(system: LatticeSystem, w0: np.ndarray, lam0: float, sample_times: np.ndarray, nodes: int, tolerance: float, max_iterations: int, check_integrating_factor: bool = False) -> Tuple[np.ndarray, Dict[str, float]]:
    integrator = PicardIntegrator(system, nodes, tolerance, max_iterations)
    samples = integrator.integrate(np.append(w0, lam0), np.asarray(sample_times, dtype=float), check_integrating_factor)
    return samples, integrator.stats
