"""
Closed-form reference solutions of the coagulation equation started from unit
monomers, used to check the solvers and as references in the studies.
"""

import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln


def constant_kernel_density(k, t: float, c: float = 1.0, n0: float = 1.0):
    """n_k(t) = n0 (tau/2)^(k-1) / (1 + tau/2)^(k+1), tau = c n0 t."""
    k = np.asarray(k, dtype=float)
    half = c * n0 * t / 2.0
    values = n0 * np.power(half, k - 1) / np.power(1.0 + half, k + 1)
    return float(values) if values.ndim == 0 else values


def constant_kernel_number(t: float, c: float = 1.0, n0: float = 1.0) -> float:
    return n0 / (1.0 + c * n0 * t / 2.0)


def constant_kernel_measure(t: float, k_max: int, c: float = 1.0, n0: float = 1.0):
    """(sizes, densities) for k = 1..k_max."""
    sizes = np.arange(1, k_max + 1, dtype=float)
    return sizes, constant_kernel_density(sizes, t, c, n0)


def multiplicative_kernel_density(k, t: float):
    """Pre-gelation solution for K = xy: k^(k-2) t^(k-1) e^(-kt) / k!."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"The monomer solution for K = xy is only used up to the gel time 1, got t={t}")
    k = np.asarray(k, dtype=float)
    if t == 0.0:
        values = np.where(k == 1, 1.0, 0.0)
    else:
        log_values = (k - 2) * np.log(k) + (k - 1) * math.log(t) - k * t - gammaln(k + 1)
        values = np.exp(log_values)
    return float(values) if values.ndim == 0 else values


def multiplicative_second_moment(t: float) -> float:
    return 1.0 / (1.0 - t) if t < 1.0 else math.inf


def multiplicative_tail_mass(x_max: float, t: float) -> float:
    """Mass carried by clusters larger than x_max, 1 - sum_{k <= x_max} k n_k(t)."""
    sizes = np.arange(1, int(math.floor(x_max)) + 1, dtype=float)
    return max(0.0, 1.0 - math.fsum(sizes * multiplicative_kernel_density(sizes, t)))


def multiplicative_tail_crossing(x_max: float, threshold: float) -> float:
    """First time the mass beyond x_max reaches threshold, before gelation."""
    if multiplicative_tail_mass(x_max, 1.0) < threshold:
        return math.inf
    return brentq(lambda t: multiplicative_tail_mass(x_max, t) - threshold, 1e-6, 1.0, xtol=1e-10)


def additive_kernel_number(t: float) -> float:
    return math.exp(-t)
