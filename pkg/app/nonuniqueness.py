"""
The chain system d/dt m_n = -lambda_n m_n m_{n+1}, lambda_n = base^n,
m_n(0) = 2^-n, and its truncations m_n = 0 for n > M.

The system is triangular: with m_{n+1} known, m_n(t) = m_n(0) exp(-lambda_n
int_0^t m_{n+1}). Truncations are therefore solved top-down in log space on a
graded geometric time grid, integrating exp(u_{n+1}) exactly for u piecewise
linear. That quadrature is monotone in its input, so the orderings between
truncations hold on the grid exactly, up to rounding. Even truncations
converge to m+, odd ones to m-.
"""

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_simpson, solve_ivp

from coagkit_errors import ChainOverflowError, ConfigError, DivergentMassError, NumericalFailure
from coagkit_logging import logger
from coagkit_settings import settings

MAX_CHAIN_LENGTH = 300
LOG2 = math.log(2.0)


@dataclass
class ChainTrajectory:
    M: int
    base: float
    N_max: int
    times: np.ndarray
    log_m: np.ndarray
    grid: np.ndarray
    log_m_grid: np.ndarray
    method: str = "sweep"

    @property
    def m(self) -> np.ndarray:
        return np.exp(self.log_m)

    @property
    def parity(self) -> str:
        return "even" if self.M % 2 == 0 else "odd"

    def component(self, n: int) -> np.ndarray:
        return np.exp(self.log_m[:, n - 1])

    def to_frame(self) -> pd.DataFrame:
        T, N = self.log_m.shape
        return pd.DataFrame(
            {
                "t": np.repeat(self.times, N),
                "n": np.tile(np.arange(1, N + 1), T),
                "m_n": np.exp(self.log_m).ravel(),
            }
        )


def rates(base: float, N_max: int) -> np.ndarray:
    if N_max > MAX_CHAIN_LENGTH:
        raise ChainOverflowError(f"N_max={N_max} exceeds {MAX_CHAIN_LENGTH}; base^n leaves the float range")
    n = np.arange(1, N_max + 1, dtype=float)
    with np.errstate(over="raise"):
        try:
            return np.power(float(base), n)
        except FloatingPointError:
            raise ChainOverflowError(f"base^n overflows for base={base}, N_max={N_max}")


def initial_log_m(N_max: int) -> np.ndarray:
    return -np.arange(1, N_max + 1, dtype=float) * LOG2


def _check_times(t_grid: Sequence[float]) -> np.ndarray:
    times = np.asarray(t_grid, dtype=float)
    if len(times) == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ConfigError("Chain sample times must be non-negative and strictly increasing", field="t_grid")
    return times


def chain_grid(t_grid: Sequence[float], max_rate: float, ratio: Optional[float] = None) -> np.ndarray:
    """
    Coarse grid: 0, then geometric steps from 1e-2 / max_rate with the given
    ratio, merged with the sample times. The fine grid halves every cell, so
    the coarse points sit at the even indices of the fine one.
    """
    times = _check_times(t_grid)
    ratio = settings.gridRatio if ratio is None else ratio
    t_end = float(times[-1])
    if t_end == 0:
        return np.array([0.0])
    if max_rate > 0:
        start = min(1e-2 / max_rate, t_end / 2)
        count = int(math.ceil(math.log(t_end / start) / math.log(ratio))) + 1
        geometric = start * np.power(ratio, np.arange(count))
        geometric = geometric[geometric < t_end]
    else:
        geometric = np.linspace(0.0, t_end, 11)[1:-1]
    return np.unique(np.concatenate(([0.0], geometric, times, [t_end])))


def refine(coarse: np.ndarray) -> np.ndarray:
    fine = np.empty(2 * len(coarse) - 1)
    fine[0::2] = coarse
    fine[1::2] = 0.5 * (coarse[:-1] + coarse[1:])
    return fine


def _segment_integrals(grid: np.ndarray, u: np.ndarray) -> np.ndarray:
    """int exp(u) over each cell with u linear in between: h * (e^a - e^b) / (a - b)."""
    h = np.diff(grid)
    a, b = u[:-1], u[1:]
    d = a - b
    small = np.abs(d) < 1e-10
    safe = np.where(small, 1.0, d)
    with np.errstate(over="ignore", invalid="ignore"):
        exact = h * np.exp(a) * (-np.expm1(-safe)) / safe
        series = h * np.exp(a) * (1.0 - d / 2.0)
    return np.where(small, series, exact)


def _sweep(grid: np.ndarray, M: int, lam: np.ndarray, N_max: int) -> np.ndarray:
    U = np.full((len(grid), N_max), -np.inf)
    u0 = initial_log_m(N_max)
    U[:, M - 1] = u0[M - 1]
    for n in range(M - 1, 0, -1):
        if lam[n - 1] == 0:
            U[:, n - 1] = u0[n - 1]
            continue
        integral = np.concatenate(([0.0], np.cumsum(_segment_integrals(grid, U[:, n]))))
        U[:, n - 1] = u0[n - 1] - lam[n - 1] * integral
    return U


def _max_rate(lam: np.ndarray, M: int) -> float:
    if M < 2:
        return 0.0
    n = np.arange(1, M)
    return float(np.max(lam[: M - 1] * np.power(0.5, n + 1)))


def solve_chain(
    M: int,
    N_max: int,
    t_grid: Sequence[float],
    base: Optional[float] = None,
    richardson: bool = True,
    grid: Optional[np.ndarray] = None,
) -> ChainTrajectory:
    """Truncation at M of the chain, sampled at t_grid (components above M are zero)."""
    base = settings.lambdaBase if base is None else float(base)
    lam = rates(base, N_max)
    if not 1 <= M <= N_max:
        raise ConfigError(f"Truncation index must satisfy 1 <= M <= N_max, got M={M}, N_max={N_max}", field="M")
    times = _check_times(t_grid)
    coarse = chain_grid(times, _max_rate(lam, M)) if grid is None else np.asarray(grid, dtype=float)
    index = np.searchsorted(coarse, times)
    if np.any(index >= len(coarse)) or not np.array_equal(coarse[np.minimum(index, len(coarse) - 1)], times):
        raise ConfigError("Sample times must be points of the chain grid", field="t_grid")

    fine = refine(coarse) if len(coarse) > 1 else coarse
    U_fine = _sweep(fine, M, lam, N_max)
    if richardson and len(coarse) > 1:
        U_coarse = _sweep(coarse, M, lam, N_max)
        on_coarse = U_fine[0::2]
        with np.errstate(invalid="ignore"):
            U = np.where(np.isfinite(on_coarse), on_coarse + (on_coarse - U_coarse) / 3.0, on_coarse)
        U = np.minimum.accumulate(np.minimum(U, initial_log_m(N_max)[None, :]), axis=0)
    else:
        U = U_fine[0::2] if len(coarse) > 1 else U_fine
    logger.debug(f"Chain truncation M={M}: {len(fine)} grid points, base={base:g}")
    return ChainTrajectory(M, base, N_max, times, U[index], fine, U_fine)


def solve_chain_rk(M: int, N_max: int, t_grid: Sequence[float], base: Optional[float] = None, rtol: float = 1e-10, atol: float = 1e-12) -> ChainTrajectory:
    """Independent check: du_n/dt = -lambda_n exp(u_{n+1}) with an explicit high-order Runge-Kutta pair."""
    base = settings.lambdaBase if base is None else float(base)
    lam = rates(base, N_max)
    if not 1 <= M <= N_max:
        raise ConfigError(f"Truncation index must satisfy 1 <= M <= N_max, got M={M}, N_max={N_max}", field="M")
    times = _check_times(t_grid)
    u0 = initial_log_m(N_max)

    def rhs(t, u):
        du = np.zeros(M)
        du[: M - 1] = -lam[: M - 1] * np.exp(u[1:M])
        return du

    result = solve_ivp(rhs, (0.0, float(times[-1])), u0[:M], method="DOP853", t_eval=times, rtol=rtol, atol=atol)
    if result.status < 0:
        raise NumericalFailure(f"Chain Runge-Kutta solve failed: {result.message}")
    U = np.full((len(times), N_max), -np.inf)
    U[:, :M] = result.y.T
    return ChainTrajectory(M, base, N_max, times, U, times, U, method="rk")


def fixed_point_residual(traj: ChainTrajectory) -> float:
    """
    Largest |m_n(t) - m_n(0) exp(-lambda_n int_0^t m_{n+1})| on the solver grid,
    with the integral taken by composite Simpson on the sampled m_{n+1} rather
    than by the log-linear rule the sweep itself uses.
    """
    if len(traj.grid) < 3:
        return 0.0
    lam = rates(traj.base, traj.N_max)
    U = traj.log_m_grid
    u0 = initial_log_m(traj.N_max)
    worst = 0.0
    for n in range(1, traj.M):
        integral = cumulative_simpson(np.exp(U[:, n]), x=traj.grid, initial=0.0)
        predicted = np.exp(u0[n - 1] - lam[n - 1] * integral)
        worst = max(worst, float(np.max(np.abs(np.exp(U[:, n - 1]) - predicted))))
    return worst


@dataclass
class ChainLimits:
    times: np.ndarray
    m_plus: ChainTrajectory
    m_minus: ChainTrajectory
    gap_plus: np.ndarray
    gap_minus: np.ndarray
    separation: float
    separation_time: float
    monotone: bool

    def certificate(self) -> Dict[str, Any]:
        return {
            "N_max": self.m_plus.N_max,
            "base": self.m_plus.base,
            "gap_plus": self.gap_plus.tolist(),
            "gap_minus": self.gap_minus.tolist(),
            "separation": self.separation,
            "separation_time": self.separation_time,
            "monotone_in_N": self.monotone,
        }


def _monotone_in_truncation(sweeps: Dict[int, np.ndarray], parity: int, tolerance: float) -> None:
    """Along M = parity, parity + 2, ...: same-parity components fall, the others rise."""
    levels = sorted(M for M in sweeps if M % 2 == parity)
    for M, M_next in zip(levels[:-1], levels[1:]):
        low, high = np.exp(sweeps[M][:, :M]), np.exp(sweeps[M_next][:, :M])
        slack = 1e-14 + tolerance * np.maximum(low, high)
        for n in range(1, M + 1):
            if n % 2 == parity:
                bad = high[:, n - 1] > low[:, n - 1] + slack[:, n - 1]
            else:
                bad = high[:, n - 1] < low[:, n - 1] - slack[:, n - 1]
            if np.any(bad):
                raise NumericalFailure(f"Component {n} is not monotone between truncations M={M} and M={M_next}")


def extract_limits(N_max: int, t_grid: Sequence[float], base: Optional[float] = None) -> ChainLimits:
    if N_max % 2 or N_max < 6:
        raise ConfigError(f"extract_limits needs an even N_max >= 6, got {N_max}", field="N_max")
    base = settings.lambdaBase if base is None else float(base)
    lam = rates(base, N_max)
    times = _check_times(t_grid)
    coarse = chain_grid(times, _max_rate(lam, N_max))
    index = np.searchsorted(coarse, times)

    sweeps = {M: _sweep(coarse, M, lam, N_max)[index] for M in range(1, N_max + 1)}
    tolerance = settings.monotoneTolerance
    _monotone_in_truncation(sweeps, 0, tolerance)
    _monotone_in_truncation(sweeps, 1, tolerance)

    plus = solve_chain(N_max, N_max, times, base, grid=coarse)
    minus = solve_chain(N_max - 1, N_max, times, base, grid=coarse)
    with np.errstate(invalid="ignore"):
        gap_plus = np.nan_to_num(np.max(np.abs(np.exp(sweeps[N_max]) - np.exp(sweeps[N_max - 2])), axis=0))
        gap_minus = np.nan_to_num(np.max(np.abs(np.exp(sweeps[N_max - 1]) - np.exp(sweeps[N_max - 3])), axis=0))

    k = int(np.argmin(np.abs(times - 1.0)))
    separation = float(plus.component(2)[k] - minus.component(2)[k])
    if times[k] > 0 and separation <= 0:
        raise NumericalFailure(f"m+ and m- do not separate in component 2 at t={times[k]:g}")
    logger.info(f"Chain limits with N_max={N_max}: m+_2 - m-_2 = {separation:.6g} at t={times[k]:g}")
    return ChainLimits(times, plus, minus, gap_plus, gap_minus, separation, float(times[k]), True)


def envelope_rate(base: float, k: int) -> float:
    """Decay rate lambda_k * m_{k+1}(0) / 2 of component k while its neighbour stays above half."""
    return base**k / 2.0 ** (k + 2)


def verify_chain_bounds(traj: ChainTrajectory) -> Dict[str, Any]:
    """
    Components with the parity of M stay above half their initial value; the
    others decay at least like exp(-lambda_k m_{k+1}(0) t / 2). Margins are in
    log space: log(m / (m(0)/2)) and log(envelope / m).
    """
    if traj.base < 4.0 / LOG2:
        raise ConfigError(f"The half-value bound needs base >= 4/log 2, got {traj.base:g}", field="base")
    parity = traj.M % 2
    u0 = initial_log_m(traj.N_max)
    components = []
    worst_half = math.inf
    worst_envelope = math.inf
    for n in range(1, traj.M + 1):
        u = traj.log_m[:, n - 1]
        if n % 2 == parity:
            margins = u - (u0[n - 1] - LOG2)
            passed = bool(np.all(margins >= -1e-12))
            worst = float(margins.min())
            worst_half = min(worst_half, worst)
            kind = "half"
        else:
            envelope = u0[n - 1] - envelope_rate(traj.base, n) * traj.times
            margins = envelope - u
            passed = bool(np.all(margins >= -math.log1p(1e-6)))
            worst = float(margins.min())
            worst_envelope = min(worst_envelope, worst)
            kind = "envelope"
        components.append({"n": n, "kind": kind, "passed": passed, "worst_margin": worst})
    return {
        "parity": traj.parity,
        "components": components,
        "worst_half_margin": worst_half,
        "worst_envelope_margin": worst_envelope,
        "passed": all(c["passed"] for c in components),
    }


def _mass_weights(x_weights: Union[Callable, Sequence[float]], count: int) -> np.ndarray:
    if callable(x_weights):
        x = np.asarray(x_weights(np.arange(1, count + 1)), dtype=float)
    else:
        x = np.asarray(x_weights, dtype=float)[:count]
    if len(x) < count or np.any(x <= 0):
        raise ConfigError(f"Need {count} positive masses x_n", field="x_weights")
    return x


def _initial_mass(x_weights: Union[Callable, Sequence[float]], n_cut: int) -> Dict[str, float]:
    """Sum of x_n 2^-n split at n_cut, with a ratio test on the tail."""
    if callable(x_weights):
        horizon = n_cut + 400
        x = _mass_weights(x_weights, horizon)
    else:
        x = _mass_weights(x_weights, len(x_weights))
        horizon = len(x)
    n = np.arange(1, horizon + 1)
    with np.errstate(over="ignore", under="ignore"):
        terms = x * np.power(0.5, n)
    if not np.all(np.isfinite(terms)):
        raise DivergentMassError("Initial mass sum x_n 2^-n overflows")
    ratio = float(terms[-1] / terms[-2]) if len(terms) >= 2 and terms[-2] > 0 else 0.0
    if ratio >= 1:
        raise DivergentMassError(f"Initial mass sum x_n 2^-n diverges (term ratio {ratio:.3g})")
    remainder = float(terms[-1] * ratio / (1 - ratio)) if callable(x_weights) else 0.0
    head = math.fsum(terms[:n_cut])
    tail = math.fsum(terms[n_cut:]) + remainder
    return {"head": head, "tail": tail, "total": head + tail, "ratio": ratio}


def chain_mass(traj: ChainTrajectory, x_weights: Union[Callable, Sequence[float]], n_cut: Optional[int] = None) -> Dict[str, Any]:
    """
    Mass int x mu_t through the class bookkeeping: p_{m,n} is the share of the
    original class-m mass carried by class-n clusters, p_{m,n} = m_n q_{m,n},
    q_{m,m} = 1 and dq_{m,n} = lambda_{n-1} p_{m,n-1} dt. Up to n_cut the mass
    is summed directly; r_{m,n} = 2^-m - sum_{k<=n} p_{m,k} is bounded by
    2^-m halved once per even class above m, which with the initial tail gives
    the certificate.
    """
    M = traj.M
    n_cut = M - 1 if n_cut is None else n_cut
    if not 1 <= n_cut <= M:
        raise ConfigError(f"n_cut must lie in 1..{M}", field="n_cut")
    x = _mass_weights(x_weights, M)
    initial = _initial_mass(x_weights, n_cut)
    lam = rates(traj.base, traj.N_max)
    grid = traj.grid
    m_grid = np.exp(traj.log_m_grid[:, :M])
    index = np.searchsorted(grid, traj.times)

    # P[m][n]: share of class-m units in class-n clusters, on the grid
    held = np.zeros((len(grid), M))
    top_direct = np.zeros((len(grid), M))
    for m in range(1, M + 1):
        q = np.ones(len(grid))
        p = m_grid[:, m - 1] * q
        total = p.copy()
        for n in range(m + 1, M + 1):
            if n == M:
                top_direct[:, m - 1] = m_grid[:, n - 1] * _step_q(grid, p, lam[n - 2])
                break
            q = _step_q(grid, p, lam[n - 2])
            p = m_grid[:, n - 1] * q
            if n <= n_cut:
                total += p
        if m == M:
            top_direct[:, m - 1] = p
        elif n_cut == M:
            total += top_direct[:, m - 1]
        held[:, m - 1] = total if m <= n_cut else 0.0

    units = np.power(0.5, np.arange(1, M + 1))
    remainder_top = units[None, :] - _below_top(m_grid, grid, lam, M)
    scale = np.maximum(units[None, :], 1e-300)
    bookkeeping = float(np.max(np.abs(top_direct - remainder_top) / scale))

    mass = held[:, :n_cut] @ x[:n_cut]
    # classes with the parity of M stay above half full and each halves the remainder
    halvings = np.array([sum(1 for k in range(m + 1, n_cut + 1) if k % 2 == M % 2) for m in range(1, n_cut + 1)])
    certificate = math.fsum(x[:n_cut] * units[:n_cut] * np.power(0.5, halvings)) + initial["tail"]
    closed = (units[None, :] * x[None, :]).sum(axis=1) * np.ones(len(grid))
    deficit = initial["total"] - mass
    return {
        "times": traj.times.tolist(),
        "mass": mass[index].tolist(),
        "initial_mass": initial["total"],
        "deficit": deficit[index].tolist(),
        "certificate": certificate,
        "within_certificate": bool(np.all(deficit[index] <= certificate * (1 + 1e-9) + 1e-12)),
        "closed_mass": closed[index].tolist(),
        "bookkeeping_residual": bookkeeping,
        "n_cut": n_cut,
    }


def _step_q(grid: np.ndarray, p_prev: np.ndarray, lam_prev: float) -> np.ndarray:
    """q_{m,n}(t) = lambda_{n-1} int_0^t p_{m,n-1} by the trapezoid rule."""
    cells = 0.5 * (p_prev[:-1] + p_prev[1:]) * np.diff(grid)
    return lam_prev * np.concatenate(([0.0], np.cumsum(cells)))


def _below_top(m_grid: np.ndarray, grid: np.ndarray, lam: np.ndarray, M: int) -> np.ndarray:
    """sum_{n<M} p_{m,n} per class m (zero for m = M)."""
    below = np.zeros((len(grid), M))
    for m in range(1, M):
        p = m_grid[:, m - 1].copy()
        total = p.copy()
        for n in range(m + 1, M):
            p = m_grid[:, n - 1] * _step_q(grid, p, lam[n - 2])
            total += p
        below[:, m - 1] = total
    return below
