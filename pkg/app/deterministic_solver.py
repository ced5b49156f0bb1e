"""
Time integration of the truncated system and the diagnostics built on it:
exhaustion over nested truncations, the strong-solution horizon, conservation
and domination reports, and the lambda ODE check.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp

from coagkit_errors import ConfigError, MonotonicityViolation, SolverInstabilityError
from coagkit_logging import logger
from coagkit_settings import settings
from kernels import Kernel
from measures import DiscreteMeasure, moment, signed_difference, total_variation
from picard import solve_picard
from replica_pool import ReplicaPool
from sublinear import SublinearFn, sq
from truncated_system import LatticeSystem, Trajectory, TruncatedState, initial_state, lattice_for
from truncation import Truncation, ensure_nested

SOLVER_METHODS = ("rk", "picard")
POSITIVITY_RETRIES = 3


def solver_options(opts: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    options = {
        "rtol": settings.rtol,
        "atol": settings.atol,
        "max_step": math.inf,
        "rk_method": settings.rkMethod,
        "negative_tolerance": settings.negativeWeightTolerance,
        "picard_tolerance": settings.picardTolerance,
        "picard_iterations": settings.picardMaxIterations,
        "picard_nodes": settings.picardNodes,
        "integrating_factor": False,
        "cross_validate": False,
        "lambda_threshold": 1e-4,
        "max_atoms": settings.maxAtoms,
    }
    for key, value in (opts or {}).items():
        if key not in options:
            raise ConfigError(f"Unknown solver option {key!r}", field=f"solver.{key}")
        options[key] = value
    return options


def sample_grid(t_end: float, t_eval: Optional[Sequence[float]] = None) -> np.ndarray:
    if t_eval is None:
        return np.linspace(0.0, t_end, settings.sampleGridPoints)
    times = np.asarray(t_eval, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ConfigError("Sample times must be strictly increasing", field="t_eval")
    if len(times) and (times[0] < 0 or times[-1] > t_end * (1 + 1e-12)):
        raise ConfigError(f"Sample times must lie in [0, {t_end}]", field="t_eval")
    if len(times) == 0 or times[0] > 0:
        times = np.concatenate(([0.0], times))
    return times


def _integrate_rk(system: LatticeSystem, y0: np.ndarray, times: np.ndarray, t_end: float, options: Dict[str, Any]):
    """
    Adaptive Runge-Kutta on the packed (weights, lambda) vector. A run whose
    weights dip below -negative_tolerance is rejected and repeated with a
    hundredfold tighter absolute tolerance, so empty tail sites stay resolved.
    """
    threshold = options["lambda_threshold"]

    def lambda_crossing(t, y):
        return y[-1] - threshold

    lambda_crossing.direction = 1.0

    atol = float(options["atol"])
    for attempt in range(POSITIVITY_RETRIES + 1):
        result = solve_ivp(
            system.packed_rhs,
            (0.0, t_end),
            y0,
            method=options["rk_method"],
            t_eval=times,
            rtol=options["rtol"],
            atol=atol,
            max_step=options["max_step"],
            events=lambda_crossing,
        )
        if result.status < 0:
            raise SolverInstabilityError(f"Runge-Kutta integration failed: {result.message}", suggested_step=min(options["max_step"], t_end) / 10)
        floor = float(result.y.min()) if result.y.size else 0.0
        if floor >= -options["negative_tolerance"]:
            break
        if attempt < POSITIVITY_RETRIES:
            logger.debug(f"Weight {floor:.3e} below -{options['negative_tolerance']:.0e} with atol={atol:.0e}; repeating with atol={atol / 100:.0e}")
            atol /= 100.0
    events = result.t_events[0]
    if y0[-1] > threshold:
        crossing = 0.0
    else:
        crossing = float(events[0]) if len(events) else None
    meta = {"nfev": int(result.nfev), "lambda_crossing": crossing, "effective_atol": atol, "positivity_retries": attempt}
    return result.y.T, meta


def _integrate_picard(system: LatticeSystem, y0: np.ndarray, times: np.ndarray, options: Dict[str, Any]):
    Y, stats = solve_picard(
        system,
        y0[:-1],
        float(y0[-1]),
        times,
        nodes=options["picard_nodes"],
        tolerance=options["picard_tolerance"],
        max_iterations=options["picard_iterations"],
        check_integrating_factor=options["integrating_factor"],
    )
    above = np.nonzero(Y[:, -1] > options["lambda_threshold"])[0]
    crossing = None
    if len(above):
        k = int(above[0])
        crossing = 0.0 if k == 0 else _interpolate_crossing(times[k - 1], times[k], Y[k - 1, -1], Y[k, -1], options["lambda_threshold"])
    return Y, dict(stats, lambda_crossing=crossing)


def _interpolate_crossing(t0, t1, v0, v1, level) -> float:
    if v1 == v0:
        return float(t1)
    return float(t0 + (level - v0) * (t1 - t0) / (v1 - v0))


def _run(system: LatticeSystem, y0: np.ndarray, times: np.ndarray, t_end: float, method: str, options: Dict[str, Any]):
    if method == "rk":
        return _integrate_rk(system, y0, times, t_end, options)
    return _integrate_picard(system, y0, times, options)


def solve_truncated(
    mu0: DiscreteMeasure,
    kernel: Kernel,
    phi: SublinearFn,
    B: Truncation,
    t_end: float,
    method: str = "rk",
    t_eval: Optional[Sequence[float]] = None,
    opts: Optional[Dict[str, Any]] = None,
) -> Trajectory:
    if not t_end > 0:
        raise ConfigError(f"t_end must be positive, got {t_end}", field="t_end")
    if method not in SOLVER_METHODS:
        raise ConfigError(f"Unknown solver method {method!r}, expected one of {SOLVER_METHODS}", field="solver.method")
    options = solver_options(opts)
    times = sample_grid(t_end, t_eval)
    state0 = initial_state(mu0, phi, B)
    system = lattice_for(mu0, kernel, phi, B, options["max_atoms"])
    y0 = np.append(system.weights_of(state0.mu), state0.lam)
    logger.info(f"Solving on {B.label()} with {method}: {system.size} sites, lambda0={state0.lam:.6g}, t_end={t_end:g}")

    Y, meta = _run(system, y0, times, t_end, method, options)
    allowance = options["negative_tolerance"]
    floor = float(Y.min()) if Y.size else 0.0
    if floor < -allowance:
        raise SolverInstabilityError(
            f"Weight {floor:.3e} below the non-negativity tolerance {allowance:.1e}",
            suggested_step=min(options["max_step"], t_end) / 10,
        )
    if floor < 0:
        logger.debug(f"Clamped negative weights down to {floor:.3e}")
    # clamping raises <phi, mu> by at most this at any sample
    clamp_lift = float(np.max(np.maximum(-Y[:, :-1], 0.0) @ system.phi_sites)) if Y.size else 0.0
    Y = np.maximum(Y, 0.0)

    if options["cross_validate"]:
        other = "picard" if method == "rk" else "rk"
        Y_other, _ = _run(system, y0, times, t_end, other, options)
        gap = float(np.max(np.sum(np.abs(Y - np.maximum(Y_other, 0.0)), axis=1)))
        meta["cross_validation_gap"] = gap
        if gap > settings.crossValidationTolerance:
            raise SolverInstabilityError(f"rk and picard disagree by {gap:.3e} in total variation", suggested_step=min(options["max_step"], t_end) / 10)

    states = []
    for t, y in zip(times, Y):
        w = y[:-1]
        keep = w > 0
        states.append(TruncatedState(DiscreteMeasure(system.sites[keep], w[keep], mu0.epsilon_mass), float(y[-1]), B, float(t)))

    horizon = blowup_horizon(mu0, phi) / kernel.margin
    phi_total = Y[:, :-1] @ system.phi_sites + Y[:, -1]
    phi_monotone = bool(np.all(np.diff(phi_total) <= 1e-9 * max(phi_total[0], 1e-300) + clamp_lift))
    if not phi_monotone:
        logger.warning(f"<phi, mu> + lambda increased along the {method} trajectory on {B.label()}")
    phi2 = Y[:, :-1] @ system.phi2_sites
    watched = times < 0.9 * horizon
    monitor = phi2[watched] * (horizon - times[watched])
    meta.update(
        {
            "method": method,
            "rk_method": options["rk_method"] if method == "rk" else None,
            "rtol": options["rtol"],
            "atol": options["atol"],
            "sites": system.size,
            "lambda0": state0.lam,
            "lambda_threshold": options["lambda_threshold"],
            "min_weight": floor,
            "clamp_lift": clamp_lift,
            "phi_monotone": phi_monotone,
            "horizon": horizon,
            "monitor_worst": float(monitor.max()) if len(monitor) else None,
            "monitor_ok": bool(np.all(monitor <= 1 + 1e-6)),
            "truncation": B.to_json(),
        }
    )
    return Trajectory(times, states, phi, meta)


def cross_validate(mu0, kernel, phi, B, t_end, t_eval=None, opts=None) -> Dict[str, Any]:
    """Solve with both methods and report the largest TV gap at shared samples."""
    rk = solve_truncated(mu0, kernel, phi, B, t_end, "rk", t_eval, opts)
    picard = solve_truncated(mu0, kernel, phi, B, t_end, "picard", t_eval, opts)
    gaps = [total_variation(a.mu, b.mu) + abs(a.lam - b.lam) for a, b in zip(rk.states, picard.states)]
    gap = max(gaps)
    return {"gap": gap, "passed": gap <= settings.crossValidationTolerance, "rk": rk, "picard": picard}


@dataclass
class ExhaustionResult:
    trajectories: List[Trajectory]
    limit: Trajectory
    cauchy_gap: np.ndarray
    checks: List[Dict[str, Any]] = field(default_factory=list)


def _monotonicity_check(small: Trajectory, large: Trajectory, tolerance: float) -> Dict[str, Any]:
    phi = small.phi
    worst_atom = 0.0
    worst_phi = 0.0
    for t, a, b in zip(small.times, small.states, large.states):
        _, diff = signed_difference(a.mu, b.mu)
        excess = float(diff.max()) if len(diff) else 0.0
        phi_excess = b.phi_mass(phi) - a.phi_mass(phi)
        worst_atom = max(worst_atom, excess)
        worst_phi = max(worst_phi, phi_excess)
        if excess > tolerance:
            raise MonotonicityViolation(f"mu^B exceeds mu^B' by {excess:.3e} at t={t:g} ({a.B.label()} inside {b.B.label()})")
        if phi_excess > tolerance * max(1.0, a.phi_mass(phi)):
            raise MonotonicityViolation(f"<phi, mu^B'> + lambda^B' exceeds the B value by {phi_excess:.3e} at t={t:g} ({a.B.label()} inside {b.B.label()})")
    return {"small": small.meta["truncation"], "large": large.meta["truncation"], "worst_atom_excess": worst_atom, "worst_phi_excess": worst_phi}


def solve_exhaustion(
    mu0: DiscreteMeasure,
    kernel: Kernel,
    phi: SublinearFn,
    B_list: List[Truncation],
    t_end: float,
    t_eval: Optional[Sequence[float]] = None,
    method: str = "rk",
    opts: Optional[Dict[str, Any]] = None,
    workers: Optional[int] = None,
) -> ExhaustionResult:
    """Solve on every B of an increasing list and check the ordering between neighbours."""
    if not B_list:
        raise ConfigError("solve_exhaustion needs at least one truncation", field="truncations")
    ensure_nested(B_list)
    times = sample_grid(t_end, t_eval)
    trajectories = ReplicaPool(workers).map_ordered(lambda B: solve_truncated(mu0, kernel, phi, B, t_end, method, times, opts), B_list)

    tolerance = settings.monotonicityTolerance
    checks = [_monotonicity_check(trajectories[k - 1], trajectories[k], tolerance) for k in range(1, len(trajectories))]
    if len(trajectories) > 1:
        last, previous = trajectories[-1], trajectories[-2]
        cauchy = np.array([total_variation(a.mu, b.mu) for a, b in zip(previous.states, last.states)])
    else:
        cauchy = np.zeros(len(times))
    logger.info(f"Exhaustion over {len(B_list)} truncations: final Cauchy gap {cauchy.max():.3e}")
    return ExhaustionResult(trajectories, trajectories[-1], cauchy, checks)


def blowup_horizon(mu0: DiscreteMeasure, phi: SublinearFn) -> float:
    """Guaranteed strong-solution horizon <phi^2, mu0>^-1; infinite for the zero measure."""
    second = moment(mu0, sq(phi))
    if second <= 0:
        return math.inf
    return 1.0 / second


def _first_crossing(times: np.ndarray, values: np.ndarray, level: float) -> Optional[float]:
    above = np.nonzero(values > level)[0]
    if len(above) == 0:
        return None
    k = int(above[0])
    if k == 0:
        return float(times[0])
    return _interpolate_crossing(times[k - 1], times[k], values[k - 1], values[k], level)


def conservation_report(traj: Trajectory, phi: Optional[SublinearFn] = None, drift_tolerance: float = 1e-8, lambda_tolerance: float = 1e-4) -> Dict[str, Any]:
    if len(traj) == 0:
        raise ValueError("conservation_report needs a non-empty trajectory")
    if phi is not None and phi is not traj.phi:
        traj = Trajectory(traj.times, traj.states, phi, traj.meta)
    frame = traj.diagnostics()
    mass = frame["mass"].to_numpy()
    drift = float(np.max(np.abs(mass - mass[0])) / mass[0]) if mass[0] > 0 else 0.0
    phi_total = (frame["phi_moment"] + frame["lam"]).to_numpy()
    phi_monotone = bool(np.all(np.diff(phi_total) <= 1e-9 * max(phi_total[0], 1e-300) + traj.meta.get("clamp_lift", 0.0)))
    lam = frame["lam"].to_numpy()
    if traj.meta.get("lambda_threshold") == lambda_tolerance and "lambda_crossing" in traj.meta:
        crossing = traj.meta["lambda_crossing"]
    else:
        crossing = _first_crossing(traj.times, lam, lambda_tolerance)
    return {
        "series": frame,
        "mass_drift": drift,
        "mass_conserved": drift < drift_tolerance,
        "phi_monotone": phi_monotone,
        "lambda_positive_after": crossing,
    }


def domination_report(
    traj: Trajectory,
    reference: Union[Trajectory, Callable[[float], DiscreteMeasure]],
    reference_phi_moment: Optional[Callable[[float], float]] = None,
    tolerance: Optional[float] = None,
) -> Dict[str, Any]:
    """
    Compare a truncated solution with another solution nu of the full
    equation: mu^B_t <= nu_t atomwise and <phi, mu^B_t> + lambda^B_t >= <phi, nu_t>.
    reference_phi_moment supplies <phi, nu_t> when nu is only known on part of its support.
    """
    tolerance = settings.monotonicityTolerance if tolerance is None else tolerance
    phi = traj.phi
    if isinstance(reference, Trajectory):
        ref_at = lambda t: reference.state_at(t).mu
    else:
        ref_at = reference
    rows = []
    for t, state in zip(traj.times, traj.states):
        nu = ref_at(t)
        _, diff = signed_difference(state.mu, nu)
        atom_excess = float(diff.max()) if len(diff) else 0.0
        nu_phi = reference_phi_moment(t) if reference_phi_moment is not None else moment(nu, phi)
        phi_excess = nu_phi - state.phi_mass(phi)
        rows.append({"t": float(t), "atom_excess": atom_excess, "phi_excess": phi_excess})
    worst_atom = max(r["atom_excess"] for r in rows)
    worst_phi = max(r["phi_excess"] for r in rows)
    return {
        "rows": rows,
        "worst_atom_excess": worst_atom,
        "worst_phi_excess": worst_phi,
        "passed": worst_atom <= tolerance and worst_phi <= tolerance,
    }


def lambda_ode_diagnostic(traj: Trajectory) -> Dict[str, Any]:
    """
    Integrate d lambda / dt = lambda <phi^2, mu_t> from lambda_0 along the solved
    trajectory. With lambda_0 = 0 the solution stays 0 inside the strong horizon.
    """
    frame = traj.diagnostics()
    times = frame["t"].to_numpy()
    lam0 = float(frame["lam"].iloc[0])
    exponent = cumulative_trapezoid(frame["phi2_moment"].to_numpy(), times, initial=0.0)
    predicted = lam0 * np.exp(exponent)
    horizon = traj.meta.get("horizon", math.inf)
    inside = times < horizon
    return {
        "times": times.tolist(),
        "lambda_ode": predicted.tolist(),
        "lambda0": lam0,
        "horizon": horizon,
        "stays_zero": lam0 == 0.0 and bool(np.all(predicted[inside] == 0.0)),
        "max_solved_lambda_inside": float(frame["lam"].to_numpy()[inside].max()) if np.any(inside) else 0.0,
    }
