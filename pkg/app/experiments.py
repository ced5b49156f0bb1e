"""
Experiment driver: one runner per config kind, plus the two hydrodynamic
studies. Replicas fan out over the replica pool and are reduced in replica
order, so tables do not depend on the worker count.
"""

import math
import time
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from artifacts import ArtifactBundle
from coagkit_errors import ConfigError, InvariantViolation, NumericalFailure
from coagkit_logging import logger
from coagkit_settings import settings
from coalescent import ParticleSystem, rescale_path, simulate_coalescent, simulate_coupled
from coupled_family import simulate_coupled_family
from deterministic_solver import (
    blowup_horizon,
    conservation_report,
    lambda_ode_diagnostic,
    solve_exhaustion,
    solve_truncated,
)
from experiment_config import ExperimentConfig
from measures import moment, total_variation
from nonuniqueness import chain_mass, extract_limits, fixed_point_residual, verify_chain_bounds
from random_streams import replica_generator
from replica_pool import ReplicaPool
from truncated_system import Trajectory, initial_state
from truncation import Truncation
from weak_metric import WeakMetricDict, weak_distance_d0

MAX_REFERENCE_DOUBLINGS = 12
CONCENTRATION_NORMS = ("plain", "phi")


def failed_invariants(kind: str, results: Dict[str, Any]) -> List[str]:
    """Names of the checked invariants a finished run did not satisfy."""
    failed = []
    if kind == "solve":
        for k, report in enumerate(results["reports"]):
            if not report["phi_monotone"]:
                failed.append(f"phi_monotone[{k}]")
            if not report["meta"].get("monitor_ok", True):
                failed.append(f"phi2_monitor[{k}]")
    elif kind == "nonuniq":
        checks = {"bounds_plus_passed": "bounds_plus", "bounds_minus_passed": "bounds_minus", "mass_within_certificate": "mass_certificate"}
        failed.extend(name for key, name in checks.items() if results.get(key) is False)
    return failed


class ExperimentRunner:
    def __init__(self, runtime_info_helper):
        self.runtime_info_helper = runtime_info_helper

    def run(self, config: ExperimentConfig) -> ArtifactBundle:
        started = time.perf_counter()
        bundle = ArtifactBundle(config.output)
        kind = config.kind
        logger.info(f"Running {kind} from {config.source} with seed {config.seed} into {config.output}")

        if kind == "solve":
            results = self._solve(config, bundle)
        elif kind == "simulate":
            results = self._simulate(config, bundle, coupled=False)
        elif kind == "couple":
            results = self._simulate(config, bundle, coupled=True)
        elif kind == "family":
            results = self._family(config, bundle)
        elif kind == "nonuniq":
            results = self._nonuniq(config, bundle)
        elif kind == "converge":
            table, results = convergence_study(config)
            bundle.write_frame(table, "convergence", plot={"x": "n", "y": "mean_distance", "logx": True, "logy": True})
        elif kind == "concentrate":
            table, results = concentration_study(config)
            bundle.write_frame(table, "concentration", plot={"x": "n", "y": "frequency", "logy": True})
        else:
            raise ConfigError(f"Unknown experiment kind {kind!r}", field="kind")

        failed = failed_invariants(kind, results)
        results["failed_invariants"] = failed
        if failed:
            bundle.exit_code = InvariantViolation.exit_code
            logger.error(f"{kind} finished with failed invariants: {', '.join(failed)}")
        bundle.write_summary(config, results, started, self.runtime_info_helper.get_runtime_info())
        return bundle

    def _solve(self, config: ExperimentConfig, bundle: ArtifactBundle) -> Dict[str, Any]:
        mu0 = config.initial_measure()
        kernel, phi = config.kernel(), config.phi()
        method = config.get("method", "rk")
        times = config.times()
        lambda_tolerance = config.tolerance("lambda", 1e-4)
        opts = dict(config.get("solver", {}))
        opts.setdefault("lambda_threshold", lambda_tolerance)

        if "truncations" in config.payload:
            exhaustion = solve_exhaustion(mu0, kernel, phi, config.truncations(), config.t_end, times, method, opts, config.workers)
            trajectories = exhaustion.trajectories
            extra = {"monotonicity_checks": exhaustion.checks, "cauchy_gap": float(exhaustion.cauchy_gap.max())}
        else:
            trajectories = [solve_truncated(mu0, kernel, phi, config.truncation(), config.t_end, method, times, opts)]
            extra = {}

        reports = []
        for k, traj in enumerate(trajectories):
            name = "trajectory" if len(trajectories) == 1 else f"trajectory_{k}"
            bundle.write_frame(traj.long_frame(), name)
            report = conservation_report(traj, drift_tolerance=config.tolerance("mass_drift", 1e-8), lambda_tolerance=lambda_tolerance)
            bundle.write_frame(report.pop("series"), f"{name}_moments", plot={"x": "t", "y": "mass"})
            report["lambda_ode"] = {key: value for key, value in lambda_ode_diagnostic(traj).items() if key not in ("times", "lambda_ode")}
            report["meta"] = traj.meta
            reports.append(report)
        return dict(extra, blowup_horizon=blowup_horizon(mu0, phi), reports=reports)

    def _simulate(self, config: ExperimentConfig, bundle: ArtifactBundle, coupled: bool) -> Dict[str, Any]:
        kernel, phi = config.kernel(), config.phi()
        rng = replica_generator(config.seed, 0)
        n = config.get("n")
        X0 = config.initial_particles(n, rng)
        scale = 1 if n is None else n
        times = config.times()
        if coupled:
            system = ParticleSystem.restricted(X0, phi, config.truncation())
            run = simulate_coupled(system, kernel, phi, config.t_end / scale, rng, times / scale)
        else:
            run = simulate_coalescent(ParticleSystem(X0, phi), kernel, phi, config.t_end / scale, rng, times / scale)
        path = rescale_path(run.trajectory, scale)
        bundle.write_frame(path.long_frame(), "trajectory")
        bundle.write_frame(path.diagnostics(), "trajectory_moments", plot={"x": "t", "y": "phi_moment"})
        bundle.write_frame(run.events.rescaled(scale).to_frame(), "events")
        return {
            "particles": len(X0),
            "n": scale,
            "events": len(run.events),
            "proposals": run.trajectory.meta["proposals"],
            "final_count": run.final.count,
            "final_lambda": run.final.lam / scale,
            "truncation": run.final.B.to_json(),
        }

    def _family(self, config: ExperimentConfig, bundle: ArtifactBundle) -> Dict[str, Any]:
        kernel, phi = config.kernel(), config.phi()
        X0 = config.initial_particles(config.get("n"), replica_generator(config.seed, 0))
        family = simulate_coupled_family(X0, kernel, phi, config.truncations(), config.t_end, config.seed, config.times())
        for k, (traj, events) in enumerate(zip(family.trajectories, family.events)):
            bundle.write_frame(traj.long_frame(), f"trajectory_{k}")
            bundle.write_frame(traj.diagnostics(), f"trajectory_{k}_moments", plot={"x": "t", "y": "phi_moment"})
            bundle.write_frame(events.to_frame(), f"events_{k}")
        return {
            "rounds": family.rounds,
            "truncations": [B.to_json() for B in family.truncations],
            "events": [len(events) for events in family.events],
        }

    def _nonuniq(self, config: ExperimentConfig, bundle: ArtifactBundle) -> Dict[str, Any]:
        chain = config.get("chain", {})
        N_max = int(chain.get("N_max", settings.defaultNmax))
        base = float(chain.get("base", settings.lambdaBase))
        limits = extract_limits(N_max, config.times(), base)
        bundle.write_frame(limits.m_plus.to_frame(), "m_plus", plot={"x": "t", "y": "m_n", "group": "n", "logy": True})
        bundle.write_frame(limits.m_minus.to_frame(), "m_minus", plot={"x": "t", "y": "m_n", "group": "n", "logy": True})
        certificate = limits.certificate()
        certificate["bounds_plus"] = verify_chain_bounds(limits.m_plus)
        certificate["bounds_minus"] = verify_chain_bounds(limits.m_minus)
        certificate["fixed_point_residual"] = max(fixed_point_residual(limits.m_plus), fixed_point_residual(limits.m_minus))
        if "mass_base" in chain:
            alpha = float(chain["mass_base"])
            certificate["mass"] = chain_mass(limits.m_plus, lambda n: np.power(alpha, n.astype(float)))
        bundle.write_json(certificate, "certificate")
        return {
            "N_max": N_max,
            "separation": limits.separation,
            "separation_time": limits.separation_time,
            "bounds_plus_passed": certificate["bounds_plus"]["passed"],
            "bounds_minus_passed": certificate["bounds_minus"]["passed"],
            "mass_within_certificate": certificate.get("mass", {}).get("within_certificate"),
        }


def _replica_pairs(n_list: List[int], replicas: int) -> List[Tuple[int, int]]:
    return [(int(n), r) for n in n_list for r in range(replicas)]


def _rescaled_chain(config: ExperimentConfig, n: int, r: int, B: Optional[Truncation]) -> Trajectory:
    """One replica of the rescaled chain n^-1 X_{t/n}, sampled on the config grid."""
    kernel, phi = config.kernel(), config.phi()
    rng = replica_generator(config.seed, n, r)
    X0 = config.initial_particles(n, rng)
    times = config.times()
    if B is None:
        run = simulate_coalescent(ParticleSystem(X0, phi), kernel, phi, config.t_end / n, rng, times / n)
    else:
        run = simulate_coupled(ParticleSystem.restricted(X0, phi, B), kernel, phi, config.t_end / n, rng, times / n)
    return rescale_path(run.trajectory, n)


def reference_solution(config: ExperimentConfig) -> Trajectory:
    """
    Deterministic reference on an interval B doubled until lambda^B stays below
    the reference tolerance over the whole horizon.
    """
    mu0 = config.initial_measure()
    kernel, phi = config.kernel(), config.phi()
    tolerance = config.tolerance("reference_lambda", settings.referenceLambdaTolerance)
    B = config.truncation()
    x_max = B.upper if not B.is_all and np.isfinite(B.upper) else 8.0 * float(mu0.masses.max())
    for _ in range(MAX_REFERENCE_DOUBLINGS):
        traj = solve_truncated(mu0, kernel, phi, Truncation.interval(x_max), config.t_end, config.get("method", "rk"), config.times(), config.get("solver"))
        lam = max(state.lam for state in traj.states)
        if lam < tolerance:
            logger.info(f"Reference solution on (0, {x_max:g}]: max lambda {lam:.3e}")
            return traj
        logger.debug(f"Reference on (0, {x_max:g}] leaks {lam:.3e}; doubling")
        x_max *= 2
    raise NumericalFailure(f"Reference lambda stays above {tolerance:g} up to B = (0, {x_max / 2:g}]")


def _log_slope(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if len(x) < 2 or np.any(y <= 0):
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _trend_non_increasing(values: np.ndarray, stderrs: np.ndarray) -> bool:
    """No rise between consecutive entries beyond 3 combined standard errors."""
    rise = np.diff(values)
    band = 3.0 * np.sqrt(stderrs[:-1] ** 2 + stderrs[1:] ** 2)
    return bool(np.all(rise <= band))


def convergence_study(config: ExperimentConfig) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """sup over the sample grid of d0(phi X^n_s, phi mu_s) for every n and replica."""
    phi = config.phi()
    n_list = [int(n) for n in config.get("n_list")]
    replicas = int(config.get("replicas"))
    reference = reference_solution(config)
    targets = [state.mu.weighted(phi) for state in reference.states]
    metric = config.get("metric", {})
    dictionary = WeakMetricDict(float(metric.get("x_max", reference.meta["truncation"]["interval"])), int(metric.get("levels", 8)))

    def task(item: Tuple[int, int]) -> float:
        n, r = item
        path = _rescaled_chain(config, n, r, None)
        return max(weak_distance_d0(state.mu.weighted(phi), target, dictionary) for state, target in zip(path.states, targets))

    distances = ReplicaPool(config.workers).map_ordered(task, _replica_pairs(n_list, replicas))
    distances = np.array(distances).reshape(len(n_list), replicas)
    means = distances.mean(axis=1)
    stderrs = distances.std(axis=1, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros(len(n_list))
    table = pd.DataFrame({"n": n_list, "mean_distance": means, "stderr": stderrs, "replicas": replicas})
    slope = _log_slope(np.array(n_list, dtype=float), means)
    results = {
        "n_list": n_list,
        "mean_distance": means,
        "stderr": stderrs,
        "slope": slope,
        "strictly_decreasing": bool(np.all(np.diff(means) < 0)),
        "trend_consistent": _trend_non_increasing(means, stderrs),
        "reference_truncation": reference.meta["truncation"],
        "metric": repr(dictionary),
    }
    logger.info(f"Convergence study: means {np.round(means, 6).tolist()}, slope {slope}")
    return table, results


def _deviation(path: Trajectory, reference: Trajectory, phi, norm: str) -> float:
    """sup_s ||X_s - mu_s|| + |Lambda_s - lambda_s|, in plain or phi-weighted total variation."""
    worst = 0.0
    for state, target in zip(path.states, reference.states):
        if norm == "phi":
            gap = total_variation(state.mu.weighted(phi), target.mu.weighted(phi))
        else:
            gap = total_variation(state.mu, target.mu)
        gap += abs(state.lam - target.lam)
        worst = max(worst, gap)
    return worst


def concentration_study(config: ExperimentConfig) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    Frequency over replicas of sup_s ||X^B_s - mu^B_s|| + |Lambda^B_s - lambda^B_s| > delta
    for the rescaled truncated chain on a finite set of integer masses. The norm
    is total variation, optionally phi-weighted.
    """
    B = config.truncation()
    if B.is_all or not np.isfinite(B.upper):
        raise ConfigError("The concentration study needs a finite truncation", field="truncation")
    mu0 = config.initial_measure()
    if not np.allclose(mu0.masses, np.rint(mu0.masses)):
        raise ConfigError("The concentration study needs integer masses", field="initial")
    phi = config.phi()
    norm = config.get("norm", "plain")
    if norm not in CONCENTRATION_NORMS:
        raise ConfigError(f"Unknown deviation norm {norm!r}, expected one of {CONCENTRATION_NORMS}", field="norm")
    delta = float(config.get("delta"))
    n_list = [int(n) for n in config.get("n_list")]
    replicas = int(config.get("replicas"))
    floor = settings.minimumResolvableCount / replicas
    resolution = config.get("resolution")
    if resolution is not None and resolution < floor:
        logger.warning(f"{replicas} replicas cannot resolve tail probabilities of {resolution:g}; resolvable floor is {floor:g}")

    reference = solve_truncated(mu0, config.kernel(), phi, B, config.t_end, config.get("method", "rk"), config.times(), config.get("solver"))
    start = initial_state(mu0, phi, B)
    # <phi, X> + Lambda never increases and the particle count never grows
    phi_total = moment(start.mu, phi) + start.lam
    diameter = 2.0 * phi_total if norm == "phi" else 2.0 * start.mu.total_mass() + phi_total
    exact_start = "sample" not in config.get("initial")
    if exact_start and delta >= diameter:
        logger.info(f"delta={delta:g} is at least the diameter {diameter:g}; no replica can exceed it")
        counts = np.zeros(len(n_list), dtype=int)
    else:
        deviations = ReplicaPool(config.workers).map_ordered(
            lambda item: _deviation(_rescaled_chain(config, item[0], item[1], B), reference, phi, norm),
            _replica_pairs(n_list, replicas),
        )
        counts = (np.array(deviations).reshape(len(n_list), replicas) > delta).sum(axis=1)

    frequency = counts / replicas
    stderrs = np.sqrt(frequency * (1 - frequency) / replicas)
    resolved = counts >= settings.minimumResolvableCount
    ns = np.array(n_list, dtype=float)
    # log-frequency against n, not log n
    slope = float(np.polyfit(ns[resolved], np.log(frequency[resolved]), 1)[0]) if resolved.sum() >= 2 else None
    table = pd.DataFrame({"n": n_list, "exceedances": counts, "frequency": frequency, "stderr": stderrs, "replicas": replicas})
    results = {
        "delta": delta,
        "norm": norm,
        "diameter": diameter,
        "frequency": frequency,
        "resolvable_floor": floor,
        "log_frequency_slope": slope,
        "non_increasing": _trend_non_increasing(frequency, stderrs),
        "tail_decay": bool(counts[-1] == 0 or (slope is not None and slope < 0)),
        "truncation": B.to_json(),
    }
    logger.info(f"Concentration study at delta={delta:g}: frequencies {frequency.tolist()}")
    return table, results
