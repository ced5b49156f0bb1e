import dataclasses
import math

import numpy as np
import pytest

from coagkit_errors import ChainOverflowError, ConfigError, DivergentMassError
from nonuniqueness import (
    chain_mass,
    extract_limits,
    fixed_point_residual,
    rates,
    solve_chain,
    solve_chain_rk,
    verify_chain_bounds,
)

TIMES = np.linspace(0.0, 1.0, 11)


def test_single_component_is_constant():
    traj = solve_chain(1, 6, TIMES)
    np.testing.assert_allclose(traj.component(1), 0.5, rtol=1e-15)
    assert np.all(traj.m[:, 1:] == 0.0)


def test_two_component_closed_form():
    traj = solve_chain(2, 6, TIMES, base=8.0)
    np.testing.assert_allclose(traj.component(1), 0.5 * np.exp(-2.0 * TIMES), rtol=1e-12)
    np.testing.assert_allclose(traj.component(2), 0.25, rtol=1e-15)


def test_top_component_is_frozen():
    traj = solve_chain(10, 10, TIMES)
    np.testing.assert_allclose(traj.component(10), 2.0**-10, rtol=1e-14)
    assert np.all(traj.component(10) == traj.component(10)[0])
    assert traj.parity == "even"


def test_components_are_non_negative_and_non_increasing():
    traj = solve_chain(9, 10, TIMES)
    assert np.all(traj.m >= 0.0)
    assert np.all(np.diff(traj.m, axis=0) <= 0.0)


def test_sweep_agrees_with_runge_kutta():
    sweep = solve_chain(8, 8, TIMES)
    rk = solve_chain_rk(8, 8, TIMES)
    np.testing.assert_allclose(sweep.m, rk.m, atol=1e-5)


def test_fixed_point_residual_is_small():
    residual = fixed_point_residual(solve_chain(10, 10, TIMES))
    assert 0.0 < residual < 1e-4


def test_fixed_point_residual_sees_a_perturbed_component():
    traj = solve_chain(10, 10, TIMES)
    U = traj.log_m_grid.copy()
    mid = len(U) // 2
    U[mid, int(np.argmax(U[mid, : traj.M - 1]))] += 0.05
    assert fixed_point_residual(dataclasses.replace(traj, log_m_grid=U)) > 1e-4


def test_solve_chain_arguments():
    with pytest.raises(ConfigError):
        solve_chain(0, 6, TIMES)
    with pytest.raises(ConfigError):
        solve_chain(7, 6, TIMES)
    with pytest.raises(ConfigError):
        solve_chain(2, 6, [0.0, 0.5, 0.2])
    with pytest.raises(ChainOverflowError):
        rates(8.0, 301)
    with pytest.raises(ChainOverflowError):
        rates(1e10, 40)


def test_limits_bound_and_separate():
    limits = extract_limits(20, TIMES)
    assert np.all(limits.m_plus.component(2) >= 1 / 8)
    assert limits.m_minus.component(2)[-1] <= 0.25 * math.exp(-4.0) * (1 + 1e-6)
    assert limits.separation > 0.12
    assert limits.separation_time == 1.0
    for n in range(1, 21):
        assert limits.m_plus.component(n)[0] == pytest.approx(2.0**-n, rel=1e-14)
    for n in range(1, 20):
        assert limits.m_minus.component(n)[0] == pytest.approx(2.0**-n, rel=1e-14)
    certificate = limits.certificate()
    assert certificate["monotone_in_N"]
    assert len(certificate["gap_plus"]) == 20


def test_limits_need_even_N_max():
    with pytest.raises(ConfigError):
        extract_limits(7, TIMES)
    with pytest.raises(ConfigError):
        extract_limits(4, TIMES)


def test_truncations_are_ordered_in_N():
    small, large = solve_chain(4, 10, TIMES), solve_chain(6, 10, TIMES)
    tolerance = 1e-12
    assert np.all(large.component(2) <= small.component(2) * (1 + tolerance))
    assert np.all(large.component(1) >= small.component(1) * (1 - tolerance))


def test_half_and_envelope_bounds():
    for M in (9, 10):
        report = verify_chain_bounds(solve_chain(M, 10, TIMES))
        assert report["passed"]
        assert report["worst_envelope_margin"] <= 1e-12
        assert report["worst_half_margin"] <= math.log(2.0) + 1e-12
        kinds = {c["n"]: c["kind"] for c in report["components"]}
        assert kinds[M] == "half"
        assert kinds[M - 1] == "envelope"


def test_bounds_margins_at_time_zero():
    report = verify_chain_bounds(solve_chain(6, 6, [0.0]))
    half = [c["worst_margin"] for c in report["components"] if c["kind"] == "half"]
    envelope = [c["worst_margin"] for c in report["components"] if c["kind"] == "envelope"]
    assert half == pytest.approx([math.log(2.0)] * 3)
    assert envelope == [0.0, 0.0, 0.0]


def test_bounds_need_a_fast_chain():
    with pytest.raises(ConfigError):
        verify_chain_bounds(solve_chain(6, 6, TIMES, base=4.0))


def test_mass_within_geometric_certificate():
    traj = solve_chain(10, 10, TIMES)
    report = chain_mass(traj, lambda n: np.power(1.5, n.astype(float)))
    assert report["within_certificate"]
    assert report["mass"][0] == pytest.approx(sum(1.5**n * 2.0**-n for n in range(1, 10)))
    assert report["n_cut"] == 9


def test_frozen_chain_keeps_its_mass():
    traj = solve_chain(6, 6, TIMES, base=0.0)
    report = chain_mass(traj, lambda n: np.power(1.5, n.astype(float)))
    assert max(report["mass"]) == min(report["mass"])


def test_class_bookkeeping_closes():
    report = chain_mass(solve_chain(4, 4, TIMES), [1.0, 2.0, 3.0, 4.0], n_cut=4)
    assert report["bookkeeping_residual"] < 1e-3
    np.testing.assert_allclose(report["mass"], report["closed_mass"], rtol=1e-3)


def test_divergent_mass_rejected():
    with pytest.raises(DivergentMassError):
        chain_mass(solve_chain(6, 6, TIMES), lambda n: np.power(8.0, n.astype(float)))
