import numpy as np
import pytest

import sublinear
from coagkit_errors import ConfigError
from coupled_family import simulate_coupled_family
from kernels import Kernel
from random_streams import round_generator
from truncation import Truncation


def test_equal_truncations_share_paths(constant_k):
    B = Truncation.interval(4)
    run = simulate_coupled_family(np.ones(12), constant_k, constant_k.phi, [B, B], 1.0, seed=9)
    first, second = run.trajectories[0], run.trajectories[1]
    for a, b in zip(first.states, second.states):
        assert a.mu == b.mu
        assert a.lam == b.lam
    assert run.truncations[-1].is_all


def test_first_clock_moves_both_chains(constant_k):
    phi = sublinear.constant(1.0)
    run = simulate_coupled_family([1.0, 1.0], constant_k, phi, [Truncation.finite([1]), Truncation.finite([1, 2])], 100.0, seed=4)
    small, large = run.trajectories[0].states[-1], run.trajectories[1].states[-1]
    assert len(small.mu) == 0
    assert small.lam == 1.0
    assert large.mu.atoms() == [(2.0, 1.0)]
    assert large.lam == 0.0
    assert [len(log) for log in run.events] == [1, 1, 1]


def test_ordering_holds_along_the_family(constant_k):
    B_list = [Truncation.interval(4), Truncation.interval(8), Truncation.everything()]
    for seed in range(100):
        run = simulate_coupled_family(np.ones(50), constant_k, constant_k.phi, B_list, 2.0, seed=seed)
        for states in zip(*(traj.states for traj in run.trajectories)):
            for small, large in zip(states[:-1], states[1:]):
                for mass, weight in small.mu.atoms():
                    assert weight <= large.mu.weight_at(mass)
                assert large.phi_mass(constant_k.phi) <= small.phi_mass(constant_k.phi) + 1e-9


def test_family_needs_margin_one():
    kernel = Kernel("loose", lambda x, y: x * y, sublinear.identity(), margin=2.0)
    with pytest.raises(ConfigError):
        simulate_coupled_family([1.0, 1.0], kernel, kernel.phi, [Truncation.interval(2)], 1.0, seed=0)


def test_family_needs_nested_truncations(constant_k):
    with pytest.raises(ConfigError):
        simulate_coupled_family([1.0, 1.0], constant_k, constant_k.phi, [Truncation.interval(8), Truncation.interval(2)], 1.0, seed=0)


def test_round_generators_are_reproducible():
    a = round_generator(5, 3).standard_exponential(4)
    b = round_generator(5, 3).standard_exponential(4)
    c = round_generator(5, 4).standard_exponential(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
