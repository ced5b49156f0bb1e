import math

import numpy as np
import pytest

from coagkit_errors import MeasureError
from measures import (
    default_epsilon,
    make_measure,
    measure_from_counts,
    measure_from_csv,
    measure_from_json,
    moment,
    pair_integral,
    sample_empirical,
    signed_difference,
    total_variation,
)
from weak_metric import WeakMetricDict, weak_distance_d0


def test_make_measure_keeps_distinct_atoms(two_atoms):
    assert len(two_atoms) == 2
    assert two_atoms.total_mass() == pytest.approx(0.75)
    assert two_atoms.weight_at(2.0) == 0.25


def test_make_measure_merges_within_epsilon():
    mu = make_measure([(1.0, 0.5), (1.0 + 1e-12, 0.5)], 1e-9)
    assert len(mu) == 1
    assert mu.masses[0] == pytest.approx(1.0, abs=1e-11)
    assert mu.weights[0] == pytest.approx(1.0)


def test_make_measure_sorts_and_sums_duplicates():
    mu = make_measure([(3, 1.0), (1, 2.0), (3, 0.5)])
    assert mu.masses.tolist() == [1.0, 3.0]
    assert mu.weights.tolist() == [2.0, 1.5]


@pytest.mark.parametrize("pairs, index", [([(-1, 0.5)], 0), ([(1, 0.5), (2, -0.1)], 1), ([(1, 1), (0, 1)], 1)])
def test_make_measure_rejects_bad_pairs(pairs, index):
    with pytest.raises(MeasureError) as excinfo:
        make_measure(pairs)
    assert excinfo.value.index == index


def test_moment(two_atoms):
    assert moment(two_atoms, lambda x: x) == pytest.approx(1.0)
    assert moment(make_measure([]), lambda x: x) == 0.0


def test_moment_geometric_series():
    mu = make_measure([(k, 2.0**-k) for k in range(1, 21)])
    assert moment(mu, lambda x: x) == pytest.approx(2 - 22 * 2.0**-20, rel=1e-14)


def test_total_variation():
    mu = make_measure([(1, 0.7), (2, 0.3)])
    nu = make_measure([(1, 0.5), (2, 0.5)])
    assert total_variation(mu, mu) == 0.0
    assert total_variation(make_measure([(1, 1)]), make_measure([(2, 1)])) == 2.0
    assert total_variation(mu, nu) == pytest.approx(0.4)


def test_signed_difference_needs_same_epsilon():
    with pytest.raises(MeasureError):
        signed_difference(make_measure([(1, 1)], 0.0), make_measure([(1, 1)], 1e-9))


def test_pair_integral_counts_ordered_distinct_pairs():
    mu = make_measure([(1, 2), (2, 1)])
    assert pair_integral(mu, lambda x, y: np.ones(np.broadcast(x, y).shape)) == pytest.approx(3 * 3 - 3)


@pytest.mark.parametrize("n", [1, 3, 10, 250])
def test_pair_integral_scales_with_n(n):
    mu = make_measure([(1, 0.2), (2, 0.5), (5, 0.3)])
    g = lambda x, y: x * y + 1.0
    assert n**2 * pair_integral(mu, g, n) == pytest.approx(pair_integral(mu.scaled(n), g, 1), rel=1e-12)


def test_make_measure_is_idempotent(rng):
    mu = make_measure(zip(rng.uniform(0.1, 10, 40), rng.uniform(0, 1, 40)), 1e-3)
    assert make_measure(mu.atoms(), mu.epsilon_mass) == mu


def test_total_variation_is_a_metric(rng):
    for _ in range(50):
        mu, nu, rho = (make_measure(zip(rng.integers(1, 8, 5), rng.uniform(0, 1, 5))) for _ in range(3))
        assert total_variation(mu, nu) == total_variation(nu, mu)
        assert total_variation(mu, rho) <= total_variation(mu, nu) + total_variation(nu, rho) + 1e-12


def test_json_round_trip_is_exact():
    mu = make_measure([(1 / 3, 0.1), (math.pi, 2 / 7), (1e6, 1e-300)])
    again = measure_from_json(mu.to_json())
    assert again == mu
    assert again.masses.tobytes() == mu.masses.tobytes()
    assert again.weights.tobytes() == mu.weights.tobytes()


def test_sample_empirical_is_a_probability_on_the_support(rng):
    mu0 = make_measure([(1, 0.25), (2, 0.75)])
    sample = sample_empirical(mu0, 1000, rng)
    assert sample.total_mass() == pytest.approx(1.0)
    assert set(sample.masses.tolist()) <= {1.0, 2.0}
    assert sample.weight_at(2.0) == pytest.approx(0.75, abs=0.06)


def test_sample_empirical_needs_probability(rng):
    with pytest.raises(MeasureError):
        sample_empirical(make_measure([(1, 2.0)]), 10, rng)


def test_measure_from_counts():
    mu = measure_from_counts(np.array([1.0, 2.0, 1.0]), scale=0.5)
    assert mu.atoms() == [(1.0, 1.0), (2.0, 0.5)]


def test_csv_keeps_full_precision(tmp_path):
    mu = make_measure([(1 / 3, 0.1), (math.pi, 2 / 7)])
    mu.to_csv(tmp_path / "mu.csv")
    assert measure_from_csv(tmp_path / "mu.csv") == mu


def test_default_epsilon():
    assert default_epsilon([1, 2, 3]) == 0.0
    assert default_epsilon([0.5, 2.0]) == pytest.approx(0.5e-9)


def test_weak_distance_identity_and_tv_bound(rng):
    dictionary = WeakMetricDict(16.0, levels=6)
    for _ in range(100):
        mu = make_measure(zip(rng.uniform(0.1, 20, 4), rng.uniform(0, 1, 4)))
        nu = make_measure(zip(rng.uniform(0.1, 20, 3), rng.uniform(0, 1, 3)))
        assert weak_distance_d0(mu, mu, dictionary) == 0.0
        assert weak_distance_d0(mu, nu, dictionary) <= total_variation(mu, nu) + 1e-12


def test_weak_distance_is_lipschitz_in_the_atom_position():
    dictionary = WeakMetricDict(8.0, levels=8)
    x = 3.3
    for gap in (1e-1, 1e-2, 1e-3, 1e-4):
        d = weak_distance_d0(make_measure([(x, 1)]), make_measure([(x + gap, 1)]), dictionary)
        assert 0 < d <= gap * (1 + 1e-9)


def test_weak_metric_hats_are_bounded():
    dictionary = WeakMetricDict(4.0, levels=5)
    sites = np.linspace(0.01, 4.0, 500)
    for level in range(dictionary.levels):
        for site in sites[::50]:
            values = dictionary.level_integrals(np.array([site]), np.array([1.0]), level)
            assert np.all(np.abs(values) <= 1.0)
    assert dictionary.weights().sum() < 1.0
