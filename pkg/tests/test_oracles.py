import math

import numpy as np
import pytest

from oracles import (
    additive_kernel_number,
    constant_kernel_density,
    constant_kernel_measure,
    constant_kernel_number,
    multiplicative_kernel_density,
    multiplicative_second_moment,
    multiplicative_tail_crossing,
    multiplicative_tail_mass,
)


@pytest.mark.parametrize("t", [0.5, 1.0, 4.0])
def test_constant_kernel_moments(t):
    sizes, densities = constant_kernel_measure(t, 400)
    assert math.fsum(densities) == pytest.approx(constant_kernel_number(t), rel=1e-12)
    assert math.fsum(sizes * densities) == pytest.approx(1.0, rel=1e-12)
    assert constant_kernel_density(1, 0.0) == 1.0


def test_multiplicative_solution():
    assert multiplicative_kernel_density(np.arange(1, 4), 0.0).tolist() == [1.0, 0.0, 0.0]
    assert multiplicative_kernel_density(1, 0.5) == pytest.approx(math.exp(-0.5))
    assert multiplicative_tail_mass(10, 0.0) == 0.0
    assert multiplicative_second_moment(0.5) == pytest.approx(2.0)
    assert multiplicative_second_moment(1.0) == math.inf
    with pytest.raises(ValueError):
        multiplicative_kernel_density(2, 1.5)


def test_tail_crossing_moves_later_with_larger_truncation():
    early, late = multiplicative_tail_crossing(20, 1e-4), multiplicative_tail_crossing(200, 1e-4)
    assert 0.0 < early < late < 1.0
    assert multiplicative_tail_mass(200, late) == pytest.approx(1e-4, rel=1e-6)


def test_additive_number():
    assert additive_kernel_number(0.0) == 1.0
    assert additive_kernel_number(1.0) == pytest.approx(math.exp(-1.0))
