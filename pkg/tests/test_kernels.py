import numpy as np
import pytest

import sublinear
from coagkit_errors import ConfigError, DominationError, MeasureError
from kernels import (
    Kernel,
    brownian_kernel,
    eval_kernel,
    index_chain_kernel,
    parse_kernel,
    register_kernel,
    registered_kernel,
    verify_domination,
)


def test_kernel_values(builtin_kernels):
    constant, additive, multiplicative, brownian = builtin_kernels
    assert eval_kernel(brownian, 1.0, 1.0) == pytest.approx(4.0)
    assert eval_kernel(additive, 2.0, 3.0) == 5.0
    assert eval_kernel(multiplicative, 2.0, 3.0) == 6.0
    assert eval_kernel(constant, 7.0, 0.1) == 1.0


def test_index_chain_neighbours_only():
    kernel = index_chain_kernel([1.0, 2.0, 3.0, 4.0], lambda_base=8.0)
    assert eval_kernel(kernel, 1.0, 2.0) == 8.0
    assert eval_kernel(kernel, 3.0, 2.0) == 64.0
    assert eval_kernel(kernel, 1.0, 3.0) == 0.0
    assert eval_kernel(kernel, 2.0, 2.0) == 0.0
    assert eval_kernel(kernel, 1.5, 2.0) == 0.0
    assert verify_domination(kernel)["passed"]


def test_eval_kernel_rejects_non_positive_masses(constant_k):
    with pytest.raises(MeasureError):
        eval_kernel(constant_k, -1.0, 1.0)


def test_symmetry_is_exact(builtin_kernels, rng):
    x = np.exp(rng.uniform(-5, 5, 10_000))
    y = np.exp(rng.uniform(-5, 5, 10_000))
    for kernel in builtin_kernels:
        assert np.array_equal(kernel(x, y), kernel(y, x)), kernel


def test_brownian_diagonal(rng):
    x = np.exp(rng.uniform(-6, 6, 1000))
    np.testing.assert_allclose(brownian_kernel()(x, x), 4.0, rtol=1e-12)


def test_domination_equality_cases(builtin_kernels):
    constant, additive, multiplicative, brownian = builtin_kernels
    assert verify_domination(constant)["max_ratio"] == pytest.approx(1.0)
    assert verify_domination(multiplicative)["max_ratio"] == pytest.approx(1.0)
    report = verify_domination(brownian, mass_range=(1e-3, 1e3))
    assert report["passed"]
    assert report["max_ratio"] <= 1.0
    assert verify_domination(additive)["passed"]


def test_verify_domination_needs_samples(constant_k):
    with pytest.raises(ValueError):
        verify_domination(constant_k, samples=0)


def test_register_rejects_undominated_kernel():
    bad = Kernel("doubled", lambda x, y: 2.0 * x * y, sublinear.identity())
    with pytest.raises(DominationError):
        register_kernel("doubled", bad)
    with pytest.raises(ConfigError):
        registered_kernel("doubled")


def test_register_with_margin():
    kernel = Kernel("doubled", lambda x, y: 2.0 * x * y, sublinear.identity(), margin=2.0)
    register_kernel("doubled-margin", kernel)
    assert registered_kernel("doubled-margin") is kernel
    assert parse_kernel({"type": "registered", "name": "doubled-margin"}) is kernel


def test_margin_below_one_rejected():
    with pytest.raises(ConfigError):
        Kernel("k", lambda x, y: x * y, sublinear.identity(), margin=0.5)


def test_parse_kernel():
    assert parse_kernel({"type": "constant", "c": 2.0})(1.0, 1.0) == 2.0
    assert parse_kernel({"type": "index_chain", "classes": [1, 2, 3]}).descriptor["lambda_base"] == 8.0
    with pytest.raises(ConfigError):
        parse_kernel({"type": "gravitational"})
    with pytest.raises(DominationError):
        parse_kernel({"type": "multiplicative", "phi": {"type": "constant", "c": 1.0}})
