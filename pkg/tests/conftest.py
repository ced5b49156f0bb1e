import json

import numpy as np
import pytest

import sublinear
from kernels import additive_kernel, brownian_kernel, constant_kernel, multiplicative_kernel
from measures import make_measure, monodisperse


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def unit_monomers():
    return monodisperse(1.0)


@pytest.fixture
def two_atoms():
    return make_measure([(1, 0.5), (2, 0.25)])


@pytest.fixture
def constant_k():
    return constant_kernel(1.0)


@pytest.fixture
def multiplicative_k():
    return multiplicative_kernel()


@pytest.fixture
def builtin_kernels():
    return [constant_kernel(1.0), additive_kernel(), multiplicative_kernel(), brownian_kernel()]


@pytest.fixture
def builtin_phis():
    return [
        sublinear.identity(),
        sublinear.constant(2.0),
        sublinear.power(0.5),
        sublinear.max_with(1.0),
        sublinear.power_sum([(1.0, 0.0), (1.0, 1.0)]),
        sublinear.brownian_phi(),
    ]


@pytest.fixture
def write_config(tmp_path):
    """Write a config payload as JSON and return its path; outputs go below tmp_path/out."""

    def write(payload, name="config.json"):
        payload = dict(payload)
        payload.setdefault("output", str(tmp_path / "out" / payload.get("kind", "run")))
        config_path = tmp_path / name
        config_path.write_text(json.dumps(payload), encoding="utf-8")
        return config_path

    return write
