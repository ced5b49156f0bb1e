import numpy as np
import pytest

from coagkit_errors import ConfigError
from truncation import Truncation, ensure_nested, parse_truncation


def test_contains():
    interval = Truncation.interval(4.0)
    assert interval.contains(np.array([0.5, 4.0, 4.5])).tolist() == [True, True, False]
    finite = Truncation.finite([1, 2, 5])
    assert finite.contains(np.array([1.0, 3.0, 5.0])).tolist() == [True, False, True]
    assert Truncation.everything().contains(1e300)


def test_issubset():
    small, large = Truncation.interval(4), Truncation.interval(8)
    assert small.issubset(large) and not large.issubset(small)
    assert Truncation.finite([1, 2]).issubset(small)
    assert large.issubset(Truncation.everything())
    assert not Truncation.everything().issubset(large)
    assert Truncation.finite([1, 2]) == Truncation.finite([2, 1])


def test_parse_truncation():
    assert parse_truncation("all").is_all
    assert parse_truncation({"interval": 50}).upper == 50.0
    assert parse_truncation({"range": [1, 8]}).masses.tolist() == list(np.arange(1.0, 9.0))
    assert parse_truncation({"set": [1, 2]}).to_json() == {"set": [1.0, 2.0]}
    with pytest.raises(ConfigError):
        parse_truncation({"range": [3, 1]})
    with pytest.raises(ConfigError):
        parse_truncation(42)
    with pytest.raises(ConfigError):
        Truncation.interval(-1)


def test_ensure_nested():
    ensure_nested([Truncation.interval(4), Truncation.interval(8), Truncation.everything()])
    with pytest.raises(ConfigError) as excinfo:
        ensure_nested([Truncation.interval(8), Truncation.interval(4)])
    assert excinfo.value.field == "truncations[1]"
