import math

import pytest

from tandist import util


@pytest.mark.parametrize(
    "angle, expected",
    [
        (0.0, 0.0),
        (1.5 * math.pi, -0.5 * math.pi),
        (-1.5 * math.pi, 0.5 * math.pi),
        (math.pi, -math.pi),
        (7.0, 7.0 - 2 * math.pi),
    ],
)
def test_wrap_angle(angle: float, expected: float) -> None:
    assert util.wrap_angle(angle) == pytest.approx(expected)


def test_random_stream_is_reproducible() -> None:
    first = util.random_stream(3, 1).uniform(size=5)
    second = util.random_stream(3, 1).uniform(size=5)
    other = util.random_stream(3, 2).uniform(size=5)
    assert first.tolist() == second.tolist()
    assert first.tolist() != other.tolist()
    with pytest.raises(ValueError):
        util.random_stream(-1)


def test_stable_hash() -> None:
    assert util.stable_hash({"a": 1, "b": [1, 2]}) == util.stable_hash({"b": [1, 2], "a": 1})
    assert util.stable_hash({"a": 1}) != util.stable_hash({"a": 2})


def test_format_float_and_l1_norm() -> None:
    assert util.format_float(0.1) == "0.1"
    assert util.format_float(2) == "2.0"
    assert util.l1_norm([0.5, -1.5, 0.0]) == 2.0
