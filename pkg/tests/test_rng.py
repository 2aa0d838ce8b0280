import numpy as np
import pytest

from rcmlab.rng import stream


def test_same_key_same_stream():
    a = stream(7, "edges", 1, -2).random(8)
    b = stream(7, "edges", 1, -2).random(8)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("other", [(8, "edges", 1, -2), (7, "xi", 1, -2), (7, "edges", -2, 1), (7, "edges", 1)])
def test_different_keys_differ(other):
    a = stream(7, "edges", 1, -2).random(8)
    b = stream(*other).random(8)
    assert not np.array_equal(a, b)


def test_streams_do_not_depend_on_consumption_order():
    first = [stream(1, "walk", k).random(4) for k in range(5)]
    second = [stream(1, "walk", k).random(4) for k in reversed(range(5))][::-1]
    assert all(np.array_equal(a, b) for a, b in zip(first, second))


def test_rejects_bad_seed_and_key():
    with pytest.raises(ValueError):
        stream(-1, "walk")
    with pytest.raises(ValueError):
        stream(0, "walk", 1 << 31)
    with pytest.raises(KeyError):
        stream(0, "unknown")
