import numpy as np

from contextew.rng import PURPOSES, Streams, stream


def test_same_key_same_stream():
    a = stream(1, 2, 3, "play").random(5)
    b = stream(1, 2, 3, "play").random(5)
    assert np.array_equal(a, b)


def test_keys_are_distinct():
    draws = {(s, r, t, p): stream(s, r, t, p).random()
             for s in (0, 1) for r in (0, 1) for t in (1, 2) for p in ("play", "sigma")}
    assert len(set(draws.values())) == len(draws)


def test_streams_binding():
    s = Streams(5, 3)
    assert np.array_equal(s.get(7, "mgr").random(3), stream(5, 3, 7, "mgr").random(3))
    assert len(set(PURPOSES.values())) == len(PURPOSES)
