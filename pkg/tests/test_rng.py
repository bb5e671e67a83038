import numpy as np
import pytest

from brstable.rng import spawn_key, stream


def test_reproducible():
    assert stream(7, "a", 3).random(5).tolist() == stream(7, "a", 3).random(5).tolist()


def test_paths_give_distinct_streams():
    draws = {tuple(stream(7, *p).random(3)) for p in [("a", 0), ("a", 1), ("b", 0), (0, "a"), ("a",)]}
    assert len(draws) == 5
    assert stream(7, "a").random() != stream(8, "a").random()


def test_spawn_key_documented_mapping():
    import hashlib
    word = int.from_bytes(hashlib.blake2b(b"converge", digest_size=4).digest(), "little")
    assert spawn_key("converge", 17) == (word, 17)
    ss = np.random.SeedSequence(5, spawn_key=(word, 17))
    assert np.random.Generator(np.random.PCG64(ss)).random() == stream(5, "converge", 17).random()


def test_rejects_negative_path():
    with pytest.raises(ValueError):
        stream(1, -1)
