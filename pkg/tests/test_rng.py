"""Stream derivation: purity, independence across keys, prefix stability."""

import numpy as np

from smalljumps import rng


def test_streams_are_pure():
    a = rng.stream(42, 7, rng.STREAM_NORMALS).standard_normal(16)
    b = rng.stream(42, 7, rng.STREAM_NORMALS).standard_normal(16)
    assert np.array_equal(a, b)


def test_key_coordinates_separate_streams():
    base = rng.stream(1, 2, rng.STREAM_MARKS).random(8)
    for other in (rng.stream(2, 2, rng.STREAM_MARKS),
                  rng.stream(1, 3, rng.STREAM_MARKS),
                  rng.stream(1, 2, rng.STREAM_SPLITS),
                  rng.stream(1, 2, rng.STREAM_MARKS, (rng.INDEPENDENT_PAIR,)),
                  rng.stream(1, 2, rng.STREAM_MARKS, (rng.EXTENSION, 0))):
        assert not np.array_equal(base, other.random(8))


def test_vectorised_draws_fill_sequentially():
    # a shorter request is a prefix of a longer one; band-ordered sampling
    # relies on this to make extended runs reuse coarse-run draws
    long = rng.stream(5, 0, rng.STREAM_JUMPS).random(32)
    short = rng.stream(5, 0, rng.STREAM_JUMPS).random(10)
    assert np.array_equal(long[:10], short)
    n_long = rng.stream(5, 0, rng.STREAM_NORMALS).standard_normal(32)
    n_short = rng.stream(5, 0, rng.STREAM_NORMALS).standard_normal(10)
    assert np.array_equal(n_long[:10], n_short)


def test_known_draws_regression():
    # frozen values pin the Philox keying; a change here silently breaks
    # reproducibility of every archived run
    got = rng.stream(0, 0, rng.STREAM_NORMALS).standard_normal(3)
    assert np.allclose(got, [-0.21512457625014833, 0.8502692095559023,
                             -2.3115536580416025], rtol=0, atol=0)
    got = rng.stream(0, 0, rng.STREAM_JUMPS).random(3)
    assert np.allclose(got, [0.810243512110891, 0.5461260857686415,
                             0.4817011004763435], rtol=0, atol=0)
    got = rng.stream(7, 12, rng.STREAM_MARKS, (3,)).random(2)
    assert np.allclose(got, [0.4961524101347269, 0.04244542411452734],
                       rtol=0, atol=0)
