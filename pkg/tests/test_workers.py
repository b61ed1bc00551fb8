import numpy as np
import pytest
from seqexp.workers import (
    BATCH_TRIALS,
    RandomStreams,
    batch_sizes,
    map_batches,
)


def draw_batch(scale, rng, size):
    return scale * rng.standard_normal(size)


class Counter:
    def __init__(self):
        self.total = 0

    def next(self, n=1):
        self.total += n


def test_random_streams(seed):
    streams = RandomStreams(seed=seed)
    a = streams.generator(0, 1, 2).random(5)
    b = RandomStreams(seed=seed).generator(0, 1, 2).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, streams.generator(0, 1, 3).random(5))
    assert not np.array_equal(
        a, streams.for_point(1).generator(0, 1, 2).random(5)
    )
    assert streams.for_point(3).point == 3
    assert streams.for_point(3).seed == seed


def test_batch_sizes():
    assert batch_sizes(10_000, 4096) == [4096, 4096, 1808]
    assert batch_sizes(4096) == [BATCH_TRIALS]
    assert batch_sizes(5, 10) == [5]
    assert batch_sizes(0, 10) == []


def test_map_batches(streams):
    counter = Counter()
    results = map_batches(
        draw_batch, (2.0,), streams, key=(9,), trials=2500,
        batch_trials=1000, progress=counter
    )
    assert [len(r) for r in results] == [1000, 1000, 500]
    assert counter.total == 2500
    expected = 2.0 * streams.generator(9, 1).standard_normal(1000)
    assert np.array_equal(results[1], expected)


@pytest.mark.multi
def test_map_batches_workers(streams):
    kwargs = {'key': (4,), 'trials': 10_000, 'batch_trials': 1000}
    single = map_batches(draw_batch, (1.0,), streams, workers=1, **kwargs)
    multi = map_batches(draw_batch, (1.0,), streams, workers=4, **kwargs)
    assert len(single) == len(multi) == 10
    for a, b in zip(single, multi):
        assert np.array_equal(a, b)
