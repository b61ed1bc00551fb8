import multiprocessing
from dataclasses import dataclass, replace

import numpy as np

BATCH_TRIALS = 4096


@dataclass(frozen=True)
class RandomStreams:
    """Counter-based random streams keyed by (seed, point, *key).

    Every batch of trials gets its own Philox generator, so results depend
    on the key layout and never on which worker draws them.
    """

    seed: int
    point: int = 0

    def generator(self, *key):
        ss = np.random.SeedSequence(
            self.seed, spawn_key=(self.point, *(int(k) for k in key))
        )
        return np.random.Generator(np.random.Philox(ss))

    def for_point(self, point):
        return replace(self, point=point)


def batch_sizes(trials, batch_trials=None):
    batch_trials = batch_trials or BATCH_TRIALS
    full, rest = divmod(trials, batch_trials)
    return [batch_trials] * full + ([rest] if rest else [])


def work_generator(func, args, streams, key, trials, batch_trials):
    for i, size in enumerate(batch_sizes(trials, batch_trials)):
        yield (func, args, streams, (*key, i), size)


def run_work(w):
    func, args, streams, key, size = w
    return func(*args, rng=streams.generator(*key), size=size), size


def map_batches(
    func, args, streams, key=(), trials=1, batch_trials=None, workers=1,
    progress=None
):
    """Run ``func(*args, rng=..., size=...)`` over all trial batches.

    Results come back in batch order whatever the worker count.
    """
    progress_next = progress.next if progress else lambda n=1: None
    work = work_generator(func, args, streams, key, trials, batch_trials)
    results = []
    if workers and workers > 1:
        with multiprocessing.Pool(workers) as p:
            for (result, n) in p.imap(run_work, work):
                progress_next(n=n)
                results.append(result)
        p.join()
    else:
        for w in work:
            result, n = run_work(w)
            progress_next(n=n)
            results.append(result)
    return results
