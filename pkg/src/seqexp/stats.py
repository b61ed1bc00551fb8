import math
from dataclasses import dataclass

import numpy as np
from marshmallow import fields

from seqexp.schema import SansNoneSchema, asdict_sans_none

Z95 = 1.96


class MonteCarloEstimateSchema(SansNoneSchema):
    mean = fields.Float(required=True, allow_nan=True)
    stderr = fields.Float(required=True, allow_nan=True)
    trials = fields.Integer(required=True)
    ci95_low = fields.Float(required=True, allow_nan=True)
    ci95_high = fields.Float(required=True, allow_nan=True)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    trials: int
    ci95_low: float
    ci95_high: float

    @classmethod
    def from_mean(cls, mean, stderr, trials):
        return cls(
            mean=mean,
            stderr=stderr,
            trials=trials,
            ci95_low=mean - Z95 * stderr,
            ci95_high=mean + Z95 * stderr
        )

    @classmethod
    def from_proportion(cls, successes, trials):
        p = successes / trials
        return cls.from_mean(p, math.sqrt(p * (1.0 - p) / trials), trials)

    @classmethod
    def from_stats(cls, stats):
        return cls.from_mean(stats.mean, stats.sem, stats.count)

    def scaled(self, factor):
        return self.from_mean(
            self.mean * factor, self.stderr * abs(factor), self.trials
        )

    def within(self, target, sigmas=4.0, slack=0.0):
        return abs(self.mean - target) <= sigmas * self.stderr + slack

    def to_dict(self):
        return asdict_sans_none(self)


@dataclass
class RunningStats:
    """Count, mean and centered sum of squares of a sample.

    Partial results combine with :meth:`merge`; merging in a fixed order
    gives bit-identical totals.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return cls()
        mean = float(values.mean())
        return cls(
            count=int(values.size),
            mean=mean,
            m2=float(np.sum((values - mean) ** 2))
        )

    def merge(self, other):
        if other.count == 0:
            return RunningStats(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningStats(other.count, other.mean, other.m2)
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / count
        m2 = (
            self.m2 + other.m2 +
            delta * delta * self.count * other.count / count
        )
        return RunningStats(count, mean, m2)

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std(self):
        return math.sqrt(self.variance)

    @property
    def sem(self):
        return self.std / math.sqrt(self.count) if self.count else math.nan
