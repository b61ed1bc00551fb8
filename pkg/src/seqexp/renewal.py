"""Renewal-theory constants of a hypothesis pair.

``A`` and ``A_tilde`` are the limiting mean overshoots of the LLR random
walk over a far upper boundary under H0 and a far lower boundary under H1;
``B`` and ``B_tilde`` are the logs of the limiting Laplace transforms
``E[exp(-R)]``. They are evaluated from their ladder series when the pair
has closed-form k-step functionals, and estimated by simulating first
passages otherwise.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Optional

import numpy as np
from marshmallow import fields

from seqexp.exceptions import (
    ArithmeticPairError,
    DomainError,
    SimulationError,
    ToleranceNotReachedError,
    UnsupportedPairError,
)
from seqexp.models import Hypothesis
from seqexp.schema import SansNoneSchema, asdict_sans_none
from seqexp.signals import simulation_warning
from seqexp.sprt import MAX_STEPS_FACTOR, MIN_MAX_STEPS
from seqexp.stats import (
    MonteCarloEstimate,
    MonteCarloEstimateSchema,
    RunningStats,
)
from seqexp.workers import RandomStreams, map_batches

DEFAULT_TOL = 1e-8
MAX_SERIES_TERMS = 100_000
DECAY_WINDOW = 10
OVERSHOOT_SCALE = 100.0
MIN_SCALED_BOUNDARY = 10.0
STREAM_OVERSHOOT = 1
CONSTANT_NAMES = ('A', 'A_tilde', 'B', 'B_tilde')


class SeriesEstimateSchema(SansNoneSchema):
    value = fields.Float(required=True)
    terms_used = fields.Integer(required=True)
    tail_bound = fields.Float(required=True)


class RenewalConstantsSchema(SansNoneSchema):
    A = fields.Float(required=True)
    A_tilde = fields.Float(required=True)
    B = fields.Float(required=True)
    B_tilde = fields.Float(required=True)
    series = fields.Dict(
        keys=fields.String(), values=fields.Nested(SeriesEstimateSchema)
    )


@dataclass(frozen=True)
class SeriesEstimate:
    value: float
    terms_used: int
    tail_bound: float

    def to_dict(self):
        return asdict_sans_none(self)


@dataclass(frozen=True)
class RenewalConstants:
    A: float
    A_tilde: float
    B: float
    B_tilde: float
    series: Optional[dict] = field(default=None, compare=False)

    @property
    def sum_type_ii(self):
        return self.A + self.B

    @property
    def sum_type_i(self):
        return self.A_tilde + self.B_tilde

    def tail_bound(self, name):
        if not self.series:
            return 0.0
        return self.series[name].tail_bound

    def to_dict(self):
        return RenewalConstantsSchema().dump(self)

    def to_json(self):
        return RenewalConstantsSchema().dumps(self)


class _GeometricTail:
    """Running sum of a nonnegative series with a geometric tail majorant.

    The decay ratio is fitted over the last ``DECAY_WINDOW`` terms; the sum
    is complete once the latest term falls below ``tol * (1 - r)``, which
    bounds the remainder ``term * r / (1 - r)`` below ``tol``.
    """

    def __init__(self, tol):
        self.tol = tol
        self.terms = []
        self.done = False
        self.tail_bound = math.inf

    def add(self, term):
        if self.done:
            return
        self.terms.append(term)
        if term == 0.0:
            self.done, self.tail_bound = True, 0.0
            return
        if len(self.terms) < DECAY_WINDOW:
            return
        first = self.terms[-DECAY_WINDOW]
        if not first > 0.0:
            return
        r = (term / first) ** (1.0 / (DECAY_WINDOW - 1))
        if r < 1.0 and term < self.tol * (1.0 - r):
            self.done = True
            self.tail_bound = term * r / (1.0 - r)

    @property
    def count(self):
        return len(self.terms)

    @property
    def total(self):
        return math.fsum(self.terms)


def check_series_pair(pair):
    if not pair.is_nonarithmetic:
        msg = (
            'Renewal constants require a non-arithmetic LLR; '
            'the arithmetic case is not supported'
        )
        raise ArithmeticPairError(msg)
    if not pair.has_functionals:
        msg = (
            f'{pair.kind} pairs have no closed-form k-step functionals; '
            'use the overshoot simulation instead'
        )
        raise UnsupportedPairError(msg)


def constants_series(pair, tol=DEFAULT_TOL, max_terms=MAX_SERIES_TERMS):
    """Evaluate A, A_tilde, B and B_tilde from their ladder series.

    B and B_tilde share one series and differ by ``log(D1 / D0)``.
    """
    check_series_pair(pair)
    if not tol > 0.0:
        msg = f'tol must be positive (got {tol})'
        raise DomainError(msg)
    ms = pair.moments()
    neg, pos, sign = (_GeometricTail(tol) for _ in range(3))
    k = 0
    while not (neg.done and pos.done and sign.done):
        if k >= max_terms:
            msg = (
                f'Series did not reach tol={tol:g} within {max_terms} terms '
                '(slowly decaying or degenerate pair)'
            )
            raise ToleranceNotReachedError(msg)
        k += 1
        f = pair.k_step_functionals(k)
        neg.add(f.neg_part_H0 / k)
        pos.add(f.pos_part_H1 / k)
        sign.add(f.p_sign / k)
    logger = logging.getLogger(__name__)
    logger.debug(
        f'Series converged: {neg.count}/{pos.count}/{sign.count} terms'
    )
    series = {
        'A': SeriesEstimate(
            value=ms.E2_0 / (2.0 * ms.D0) - neg.total,
            terms_used=neg.count,
            tail_bound=neg.tail_bound
        ),
        'A_tilde': SeriesEstimate(
            value=ms.E2_1 / (2.0 * ms.D1) - pos.total,
            terms_used=pos.count,
            tail_bound=pos.tail_bound
        ),
        'B': SeriesEstimate(
            value=-math.log(ms.D0) - sign.total,
            terms_used=sign.count,
            tail_bound=sign.tail_bound
        ),
        'B_tilde': SeriesEstimate(
            value=-math.log(ms.D1) - sign.total,
            terms_used=sign.count,
            tail_bound=sign.tail_bound
        ),
    }
    return RenewalConstants(
        **{name: s.value for name, s in series.items()}, series=series
    )


@dataclass
class OvershootTally:
    overshoot: RunningStats = field(default_factory=RunningStats)
    laplace: RunningStats = field(default_factory=RunningStats)
    truncated: int = 0

    def merge(self, other):
        return OvershootTally(
            overshoot=self.overshoot.merge(other.overshoot),
            laplace=self.laplace.merge(other.laplace),
            truncated=self.truncated + other.truncated
        )


def first_passage_batch(pair, hypothesis, boundary, max_steps, rng, size):
    """Overshoots of ``size`` one-sided first passages over ``boundary``.

    Under H0 the walk is stopped at the first S_n > boundary and the
    overshoot is S_T - boundary; under H1 at the first S_n < -boundary with
    overshoot -S_T - boundary.
    """
    hypothesis = Hypothesis.parse(hypothesis)
    sign = 1.0 if hypothesis == Hypothesis.H0 else -1.0
    s = np.zeros(size)
    crossed = np.zeros(size, dtype=bool)
    active = np.arange(size)
    for _ in range(max_steps):
        if active.size == 0:
            break
        s[active] += sign * pair.sample_llr(
            hypothesis, rng, size=active.size
        )
        done = s[active] > boundary
        crossed[active[done]] = True
        active = active[~done]
    r = s[crossed] - boundary
    return OvershootTally(
        overshoot=RunningStats.of(r),
        laplace=RunningStats.of(np.exp(-r)),
        truncated=int(size - np.count_nonzero(crossed))
    )


def _log_estimate(stats):
    m = stats.mean
    return MonteCarloEstimate.from_mean(
        math.log(m), stats.sem / m, stats.count
    )


class OvershootEstimatesSchema(SansNoneSchema):
    A = fields.Nested(MonteCarloEstimateSchema, required=True)
    A_tilde = fields.Nested(MonteCarloEstimateSchema, required=True)
    B = fields.Nested(MonteCarloEstimateSchema, required=True)
    B_tilde = fields.Nested(MonteCarloEstimateSchema, required=True)
    boundary = fields.Float(required=True)
    truncated = fields.Integer(required=True)


@dataclass(frozen=True)
class OvershootEstimates:
    A: MonteCarloEstimate
    A_tilde: MonteCarloEstimate
    B: MonteCarloEstimate
    B_tilde: MonteCarloEstimate
    boundary: float
    truncated: int = 0

    def estimate(self, name):
        return getattr(self, name)

    def as_constants(self):
        return RenewalConstants(
            **{name: self.estimate(name).mean for name in CONSTANT_NAMES}
        )

    def to_dict(self):
        return OvershootEstimatesSchema().dump(self)


def default_boundary(ms):
    return OVERSHOOT_SCALE / min(ms.D0, ms.D1)


def constants_overshoot_mc(
    pair, boundary=None, trials=100_000, streams=None, workers=1,
    batch_trials=None, max_steps_factor=MAX_STEPS_FACTOR, progress=None,
    logger=None
):
    """Estimate the renewal constants from simulated first passages.

    Returns an :class:`OvershootEstimates`; the standard errors of the B
    estimates come from the delta method on ``log mean(exp(-R))``.
    """
    logger = logger or logging.getLogger(__name__)
    if not pair.can_sample:
        msg = f'Cannot simulate a {pair.kind} pair without a sampler'
        raise UnsupportedPairError(msg)
    ms = pair.moments()
    boundary = default_boundary(ms) if boundary is None else boundary
    streams = streams or RandomStreams(seed=0)
    if boundary * min(ms.D0, ms.D1) < MIN_SCALED_BOUNDARY:
        msg = (
            f'Overshoot boundary {boundary:g} is small relative to the '
            'drift; estimates may be pre-asymptotic'
        )
        logger.warning(msg)
        simulation_warning.send(pair, message=msg)
    tallies = {}
    for hypothesis, d in ((Hypothesis.H0, ms.D0), (Hypothesis.H1, ms.D1)):
        max_steps = max(
            MIN_MAX_STEPS, math.ceil(max_steps_factor * boundary / d)
        )
        results = map_batches(
            first_passage_batch,
            (pair, hypothesis, boundary, max_steps),
            streams,
            key=(STREAM_OVERSHOOT, hypothesis),
            trials=trials,
            batch_trials=batch_trials,
            workers=workers,
            progress=progress
        )
        tallies[hypothesis] = reduce(
            OvershootTally.merge, results, OvershootTally()
        )
    for hypothesis, tally in tallies.items():
        if tally.overshoot.count == 0:
            msg = (
                f'No first passage over {boundary:g} completed under '
                f'{hypothesis.name}'
            )
            raise SimulationError(msg)
    truncated = sum(t.truncated for t in tallies.values())
    if truncated:
        msg = f'{truncated} first passages hit the step cap'
        logger.warning(msg)
        simulation_warning.send(pair, message=msg)
    h0, h1 = tallies[Hypothesis.H0], tallies[Hypothesis.H1]
    return OvershootEstimates(
        A=MonteCarloEstimate.from_stats(h0.overshoot),
        A_tilde=MonteCarloEstimate.from_stats(h1.overshoot),
        B=_log_estimate(h0.laplace),
        B_tilde=_log_estimate(h1.laplace),
        boundary=boundary,
        truncated=truncated
    )


class ConstantAgreementSchema(SansNoneSchema):
    name = fields.String()
    series = fields.Float()
    mc = fields.Float()
    stderr = fields.Float()
    tail_bound = fields.Float()
    difference = fields.Float()
    allowed = fields.Float()
    agrees = fields.Boolean()


@dataclass(frozen=True)
class ConstantAgreement:
    name: str
    series: float
    mc: float
    stderr: float
    tail_bound: float
    difference: float
    allowed: float
    agrees: bool

    def to_dict(self):
        return ConstantAgreementSchema().dump(self)


def compare_constants(series, mc, sigmas=4.0):
    """Series against simulated constants, one row per constant.

    A row agrees when the gap is within ``sigmas`` standard errors plus the
    series tail bound.
    """
    rows = []
    for name in CONSTANT_NAMES:
        est = mc.estimate(name)
        value = getattr(series, name)
        tail = series.tail_bound(name)
        difference = abs(value - est.mean)
        allowed = sigmas * est.stderr + tail
        rows.append(ConstantAgreement(
            name=name,
            series=value,
            mc=est.mean,
            stderr=est.stderr,
            tail_bound=tail,
            difference=difference,
            allowed=allowed,
            agrees=difference <= allowed
        ))
    return rows
