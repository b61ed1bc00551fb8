"""Monte Carlo verification of SPRT error and stopping-time asymptotics.

Every simulation is split into fixed trial batches drawn from keyed random
streams (see :mod:`seqexp.workers`), so a seed and a plan determine every
estimate whatever the number of worker processes.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import reduce
from json import JSONDecodeError
from typing import Optional

import numpy as np
from marshmallow import (
    ValidationError,
    fields,
    post_load,
    validate,
    validates_schema,
)

from seqexp.config import DEFAULT_SEED
from seqexp.exceptions import DomainError, InvalidPlanError
from seqexp.exponents import (
    Constraint,
    finite_length_exponent,
    second_order_expectation,
    second_order_probabilistic,
)
from seqexp.models import Hypothesis, PairSchema
from seqexp.renewal import DEFAULT_TOL, constants_series
from seqexp.schema import Finite, SansNoneSchema
from seqexp.signals import point_flagged, simulation_warning
from seqexp.special import normal_cdf
from seqexp.sprt import (
    MAX_STEPS_FACTOR,
    Decision,
    Direction,
    SprtConfig,
    run_sprt_batch,
    thresholds_expectation,
    thresholds_probabilistic,
    wald_error_bounds,
)
from seqexp.stats import MonteCarloEstimate, RunningStats
from seqexp.workers import RandomStreams, map_batches

MIN_ERROR_EVENTS = 25
MIN_CONVERGENCE_EVENTS = 100
TRUNCATION_LIMIT = 1e-4
ADAPTIVE = 'adaptive'
ADAPTIVE_SCALE = 100.0
MAX_ADAPTIVE_TRIALS = 10_000_000
SIGMAS = 4.0
# 95% quantile of the Kolmogorov distribution
KS_SCALE = 1.358
STREAM_SPRT = 0
STREAM_PREFIX_MAX = 2
PLAN_COLUMNS = (
    'point_id', 'boundary_or_n', 'hypothesis', 'p10_hat', 'p10_stderr',
    'p01_hat', 'p01_stderr', 'et_hat', 'et_stderr', 'tail_hat',
    'truncated_frac',
)


def check_trials(trials):
    if int(trials) != trials or trials < 1:
        msg = f'trials must be a positive integer (got {trials})'
        raise DomainError(msg)


def adaptive_trials(boundary):
    """``100 e^boundary`` trials, enough for about 100 error events."""
    if boundary >= math.log(MAX_ADAPTIVE_TRIALS / ADAPTIVE_SCALE):
        return MAX_ADAPTIVE_TRIALS
    return max(1, math.ceil(ADAPTIVE_SCALE * math.exp(boundary)))


def error_threshold(cfg, hypothesis):
    return cfg.alpha if hypothesis == Hypothesis.H0 else cfg.beta


def warn(sender, msg, warnings=None, logger=None):
    (logger or logging.getLogger(__name__)).warning(msg)
    simulation_warning.send(sender, message=msg)
    if warnings is not None:
        warnings.append(msg)


@dataclass
class SprtTally:
    """Counts and stopping-time statistics of a block of SPRT runs."""

    trials: int = 0
    decided_h0: int = 0
    decided_h1: int = 0
    truncated: int = 0
    stop_times: RunningStats = field(default_factory=RunningStats)
    tails: tuple = ()
    levels: tuple = ()

    def merge(self, other):
        return SprtTally(
            trials=self.trials + other.trials,
            decided_h0=self.decided_h0 + other.decided_h0,
            decided_h1=self.decided_h1 + other.decided_h1,
            truncated=self.truncated + other.truncated,
            stop_times=self.stop_times.merge(other.stop_times),
            tails=tuple(a + b for a, b in zip(self.tails, other.tails)),
            levels=tuple(a + b for a, b in zip(self.levels, other.levels))
        )

    def errors(self, hypothesis):
        if Hypothesis(hypothesis) == Hypothesis.H0:
            return self.decided_h1
        return self.decided_h0

    def error_estimate(self, hypothesis):
        return MonteCarloEstimate.from_proportion(
            self.errors(hypothesis), self.trials
        )

    def decided_h0_estimate(self):
        return MonteCarloEstimate.from_proportion(self.decided_h0, self.trials)

    def stopping_estimate(self):
        return MonteCarloEstimate.from_stats(self.stop_times)

    def tail_estimate(self, i=0):
        return MonteCarloEstimate.from_proportion(self.tails[i], self.trials)

    def level_estimate(self, i=0):
        return MonteCarloEstimate.from_proportion(self.levels[i], self.trials)

    @property
    def truncated_frac(self):
        return self.truncated / self.trials if self.trials else 0.0


def sprt_tally_batch(pair, hypothesis, cfg, tail_ns, levels, rng, size):
    batch = run_sprt_batch(pair, hypothesis, cfg, rng, size)
    return SprtTally(
        trials=size,
        decided_h0=batch.count(Decision.H0),
        decided_h1=batch.count(Decision.H1),
        truncated=batch.count(Decision.TRUNCATED),
        stop_times=RunningStats.of(batch.stop_times),
        tails=tuple(
            int(np.count_nonzero(batch.stop_times > n)) for n in tail_ns
        ),
        levels=tuple(
            int(np.count_nonzero(batch.terminal_llrs >= lv)) for lv in levels
        )
    )


def simulate_sprt(
    pair, cfg, hypothesis, trials, streams, tail_ns=(), levels=(), workers=1,
    batch_trials=None, progress=None
):
    """Run ``trials`` SPRTs under ``hypothesis`` and tally the outcomes."""
    check_trials(trials)
    hypothesis = Hypothesis.parse(hypothesis)
    results = map_batches(
        sprt_tally_batch,
        (pair, hypothesis, cfg, tuple(tail_ns), tuple(levels)),
        streams,
        key=(STREAM_SPRT, hypothesis),
        trials=trials,
        batch_trials=batch_trials,
        workers=workers,
        progress=progress
    )
    return reduce(SprtTally.merge, results)


def estimate_error_probs(
    pair, cfg, hypothesis, trials, streams, workers=1, batch_trials=None,
    progress=None, logger=None
):
    """Fraction of runs deciding against ``hypothesis``.

    Truncated runs never count as errors; they are logged and signalled.
    """
    hypothesis = Hypothesis.parse(hypothesis)
    check_trials(trials)
    expected = trials * math.exp(-error_threshold(cfg, hypothesis))
    if expected < MIN_ERROR_EVENTS:
        msg = (
            f'At most {expected:.3g} error events expected under '
            f'{hypothesis.name}; the estimate is unreliable'
        )
        warn(pair, msg, logger=logger)
    tally = simulate_sprt(
        pair, cfg, hypothesis, trials, streams, workers=workers,
        batch_trials=batch_trials, progress=progress
    )
    if tally.truncated:
        msg = f'{tally.truncated} of {trials} runs truncated'
        warn(pair, msg, logger=logger)
    return tally.error_estimate(hypothesis)


@dataclass(frozen=True)
class StoppingEstimate:
    mean: MonteCarloEstimate
    tails: dict
    truncated_frac: float

    def tail_at(self, n):
        return self.tails[n]


def estimate_stopping(
    pair, cfg, hypothesis, trials, streams, tail_ns=(), workers=1,
    batch_trials=None, progress=None
):
    """Mean stopping time and the tails ``P(T > n)`` for each ``n``."""
    tail_ns = tuple(tail_ns)
    tally = simulate_sprt(
        pair, cfg, hypothesis, trials, streams, tail_ns=tail_ns,
        workers=workers, batch_trials=batch_trials, progress=progress
    )
    return StoppingEstimate(
        mean=tally.stopping_estimate(),
        tails={n: tally.tail_estimate(i) for i, n in enumerate(tail_ns)},
        truncated_frac=tally.truncated_frac
    )


@dataclass(frozen=True)
class ConvergenceRow:
    boundary: float
    hypothesis: Hypothesis
    trials: int
    normalized: MonteCarloEstimate
    target: float

    @property
    def relative_error(self):
        return abs(self.normalized.mean - self.target) / self.target

    def to_dict(self):
        return {
            'boundary': self.boundary,
            'hypothesis': self.hypothesis.name,
            'trials': self.trials,
            'normalized': self.normalized.mean,
            'normalized_stderr': self.normalized.stderr,
            'target': self.target,
            'relative_error': self.relative_error,
        }


@dataclass(frozen=True)
class ConvergenceTable:
    rows: list
    diverging: tuple = ()

    def final(self, hypothesis):
        return [r for r in self.rows if r.hypothesis == hypothesis][-1]


def check_error_convergence(
    pair, boundaries, trials=ADAPTIVE, streams=None, rc=None, workers=1,
    batch_trials=None, progress=None, logger=None
):
    """Normalized error probabilities against their renewal limits.

    With ``alpha = beta = b``, ``P10 e^b`` tends to ``e^B_tilde`` and
    ``P01 e^b`` to ``e^B``. Boundary ``i`` draws from stream point ``i``.
    """
    boundaries = list(boundaries)
    if any(b1 <= b0 for b0, b1 in zip(boundaries, boundaries[1:])):
        msg = 'Boundary schedule must be increasing'
        raise DomainError(msg)
    streams = streams or RandomStreams(seed=DEFAULT_SEED)
    rc = rc or constants_series(pair)
    ms = pair.moments()
    targets = {
        Hypothesis.H0: math.exp(rc.B_tilde),
        Hypothesis.H1: math.exp(rc.B),
    }
    rows = []
    for i, b in enumerate(boundaries):
        n = adaptive_trials(b) if trials == ADAPTIVE else trials
        check_trials(n)
        if n * math.exp(-b) < MIN_CONVERGENCE_EVENTS:
            msg = (
                f'Only {n * math.exp(-b):.3g} error events expected at '
                f'boundary {b:g}'
            )
            warn(pair, msg, logger=logger)
        cfg = SprtConfig.for_boundaries(b, b, ms)
        for hypothesis in Hypothesis:
            tally = simulate_sprt(
                pair, cfg, hypothesis, n, streams.for_point(i),
                workers=workers, batch_trials=batch_trials,
                progress=progress
            )
            rows.append(ConvergenceRow(
                boundary=b,
                hypothesis=hypothesis,
                trials=n,
                normalized=tally.error_estimate(hypothesis).scaled(
                    math.exp(b)
                ),
                target=targets[hypothesis]
            ))
    diverging = []
    for hypothesis in Hypothesis:
        hrows = [r for r in rows if r.hypothesis == hypothesis]
        gaps = [abs(r.normalized.mean - r.target) for r in hrows]
        if len(gaps) > 1:
            last = hrows[-1].normalized
            if gaps[-1] > min(gaps) + SIGMAS * last.stderr:
                diverging.append(hypothesis)
                msg = (
                    f'Normalized {hypothesis.name} error moves away from '
                    'its limit as the boundary grows'
                )
                warn(pair, msg, logger=logger)
    return ConvergenceTable(rows=rows, diverging=tuple(diverging))


@dataclass(frozen=True)
class RogozinResult:
    n: int
    trials: int
    sup_distance: float
    noise_floor: float

    @property
    def scaled(self):
        return self.sup_distance * math.sqrt(self.n)

    def to_dict(self):
        return {
            'n': self.n,
            'trials': self.trials,
            'sup_distance': self.sup_distance,
            'scaled': self.scaled,
            'noise_floor': self.noise_floor,
        }


def rogozin_grid(step=0.01, limit=4.0):
    count = int(round(2.0 * limit / step))
    return np.linspace(-limit, limit, count + 1)


def prefix_max_batch(pair, n, d0, v0, grid, rng, size):
    s = np.zeros(size)
    m = np.full(size, -np.inf)
    for _ in range(n):
        s += pair.sample_llr(Hypothesis.H0, rng, size=size)
        np.maximum(m, s, out=m)
    z = np.sort((m - n * d0) / math.sqrt(n * v0))
    return np.searchsorted(z, grid, side='right')


def check_rogozin(
    pair, n, trials, streams=None, grid_step=0.01, workers=1,
    batch_trials=None, progress=None
):
    """Sup distance between the standardized maximal sum and the normal law.

    Over a grid ``a`` in [-4, 4], compares the empirical law of
    ``(max_{k<=n} S_k - n D0) / sqrt(n V0)`` under H0 with ``Phi(a)``.
    """
    check_trials(trials)
    if int(n) != n or n < 1:
        msg = f'n must be a positive integer (got {n})'
        raise DomainError(msg)
    ms = pair.moments()
    if not ms.V0 > 0.0:
        msg = 'Maximal-sum check needs a positive LLR variance'
        raise DomainError(msg)
    streams = streams or RandomStreams(seed=DEFAULT_SEED)
    grid = rogozin_grid(grid_step)
    counts = map_batches(
        prefix_max_batch,
        (pair, int(n), ms.D0, ms.V0, grid),
        streams,
        key=(STREAM_PREFIX_MAX,),
        trials=trials,
        batch_trials=batch_trials,
        workers=workers,
        progress=progress
    )
    ecdf = reduce(np.add, counts) / trials
    phi = np.array([normal_cdf(a) for a in grid])
    return RogozinResult(
        n=int(n),
        trials=trials,
        sup_distance=float(np.max(np.abs(ecdf - phi))),
        noise_floor=KS_SCALE / math.sqrt(trials)
    )


@dataclass(frozen=True)
class ChangeOfMeasureResult:
    gamma: float
    lhs: MonteCarloEstimate
    rhs: MonteCarloEstimate

    @property
    def slack(self):
        return self.rhs.mean - self.lhs.mean

    @property
    def combined_stderr(self):
        return math.hypot(self.lhs.stderr, self.rhs.stderr)

    @property
    def holds(self):
        return self.lhs.mean <= self.rhs.mean + SIGMAS * self.combined_stderr

    def to_dict(self):
        return {
            'gamma': self.gamma,
            'lhs': self.lhs.mean,
            'lhs_stderr': self.lhs.stderr,
            'rhs': self.rhs.mean,
            'rhs_stderr': self.rhs.stderr,
            'slack': self.slack,
            'holds': self.holds,
        }


def check_change_of_measure(
    pair, cfg, gamma, trials, streams=None, workers=1, batch_trials=None,
    progress=None
):
    """Estimate both sides of ``P0(E) - gamma P1(E) <= P0(S_T >= log gamma)``.

    ``E`` is the event that the SPRT decides H0.
    """
    if not (gamma > 0.0 and math.isfinite(gamma)):
        msg = f'gamma must be positive and finite (got {gamma})'
        raise DomainError(msg)
    streams = streams or RandomStreams(seed=DEFAULT_SEED)
    kwargs = {
        'workers': workers, 'batch_trials': batch_trials,
        'progress': progress
    }
    h0 = simulate_sprt(
        pair, cfg, Hypothesis.H0, trials, streams,
        levels=(math.log(gamma),), **kwargs
    )
    h1 = simulate_sprt(pair, cfg, Hypothesis.H1, trials, streams, **kwargs)
    p0, p1 = h0.decided_h0_estimate(), h1.decided_h0_estimate()
    lhs = MonteCarloEstimate.from_mean(
        p0.mean - gamma * p1.mean,
        math.hypot(p0.stderr, gamma * p1.stderr),
        trials
    )
    return ChangeOfMeasureResult(gamma=gamma, lhs=lhs, rhs=h0.level_estimate())


@dataclass(frozen=True)
class LinearityFit:
    boundaries: tuple
    means: tuple
    slope: float
    slope_stderr: float
    intercept: float
    intercept_stderr: float
    curvature: Optional[float] = None
    curvature_stderr: Optional[float] = None

    @property
    def has_trend(self):
        if self.curvature is None:
            return False
        return abs(self.curvature) > SIGMAS * self.curvature_stderr


def fit_stopping_linearity(
    pair, boundaries, trials, streams=None, hypothesis=Hypothesis.H0,
    workers=1, batch_trials=None, progress=None
):
    """Weighted least-squares fit of the mean stopping time on the boundary.

    Runs ``alpha = beta = b`` for each boundary; under H0 the slope should
    approach 1/D0 and the intercept A/D0. A weighted quadratic term tests
    the residuals for a trend.
    """
    boundaries = tuple(boundaries)
    if len(boundaries) < 2:
        msg = 'Linearity fit needs at least two boundaries'
        raise DomainError(msg)
    hypothesis = Hypothesis.parse(hypothesis)
    streams = streams or RandomStreams(seed=DEFAULT_SEED)
    ms = pair.moments()
    means = []
    for i, b in enumerate(boundaries):
        cfg = SprtConfig.for_boundaries(b, b, ms)
        tally = simulate_sprt(
            pair, cfg, hypothesis, trials, streams.for_point(i),
            workers=workers, batch_trials=batch_trials, progress=progress
        )
        means.append(tally.stopping_estimate())
    x = np.array(boundaries, dtype=float)
    y = np.array([m.mean for m in means])
    w = 1.0 / np.maximum([m.stderr for m in means], 1e-9)
    (slope, intercept), cov = np.polyfit(x, y, 1, w=w, cov='unscaled')
    curvature = curvature_stderr = None
    if len(boundaries) > 2:
        coeffs, qcov = np.polyfit(x, y, 2, w=w, cov='unscaled')
        curvature = float(coeffs[0])
        curvature_stderr = float(math.sqrt(qcov[0, 0]))
    return LinearityFit(
        boundaries=boundaries,
        means=tuple(means),
        slope=float(slope),
        slope_stderr=float(math.sqrt(cov[0, 0])),
        intercept=float(intercept),
        intercept_stderr=float(math.sqrt(cov[1, 1])),
        curvature=curvature,
        curvature_stderr=curvature_stderr
    )


@dataclass(frozen=True)
class WaldCheck:
    p10: MonteCarloEstimate
    p01: MonteCarloEstimate
    p10_bound: float
    p01_bound: float

    @property
    def holds(self):
        return (
            self.p10.mean - SIGMAS * self.p10.stderr <= self.p10_bound and
            self.p01.mean - SIGMAS * self.p01.stderr <= self.p01_bound
        )


def check_wald_bound(
    pair, cfg, trials, streams=None, workers=1, batch_trials=None,
    progress=None
):
    streams = streams or RandomStreams(seed=DEFAULT_SEED)
    estimates = {
        h: simulate_sprt(
            pair, cfg, h, trials, streams, workers=workers,
            batch_trials=batch_trials, progress=progress
        ).error_estimate(h)
        for h in Hypothesis
    }
    bounds = wald_error_bounds(cfg)
    return WaldCheck(
        p10=estimates[Hypothesis.H0],
        p01=estimates[Hypothesis.H1],
        p10_bound=bounds.p10_bound,
        p01_bound=bounds.p01_bound
    )


def _empirical_exponent(ms, lam, n, p10, p01, constraint, eps=None):
    if p10.mean > 0.0 and p01.mean > 0.0:
        return finite_length_exponent(
            ms, lam, n, p10.mean, p01.mean, constraint, eps=eps
        ).second_order
    return None


@dataclass(frozen=True)
class AchievabilityCheck:
    """Simulated SPRT at constructed thresholds against its constraint."""

    constraint: Constraint
    n: int
    cfg: SprtConfig
    p10: MonteCarloEstimate
    p01: MonteCarloEstimate
    constrained: dict
    limit: float
    predicted: float
    empirical: Optional[float] = None

    @property
    def constraint_holds(self):
        if self.constraint == Constraint.PROBABILISTIC:
            return all(e.mean <= self.limit for e in self.constrained.values())
        return all(
            e.mean <= self.limit + SIGMAS * e.stderr
            for e in self.constrained.values()
        )

    @property
    def exponent_holds(self):
        """``-log P10 >= alpha - 1`` and ``-log P01 >= beta - 1``."""
        pairs = ((self.p10, self.cfg.alpha), (self.p01, self.cfg.beta))
        return all(
            p.mean == 0.0 or -math.log(p.mean) >= t - 1.0 for p, t in pairs
        )

    def to_dict(self):
        return {
            'constraint': self.constraint.value,
            'n': self.n,
            'alpha': self.cfg.alpha,
            'beta': self.cfg.beta,
            'p10_hat': self.p10.mean,
            'p10_stderr': self.p10.stderr,
            'p01_hat': self.p01.mean,
            'p01_stderr': self.p01.stderr,
            'constrained_h0': self.constrained[Hypothesis.H0].mean,
            'constrained_h1': self.constrained[Hypothesis.H1].mean,
            'limit': self.limit,
            'predicted': self.predicted,
            'empirical': self.empirical,
            'constraint_holds': self.constraint_holds,
            'exponent_holds': self.exponent_holds,
        }


def check_probabilistic_achievability(
    pair, n, eps, eta, trials, streams=None, lam=0.5, workers=1,
    batch_trials=None, progress=None
):
    """SPRT at probabilistic-constraint thresholds: tails ``P(T > n)``,
    error probabilities and the empirical finite-n exponent."""
    streams = streams or RandomStreams(seed=DEFAULT_SEED)
    ms = pair.moments()
    cfg = thresholds_probabilistic(ms, n, eps, eta)
    tallies = {
        h: simulate_sprt(
            pair, cfg, h, trials, streams, tail_ns=(n,), workers=workers,
            batch_trials=batch_trials, progress=progress
        )
        for h in Hypothesis
    }
    p10 = tallies[Hypothesis.H0].error_estimate(Hypothesis.H0)
    p01 = tallies[Hypothesis.H1].error_estimate(Hypothesis.H1)
    return AchievabilityCheck(
        constraint=Constraint.PROBABILISTIC,
        n=n,
        cfg=cfg,
        p10=p10,
        p01=p01,
        constrained={h: t.tail_estimate() for h, t in tallies.items()},
        limit=eps,
        predicted=second_order_probabilistic(ms, lam, eps).second_order,
        empirical=_empirical_exponent(
            ms, lam, n, p10, p01, Constraint.PROBABILISTIC, eps
        )
    )


def check_expectation_achievability(
    pair, rc, n, eta, trials, streams=None, lam=0.5, workers=1,
    batch_trials=None, progress=None
):
    """SPRT at expectation-constraint thresholds: mean stopping times,
    error probabilities and the empirical finite-n exponent."""
    streams = streams or RandomStreams(seed=DEFAULT_SEED)
    ms = pair.moments()
    cfg = thresholds_expectation(
        ms, rc.A, rc.A_tilde, n, eta, Direction.ACHIEVABILITY
    )
    tallies = {
        h: simulate_sprt(
            pair, cfg, h, trials, streams, workers=workers,
            batch_trials=batch_trials, progress=progress
        )
        for h in Hypothesis
    }
    p10 = tallies[Hypothesis.H0].error_estimate(Hypothesis.H0)
    p01 = tallies[Hypothesis.H1].error_estimate(Hypothesis.H1)
    return AchievabilityCheck(
        constraint=Constraint.EXPECTATION,
        n=n,
        cfg=cfg,
        p10=p10,
        p01=p01,
        constrained={h: t.stopping_estimate() for h, t in tallies.items()},
        limit=float(n),
        predicted=second_order_expectation(rc, lam).second_order,
        empirical=_empirical_exponent(
            ms, lam, n, p10, p01, Constraint.EXPECTATION
        )
    )


class TrialCount(fields.Field):
    """A positive trial count or the string ``adaptive``."""

    default_error_messages = {  # noqa: RUF012
        'invalid': 'Not a positive integer or "adaptive".'
    }

    def _deserialize(self, value, attr, data, **kwargs):
        if value == ADAPTIVE:
            return ADAPTIVE
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.make_error('invalid')
        if value < 1:
            raise self.make_error('invalid')
        return value


class PlanPointSchema(SansNoneSchema):
    alpha = Finite(validate=validate.Range(min=0, min_inclusive=False))
    beta = Finite(validate=validate.Range(min=0, min_inclusive=False))
    max_steps = fields.Integer(validate=validate.Range(min=1))
    n = fields.Integer(validate=validate.Range(min=1))
    eps = Finite(validate=validate.Range(
        min=0, max=1, min_inclusive=False, max_inclusive=False
    ))
    eta = Finite(validate=validate.Range(min=0))
    direction = fields.Enum(Direction, by_value=True)

    @validates_schema
    def validate_point_kind(self, data, **kwargs):
        raw = 'alpha' in data or 'beta' in data
        if raw and not ('alpha' in data and 'beta' in data):
            msg = 'Raw points need both alpha and beta'
            raise ValidationError(msg)
        if raw == ('n' in data):
            msg = 'A point is either raw (alpha, beta) or sized (n)'
            raise ValidationError(msg)
        if raw and ({'eps', 'eta', 'direction'} & set(data)):
            msg = 'Raw points take no eps, eta or direction'
            raise ValidationError(msg)
        if 'n' in data and 'eps' in data and 'direction' in data:
            msg = 'A sized point has either eps or direction, not both'
            raise ValidationError(msg)
        if 'n' in data and 'eps' not in data and 'eta' not in data:
            msg = 'Expectation points need eta'
            raise ValidationError(msg)

    @post_load
    def make_point(self, data, **kwargs):
        return PlanPoint(**data)


@dataclass(frozen=True)
class PlanPoint:
    """Raw ``(alpha, beta)`` thresholds or a sample size ``n`` whose
    thresholds follow the probabilistic (``eps``) or expectation
    constraint."""

    alpha: Optional[float] = None
    beta: Optional[float] = None
    max_steps: Optional[int] = None
    n: Optional[int] = None
    eps: Optional[float] = None
    eta: Optional[float] = None
    direction: Optional[Direction] = None

    @property
    def constraint(self):
        if self.n is None:
            return None
        if self.eps is not None:
            return Constraint.PROBABILISTIC
        return Constraint.EXPECTATION

    def resolve(self, ms, rc=None, max_steps_factor=MAX_STEPS_FACTOR):
        if self.constraint == Constraint.PROBABILISTIC:
            return thresholds_probabilistic(
                ms, self.n, self.eps, self.eta or 0.0, max_steps_factor
            )
        if self.constraint == Constraint.EXPECTATION:
            return thresholds_expectation(
                ms, rc.A, rc.A_tilde, self.n, self.eta,
                self.direction or Direction.ACHIEVABILITY, max_steps_factor
            )
        if self.max_steps is not None:
            return SprtConfig(self.alpha, self.beta, self.max_steps)
        return SprtConfig.for_boundaries(
            self.alpha, self.beta, ms, max_steps_factor
        )


class ExperimentPlanSchema(SansNoneSchema):
    pair = fields.Nested(PairSchema, required=True)
    points = fields.List(fields.Nested(PlanPointSchema), load_default=list)
    trials = TrialCount(load_default=None)
    seed = fields.Integer(
        load_default=None, validate=validate.Range(min=0, max=2 ** 64 - 1)
    )
    workers = fields.Integer(
        load_default=None, validate=validate.Range(min=1)
    )
    tol = Finite(
        load_default=None,
        validate=validate.Range(min=0, min_inclusive=False)
    )

    @post_load
    def make_plan(self, data, **kwargs):
        return ExperimentPlan(**data)


@dataclass(frozen=True)
class ExperimentPlan:
    pair: object
    points: list = field(default_factory=list)
    trials: object = None
    seed: Optional[int] = None
    workers: Optional[int] = None
    tol: Optional[float] = None

    @classmethod
    def from_dict(cls, d):
        try:
            return ExperimentPlanSchema().load(d)
        except ValidationError as e:
            raise InvalidPlanError(e.messages)

    @classmethod
    def from_json(cls, j):
        try:
            return ExperimentPlanSchema().loads(j)
        except JSONDecodeError as je:
            raise InvalidPlanError(je.msg)
        except ValidationError as ve:
            raise InvalidPlanError(ve.messages)


@dataclass(frozen=True)
class ResolvedPoint:
    index: int
    point: PlanPoint
    cfg: SprtConfig
    trials: dict

    def boundary_or_n(self, hypothesis):
        if self.point.n is not None:
            return self.point.n
        return error_threshold(self.cfg, hypothesis)


def resolve_points(
    plan, trials=None, tol=None, max_steps_factor=MAX_STEPS_FACTOR
):
    """Thresholds and per-hypothesis trial counts of every plan point."""
    trials = plan.trials or trials
    if trials is None:
        msg = 'Plan has no trial count'
        raise InvalidPlanError(msg)
    ms = plan.pair.moments()
    rc = None
    if any(p.constraint == Constraint.EXPECTATION for p in plan.points):
        rc = constants_series(plan.pair, tol=plan.tol or tol or DEFAULT_TOL)
    resolved = []
    for i, point in enumerate(plan.points):
        cfg = point.resolve(ms, rc, max_steps_factor)
        counts = {
            h: (
                adaptive_trials(error_threshold(cfg, h))
                if trials == ADAPTIVE else trials
            )
            for h in Hypothesis
        }
        resolved.append(ResolvedPoint(i, point, cfg, counts))
    return resolved


@dataclass(frozen=True)
class PlanRow:
    point_id: int
    boundary_or_n: float
    hypothesis: Hypothesis
    trials: int
    error: MonteCarloEstimate
    stopping: MonteCarloEstimate
    tail: Optional[MonteCarloEstimate]
    truncated_frac: float

    def to_dict(self):
        p10 = self.error if self.hypothesis == Hypothesis.H0 else None
        p01 = self.error if self.hypothesis == Hypothesis.H1 else None
        return {
            'point_id': self.point_id,
            'boundary_or_n': self.boundary_or_n,
            'hypothesis': self.hypothesis.name,
            'p10_hat': p10 and p10.mean,
            'p10_stderr': p10 and p10.stderr,
            'p01_hat': p01 and p01.mean,
            'p01_stderr': p01 and p01.stderr,
            'et_hat': self.stopping.mean,
            'et_stderr': self.stopping.stderr,
            'tail_hat': self.tail and self.tail.mean,
            'truncated_frac': self.truncated_frac,
        }


@dataclass
class PlanReport:
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    invalid_points: list = field(default_factory=list)

    @property
    def valid(self):
        return not self.invalid_points

    def to_dict(self):
        return {
            'rows': [r.to_dict() for r in self.rows],
            'warnings': list(self.warnings),
            'invalid_points': list(self.invalid_points),
        }


def run_plan(
    plan, trials=None, tol=None, workers=None, batch_trials=None,
    max_steps_factor=MAX_STEPS_FACTOR, progress=None, logger=None
):
    """Simulate every point of ``plan`` under both hypotheses.

    Point ``i`` draws from stream point ``i`` of the plan seed; points whose
    truncated fraction exceeds 1e-4 are listed as invalid.
    """
    logger = logger or logging.getLogger(__name__)
    seed = DEFAULT_SEED if plan.seed is None else plan.seed
    workers = workers or plan.workers or 1
    report = PlanReport()
    for rp in resolve_points(plan, trials, tol, max_steps_factor):
        streams = RandomStreams(seed=seed, point=rp.index)
        tail_ns = () if rp.point.n is None else (rp.point.n,)
        for hypothesis in Hypothesis:
            n = rp.trials[hypothesis]
            expected = n * math.exp(-error_threshold(rp.cfg, hypothesis))
            if expected < MIN_ERROR_EVENTS:
                msg = (
                    f'Point {rp.index} {hypothesis.name}: at most '
                    f'{expected:.3g} error events expected'
                )
                warn(plan, msg, report.warnings, logger)
            tally = simulate_sprt(
                plan.pair, rp.cfg, hypothesis, n, streams, tail_ns=tail_ns,
                workers=workers, batch_trials=batch_trials,
                progress=progress
            )
            report.rows.append(PlanRow(
                point_id=rp.index,
                boundary_or_n=rp.boundary_or_n(hypothesis),
                hypothesis=hypothesis,
                trials=n,
                error=tally.error_estimate(hypothesis),
                stopping=tally.stopping_estimate(),
                tail=tally.tail_estimate() if tail_ns else None,
                truncated_frac=tally.truncated_frac
            ))
            if (
                tally.truncated_frac > TRUNCATION_LIMIT and
                rp.index not in report.invalid_points
            ):
                report.invalid_points.append(rp.index)
                msg = (
                    f'Point {rp.index} invalid: {tally.truncated_frac:.3g} '
                    f'of {hypothesis.name} runs truncated'
                )
                warn(plan, msg, report.warnings, logger)
                point_flagged.send(plan, point=rp.index, message=msg)
    return report
