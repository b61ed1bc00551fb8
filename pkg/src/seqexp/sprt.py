import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from seqexp.exceptions import DomainError, InvalidThresholdError
from seqexp.models import Hypothesis
from seqexp.schema import asdict_sans_none
from seqexp.special import normal_quantile

MAX_STEPS_FACTOR = 50
MIN_MAX_STEPS = 100


class Decision(enum.IntEnum):
    H0 = 0
    H1 = 1
    TRUNCATED = 2


class Direction(str, enum.Enum):
    ACHIEVABILITY = 'achievability'
    CONVERSE = 'converse'


@dataclass(frozen=True)
class SprtConfig:
    """Stop when S_n leaves [-alpha, beta]; give up after max_steps."""

    alpha: float
    beta: float
    max_steps: int

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            msg = f'alpha must be positive and finite (got {self.alpha})'
            raise InvalidThresholdError(msg)
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            msg = f'beta must be positive and finite (got {self.beta})'
            raise InvalidThresholdError(msg)
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            msg = f'max_steps must be a positive integer ({self.max_steps})'
            raise InvalidThresholdError(msg)

    @classmethod
    def for_boundaries(cls, alpha, beta, ms, factor=MAX_STEPS_FACTOR):
        expected = max(beta / ms.D0, alpha / ms.D1)
        max_steps = max(MIN_MAX_STEPS, math.ceil(factor * expected))
        return cls(alpha=alpha, beta=beta, max_steps=max_steps)

    def to_dict(self):
        return asdict_sans_none(self)


@dataclass(frozen=True)
class SprtOutcome:
    decision: Decision
    stop_time: int
    terminal_llr: float
    overshoot: float
    trace: Optional[tuple] = field(default=None, repr=False)


@dataclass(frozen=True)
class WaldBounds:
    p10_bound: float
    p01_bound: float


def overshoot(decision, terminal_llr, cfg):
    if decision == Decision.H0:
        return terminal_llr - cfg.beta
    if decision == Decision.H1:
        return -terminal_llr - cfg.alpha
    return 0.0


def run_sprt(pair, hypothesis, cfg, rng, trace=False):
    """Run one SPRT to its stopping time.

    Ties with a boundary keep sampling; a run that never leaves the
    continuation interval is reported as ``Decision.TRUNCATED``.
    """
    hypothesis = Hypothesis.parse(hypothesis)
    path = [] if trace else None
    s = 0.0
    decision = Decision.TRUNCATED
    step = 0
    while step < cfg.max_steps:
        step += 1
        s += float(pair.sample_llr(hypothesis, rng))
        if path is not None:
            path.append(s)
        if s > cfg.beta:
            decision = Decision.H0
            break
        if s < -cfg.alpha:
            decision = Decision.H1
            break
    return SprtOutcome(
        decision=decision,
        stop_time=step,
        terminal_llr=s,
        overshoot=overshoot(decision, s, cfg),
        trace=tuple(path) if path is not None else None
    )


@dataclass
class SprtBatch:
    cfg: SprtConfig
    decisions: np.ndarray
    stop_times: np.ndarray
    terminal_llrs: np.ndarray

    @property
    def size(self):
        return len(self.decisions)

    def count(self, decision):
        return int(np.count_nonzero(self.decisions == decision))

    def overshoots(self):
        out = np.zeros(self.size)
        up = self.decisions == Decision.H0
        down = self.decisions == Decision.H1
        out[up] = self.terminal_llrs[up] - self.cfg.beta
        out[down] = -self.terminal_llrs[down] - self.cfg.alpha
        return out

    def outcome(self, i):
        decision = Decision(int(self.decisions[i]))
        s = float(self.terminal_llrs[i])
        return SprtOutcome(
            decision=decision,
            stop_time=int(self.stop_times[i]),
            terminal_llr=s,
            overshoot=overshoot(decision, s, self.cfg)
        )


def run_sprt_batch(pair, hypothesis, cfg, rng, size):
    """Run ``size`` independent SPRTs side by side.

    Only still-running trials draw an increment at each step, so the
    per-trial law is that of :func:`run_sprt`.
    """
    hypothesis = Hypothesis.parse(hypothesis)
    s = np.zeros(size)
    stop_times = np.full(size, cfg.max_steps, dtype=np.int64)
    decisions = np.full(size, Decision.TRUNCATED, dtype=np.int8)
    active = np.arange(size)
    for step in range(1, cfg.max_steps + 1):
        if active.size == 0:
            break
        s[active] += pair.sample_llr(hypothesis, rng, size=active.size)
        current = s[active]
        up = current > cfg.beta
        down = current < -cfg.alpha
        done = up | down
        stop_times[active[done]] = step
        decisions[active[up]] = Decision.H0
        decisions[active[down]] = Decision.H1
        active = active[~done]
    return SprtBatch(
        cfg=cfg,
        decisions=decisions,
        stop_times=stop_times,
        terminal_llrs=s
    )


def thresholds_probabilistic(
    ms, n, eps, eta=0.0, max_steps_factor=MAX_STEPS_FACTOR
):
    """Thresholds meeting max_i P_i(T > n) <= eps for large n.

    alpha_n = n D1 - sqrt(n) c0 and beta_n = n D0 - sqrt(n) c1 with
    c0 = -sqrt(V1) Phi^-1(eps - eta) and c1 = -sqrt(V0) Phi^-1(eps - eta).
    """
    if int(n) != n or n < 1:
        msg = f'n must be a positive integer (got {n})'
        raise DomainError(msg)
    if not 0.0 < eps < 1.0:
        msg = f'eps must lie in (0, 1) (got {eps})'
        raise DomainError(msg)
    if not 0.0 <= eta < eps:
        msg = f'eta must lie in [0, eps) (got {eta})'
        raise DomainError(msg)
    q = normal_quantile(eps - eta)
    c0 = -math.sqrt(ms.V1) * q
    c1 = -math.sqrt(ms.V0) * q
    root_n = math.sqrt(n)
    return SprtConfig(
        alpha=n * (ms.D1 - c0 / root_n),
        beta=n * (ms.D0 - c1 / root_n),
        max_steps=max_steps_factor * n
    )


def thresholds_expectation(
    ms, A, A_tilde, n, eta, direction=Direction.ACHIEVABILITY,
    max_steps_factor=MAX_STEPS_FACTOR
):
    """Thresholds meeting max_i E_i[T] <= n (achievability) or just above it.

    alpha_n = n D1 - A_tilde -/+ eta D1 and beta_n = n D0 - A -/+ eta D0,
    with the minus sign for achievability and plus for the converse.
    """
    if int(n) != n or n < 1:
        msg = f'n must be a positive integer (got {n})'
        raise DomainError(msg)
    sign = -1.0 if Direction(direction) == Direction.ACHIEVABILITY else 1.0
    alpha = n * ms.D1 - A_tilde + sign * eta * ms.D1
    beta = n * ms.D0 - A + sign * eta * ms.D0
    if alpha <= 0.0 or beta <= 0.0:
        msg = (
            f'n={n} too small for expectation thresholds '
            f'(alpha={alpha:.6g}, beta={beta:.6g})'
        )
        raise InvalidThresholdError(msg)
    return SprtConfig(
        alpha=alpha, beta=beta, max_steps=max_steps_factor * n
    )


def wald_error_bounds(cfg):
    return WaldBounds(
        p10_bound=math.exp(-cfg.alpha), p01_bound=math.exp(-cfg.beta)
    )
