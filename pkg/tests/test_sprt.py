import math

import numpy as np
import pytest
from seqexp.exceptions import DomainError, InvalidThresholdError
from seqexp.models import Hypothesis
from seqexp.special import normal_quantile
from seqexp.sprt import (
    MIN_MAX_STEPS,
    Decision,
    Direction,
    SprtConfig,
    run_sprt,
    run_sprt_batch,
    thresholds_expectation,
    thresholds_probabilistic,
    wald_error_bounds,
)

TINY = 1e-9


@pytest.mark.parametrize('args', [
    (0.0, 1.0, 10),
    (1.0, -1.0, 10),
    (math.inf, 1.0, 10),
    (1.0, math.nan, 10),
    (1.0, 1.0, 0),
    (1.0, 1.0, 2.5),
])
def test_sprt_config_invalid(args):
    with pytest.raises(InvalidThresholdError):
        SprtConfig(*args)


def test_sprt_config_for_boundaries(gaussian):
    ms = gaussian.moments()
    assert SprtConfig.for_boundaries(10.0, 10.0, ms).max_steps == 1000
    assert SprtConfig.for_boundaries(0.1, 0.1, ms).max_steps == MIN_MAX_STEPS
    cfg = SprtConfig(alpha=2.0, beta=3.0, max_steps=7)
    assert cfg.to_dict() == {'alpha': 2.0, 'beta': 3.0, 'max_steps': 7}


def test_run_sprt_tiny_thresholds(pair, rng):
    cfg = SprtConfig(alpha=TINY, beta=TINY, max_steps=100)
    for _ in range(100):
        outcome = run_sprt(pair, Hypothesis.H0, cfg, rng)
        assert outcome.stop_time == 1
        assert outcome.decision in (Decision.H0, Decision.H1)
        assert outcome.overshoot >= 0.0


def test_run_sprt_exit(pair, rng):
    cfg = SprtConfig(alpha=3.0, beta=3.0, max_steps=10_000)
    for hypothesis in Hypothesis:
        for _ in range(200):
            outcome = run_sprt(pair, hypothesis, cfg, rng, trace=True)
            assert len(outcome.trace) == outcome.stop_time
            assert outcome.trace[-1] == outcome.terminal_llr
            for s in outcome.trace[:-1]:
                assert -cfg.alpha <= s <= cfg.beta
            if outcome.decision == Decision.H0:
                assert outcome.terminal_llr > cfg.beta
                assert outcome.overshoot == outcome.terminal_llr - cfg.beta
            else:
                assert outcome.decision == Decision.H1
                assert outcome.terminal_llr < -cfg.alpha
                assert outcome.overshoot == -outcome.terminal_llr - cfg.alpha


def test_run_sprt_truncated(gaussian, rng):
    cfg = SprtConfig(alpha=50.0, beta=50.0, max_steps=1)
    outcome = run_sprt(gaussian, 'h1', cfg, rng)
    assert outcome.decision == Decision.TRUNCATED
    assert outcome.stop_time == 1
    assert outcome.overshoot == 0.0
    assert outcome.trace is None


def test_run_sprt_batch(pair, rng):
    cfg = SprtConfig(alpha=3.0, beta=4.0, max_steps=10_000)
    for hypothesis in Hypothesis:
        batch = run_sprt_batch(pair, hypothesis, cfg, rng, 5000)
        assert batch.size == 5000
        assert batch.count(Decision.TRUNCATED) == 0
        up = batch.decisions == Decision.H0
        down = batch.decisions == Decision.H1
        assert np.all(up | down)
        assert np.all(batch.terminal_llrs[up] > cfg.beta)
        assert np.all(batch.terminal_llrs[down] < -cfg.alpha)
        assert np.all(batch.stop_times >= 1)
        assert np.all(batch.overshoots() >= 0.0)
        outcome = batch.outcome(0)
        assert outcome.stop_time == batch.stop_times[0]
        assert outcome.overshoot == batch.overshoots()[0]


def test_run_sprt_batch_matches_scalar(gaussian, rng):
    cfg = SprtConfig(alpha=3.0, beta=3.0, max_steps=10_000)
    batch = run_sprt_batch(gaussian, Hypothesis.H0, cfg, rng, 4000)
    scalar = np.array([
        run_sprt(gaussian, Hypothesis.H0, cfg, rng).stop_time
        for _ in range(4000)
    ])
    se = math.hypot(
        batch.stop_times.std(ddof=1) / math.sqrt(4000),
        scalar.std(ddof=1) / math.sqrt(4000)
    )
    assert abs(batch.stop_times.mean() - scalar.mean()) <= 5.0 * se


def test_run_sprt_batch_truncated(gaussian, rng):
    cfg = SprtConfig(alpha=50.0, beta=50.0, max_steps=1)
    batch = run_sprt_batch(gaussian, Hypothesis.H0, cfg, rng, 100)
    assert batch.count(Decision.TRUNCATED) == 100
    assert np.all(batch.stop_times == 1)
    assert np.all(np.abs(batch.terminal_llrs) <= 50.0)
    assert np.all(batch.overshoots() == 0.0)


def test_thresholds_probabilistic(gaussian, exponential):
    cfg = thresholds_probabilistic(gaussian.moments(), 100, 0.2)
    expected = 50.0 + 10.0 * normal_quantile(0.2)
    assert cfg.alpha == pytest.approx(41.58379, abs=1e-4)
    assert cfg.alpha == pytest.approx(expected, rel=1e-12)
    assert cfg.beta == pytest.approx(expected, rel=1e-12)
    assert cfg.max_steps == 5000
    ms = exponential.moments()
    half = thresholds_probabilistic(ms, 100, 0.5)
    assert half.alpha == 100 * ms.D1
    assert half.beta == 100 * ms.D0
    low = thresholds_probabilistic(ms, 100, 0.2, eta=0.05)
    high = thresholds_probabilistic(ms, 100, 0.3, eta=0.05)
    assert low.alpha < high.alpha
    assert low.beta < high.beta


def test_thresholds_probabilistic_scaling(exponential):
    ms = exponential.moments()
    cfg_n = thresholds_probabilistic(ms, 100, 0.1)
    cfg_4n = thresholds_probabilistic(ms, 400, 0.1)
    assert cfg_4n.alpha - 400 * ms.D1 == pytest.approx(
        2.0 * (cfg_n.alpha - 100 * ms.D1), rel=1e-9
    )
    assert cfg_4n.beta - 400 * ms.D0 == pytest.approx(
        2.0 * (cfg_n.beta - 100 * ms.D0), rel=1e-9
    )


@pytest.mark.parametrize('args', [
    (0, 0.2, 0.0),
    (10.5, 0.2, 0.0),
    (100, 0.0, 0.0),
    (100, 1.0, 0.0),
    (100, 0.2, 0.2),
    (100, 0.2, -0.1),
])
def test_thresholds_probabilistic_domain(gaussian, args):
    n, eps, eta = args
    with pytest.raises(DomainError):
        thresholds_probabilistic(gaussian.moments(), n, eps, eta)


def test_thresholds_expectation(gaussian):
    ms = gaussian.moments()
    cfg = thresholds_expectation(ms, 0.0, 0.0, 100, 0.0)
    assert cfg.alpha == 50.0
    assert cfg.beta == 50.0
    assert cfg.max_steps == 5000
    ach = thresholds_expectation(ms, 0.7, 0.6, 1000, 1.0)
    assert ach.alpha == pytest.approx(500.0 - 0.6 - 0.5)
    assert ach.beta == pytest.approx(500.0 - 0.7 - 0.5)
    conv = thresholds_expectation(
        ms, 0.7, 0.6, 1000, 1.0, direction=Direction.CONVERSE
    )
    assert conv.alpha == pytest.approx(500.0 - 0.6 + 0.5)
    assert conv.beta == pytest.approx(500.0 - 0.7 + 0.5)
    assert thresholds_expectation(ms, 0.7, 0.6, 1000, 1.0, 'converse') == conv


def test_thresholds_expectation_invalid(gaussian):
    ms = gaussian.moments()
    with pytest.raises(InvalidThresholdError):
        thresholds_expectation(ms, 5.0, 5.0, 1, 0.0)
    with pytest.raises(DomainError):
        thresholds_expectation(ms, 0.5, 0.5, 0, 0.0)


def test_wald_error_bounds():
    bounds = wald_error_bounds(SprtConfig(5.0, 5.0, 100))
    assert bounds.p10_bound == pytest.approx(6.7379e-3, rel=1e-4)
    assert bounds.p01_bound == bounds.p10_bound
    bounds = wald_error_bounds(SprtConfig(2.0, 4.0, 100))
    assert bounds.p10_bound == math.exp(-2.0)
    assert bounds.p01_bound == math.exp(-4.0)
