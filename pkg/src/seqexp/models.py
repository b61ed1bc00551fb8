import enum
import importlib
import math
from dataclasses import dataclass, field
from json import JSONDecodeError
from typing import Callable, ClassVar, Optional

import numpy as np
from marshmallow import (
    ValidationError,
    fields,
    post_load,
    validate,
    validates_schema,
)

from seqexp.exceptions import InvalidPairError, UnsupportedPairError
from seqexp.schema import Finite, SansNoneSchema, asdict_sans_none
from seqexp.special import (
    erlang_cdf,
    erlang_sf,
    gaussian_negative_part,
    normal_cdf,
    normal_pdf,
)

GAUSSIAN = 'gaussian'
EXPONENTIAL = 'exponential'
CUSTOM = 'custom'
PAIR_KINDS = (GAUSSIAN, EXPONENTIAL, CUSTOM)
MISSING_PARAMS_MSG = 'Missing parameters for pair kind'


class Hypothesis(enum.IntEnum):
    H0 = 0
    H1 = 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, (cls, int)):
            return cls(value)
        return cls[str(value).upper()]


POSITIVE = validate.Range(min=0, min_inclusive=False)


class MomentSummarySchema(SansNoneSchema):
    D0 = Finite(required=True, validate=POSITIVE)
    D1 = Finite(required=True, validate=POSITIVE)
    V0 = Finite(required=True, validate=validate.Range(min=0))
    V1 = Finite(required=True, validate=validate.Range(min=0))
    M3_0 = Finite(load_default=None)
    M3_1 = Finite(load_default=None)
    E2_0 = Finite(load_default=None)
    E2_1 = Finite(load_default=None)

    @post_load
    def make_moments(self, data, **kwargs):
        return MomentSummary(**data)


@dataclass(frozen=True)
class MomentSummary:
    """Per-sample LLR moments of a pair, in nats.

    Under H1 the LLR has mean ``-D1``, so ``E2_1 = V1 + D1**2`` as well.
    """

    D0: float
    D1: float
    V0: float
    V1: float
    M3_0: Optional[float] = None
    M3_1: Optional[float] = None
    E2_0: Optional[float] = None
    E2_1: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.D0 < math.inf and 0.0 < self.D1 < math.inf):
            msg = 'Relative entropies must be finite and strictly positive'
            raise InvalidPairError(msg)
        if self.V0 < 0.0 or self.V1 < 0.0:
            msg = 'Relative entropy variances must be nonnegative'
            raise InvalidPairError(msg)
        # second moments follow from mean and variance when not declared
        if self.E2_0 is None:
            object.__setattr__(self, 'E2_0', self.V0 + self.D0 ** 2)
        if self.E2_1 is None:
            object.__setattr__(self, 'E2_1', self.V1 + self.D1 ** 2)

    @property
    def third_moment_finite(self):
        return (
            self.M3_0 is not None and self.M3_1 is not None and
            math.isfinite(self.M3_0) and math.isfinite(self.M3_1)
        )

    def to_dict(self):
        return asdict_sans_none(self)

    def to_json(self):
        return MomentSummarySchema().dumps(self.to_dict())


@dataclass(frozen=True)
class KStepFunctionals:
    p_sign: float
    neg_part_H0: float
    pos_part_H1: float


class DistributionPair:
    """A hypothesis pair (P0, P1) seen through its log-likelihood ratio.

    The LLR of one observation is ``Y = log p0(X) / p1(X)``; it has mean
    ``D0`` under H0 and ``-D1`` under H1.
    """

    kind: ClassVar[str] = None
    has_functionals: ClassVar[bool] = False

    @property
    def is_nonarithmetic(self):
        return True

    @property
    def can_sample(self):
        return True

    def sample_llr(self, hypothesis, rng, size=None):
        raise NotImplementedError

    def moments(self):
        raise NotImplementedError

    def k_step_functionals(self, k):
        msg = f'No closed-form k-step functionals for {self.kind} pairs'
        raise UnsupportedPairError(msg)

    def to_dict(self):
        return PairSchema().dump(self)

    def to_json(self):
        return PairSchema().dumps(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return PairSchema().load(d)
        except ValidationError as e:
            raise InvalidPairError(e.messages)

    @classmethod
    def from_json(cls, j):
        try:
            return PairSchema().loads(j)
        except JSONDecodeError as je:
            raise InvalidPairError(je.msg)
        except ValidationError as ve:
            raise InvalidPairError(ve.messages)

    @classmethod
    def parse(cls, text):
        """Parse a JSON pair document or the ``kind:p0,p1`` shorthand."""
        text = text.strip()
        if text.startswith('{'):
            return cls.from_json(text)
        kind, _, params = text.partition(':')
        kind = kind.strip().lower()
        try:
            p0, p1 = (float(p) for p in params.split(','))
        except ValueError:
            msg = f'Malformed pair {text!r}'
            raise InvalidPairError(msg)
        if kind == GAUSSIAN:
            return cls.from_dict({'kind': kind, 'theta0': p0, 'theta1': p1})
        if kind == EXPONENTIAL:
            return cls.from_dict({'kind': kind, 'gamma0': p0, 'gamma1': p1})
        msg = f'Unknown pair kind {kind!r}'
        raise InvalidPairError(msg)


@dataclass(frozen=True)
class GaussianPair(DistributionPair):
    """Unit-variance Gaussians N(theta0, 1) against N(theta1, 1)."""

    kind: ClassVar[str] = GAUSSIAN
    has_functionals: ClassVar[bool] = True

    theta0: float
    theta1: float

    def __post_init__(self):
        if not (math.isfinite(self.theta0) and math.isfinite(self.theta1)):
            msg = 'Gaussian means must be finite'
            raise InvalidPairError(msg)
        if self.theta0 == self.theta1:
            msg = 'Gaussian means must differ'
            raise InvalidPairError(msg)

    @property
    def delta(self):
        return self.theta1 - self.theta0

    def theta(self, hypothesis):
        return self.theta0 if hypothesis == Hypothesis.H0 else self.theta1

    def sample_llr(self, hypothesis, rng, size=None):
        x = rng.normal(self.theta(hypothesis), 1.0, size=size)
        return (
            (self.theta1 ** 2 - self.theta0 ** 2) / 2.0 +
            (self.theta0 - self.theta1) * x
        )

    def moments(self):
        d2 = self.delta ** 2
        mean = d2 / 2.0
        m3 = gaussian_abs_third_moment(mean, abs(self.delta))
        return MomentSummary(
            D0=mean, D1=mean, V0=d2, V1=d2,
            M3_0=m3, M3_1=m3,
            E2_0=d2 ** 2 / 4.0 + d2, E2_1=d2 ** 2 / 4.0 + d2
        )

    def k_step_functionals(self, k):
        check_k(k)
        mu = k * self.delta ** 2 / 2.0
        sigma = math.sqrt(k) * abs(self.delta)
        # S_k ~ N(mu, sigma^2) under H0 and N(-mu, sigma^2) under H1
        neg_part = gaussian_negative_part(mu, sigma)
        return KStepFunctionals(
            p_sign=2.0 * normal_cdf(-mu / sigma),
            neg_part_H0=neg_part,
            pos_part_H1=neg_part
        )


@dataclass(frozen=True)
class ExponentialPair(DistributionPair):
    """Exponentials with rates gamma0 < gamma1."""

    kind: ClassVar[str] = EXPONENTIAL
    has_functionals: ClassVar[bool] = True

    gamma0: float
    gamma1: float

    def __post_init__(self):
        if not (0.0 < self.gamma0 < self.gamma1 < math.inf):
            msg = 'Exponential rates must satisfy 0 < gamma0 < gamma1'
            raise InvalidPairError(msg)

    @property
    def slope(self):
        return self.gamma1 - self.gamma0

    @property
    def offset(self):
        return math.log(self.gamma0 / self.gamma1)

    @property
    def crossing(self):
        """Value of sum(X) at which S_k changes sign, divided by k."""
        return math.log(self.gamma1 / self.gamma0) / self.slope

    def rate(self, hypothesis):
        return self.gamma0 if hypothesis == Hypothesis.H0 else self.gamma1

    def sample_llr(self, hypothesis, rng, size=None):
        x = rng.exponential(1.0 / self.rate(hypothesis), size=size)
        return self.slope * x + self.offset

    def moments(self):
        g0, g1 = self.gamma0, self.gamma1
        d0 = math.log(g0 / g1) + (g1 - g0) / g0
        d1 = math.log(g1 / g0) + (g0 - g1) / g1
        v0 = (g1 - g0) ** 2 / g0 ** 2
        v1 = (g1 - g0) ** 2 / g1 ** 2
        return MomentSummary(
            D0=d0, D1=d1, V0=v0, V1=v1,
            M3_0=self._abs_third_moment(g0),
            M3_1=self._abs_third_moment(g1),
            E2_0=d0 ** 2 + v0, E2_1=d1 ** 2 + v1
        )

    def _abs_third_moment(self, gamma):
        # E|cX + b|^3 from the incomplete moments
        # E[X^m; X < x*] = m!/gamma^m U(x*; m+1, gamma)
        c, b, xs = self.slope, self.offset, self.crossing
        total = 0.0
        for m in range(4):
            coeff = math.comb(3, m) * c ** m * b ** (3 - m)
            full = math.factorial(m) / gamma ** m
            below = erlang_cdf(xs, m + 1, gamma)
            total += coeff * full * (1.0 - 2.0 * below)
        return total

    def k_step_functionals(self, k):
        check_k(k)
        g0, g1 = self.gamma0, self.gamma1
        x = k * self.crossing
        log_ratio = math.log(g1 / g0)
        u0_k = erlang_cdf(x, k, g0)
        u0_k1 = erlang_cdf(x, k + 1, g0)
        sf1_k = erlang_sf(x, k, g1)
        sf1_k1 = erlang_sf(x, k + 1, g1)
        neg_part = k * u0_k * log_ratio - k * self.slope / g0 * u0_k1
        pos_part = -k * sf1_k * log_ratio + k * self.slope / g1 * sf1_k1
        return KStepFunctionals(
            p_sign=u0_k + sf1_k,
            neg_part_H0=max(neg_part, 0.0),
            pos_part_H1=max(pos_part, 0.0)
        )


@dataclass(frozen=True)
class CustomPair(DistributionPair):
    """A pair described only by declared LLR moments and an optional sampler.

    ``sampler(hypothesis, rng, size)`` must return LLR draws; it has to be a
    module-level function for multi-worker simulation.
    """

    kind: ClassVar[str] = CUSTOM

    declared: MomentSummary
    sampler: Optional[Callable] = field(default=None, compare=False)
    nonarithmetic: bool = True
    span: Optional[float] = None
    sampler_path: Optional[str] = None

    def __post_init__(self):
        if self.span is not None and self.nonarithmetic:
            msg = 'A pair with a lattice span cannot be non-arithmetic'
            raise InvalidPairError(msg)
        if self.span is not None and not self.span > 0:
            msg = 'Lattice span must be positive'
            raise InvalidPairError(msg)

    @property
    def is_nonarithmetic(self):
        return self.nonarithmetic

    @property
    def can_sample(self):
        return self.sampler is not None

    def sample_llr(self, hypothesis, rng, size=None):
        if self.sampler is None:
            msg = 'Custom pair has no sampler'
            raise UnsupportedPairError(msg)
        n = 1 if size is None else size
        draws = np.asarray(
            self.sampler(Hypothesis(hypothesis), rng, n), dtype=float
        )
        return float(draws[0]) if size is None else draws

    def moments(self):
        return self.declared


def check_k(k):
    if int(k) != k or k < 1:
        msg = f'k must be a positive integer (got {k!r})'
        raise InvalidPairError(msg)


def gaussian_abs_third_moment(mu, sigma):
    """E|Z|^3 for Z ~ N(mu, sigma^2)."""
    a = -mu / sigma
    phi_a, cdf_a = normal_pdf(a), normal_cdf(a)
    full = mu ** 3 + 3.0 * mu * sigma ** 2
    below = (
        mu ** 3 * cdf_a - 3.0 * mu ** 2 * sigma * phi_a +
        3.0 * mu * sigma ** 2 * (cdf_a - a * phi_a) -
        sigma ** 3 * (a * a + 2.0) * phi_a
    )
    return full - 2.0 * below


def resolve_sampler(path):
    module_name, _, attr = path.partition(':')
    try:
        return getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError, ValueError):
        msg = f'Cannot import sampler {path!r}'
        raise InvalidPairError(msg)


class PairSchema(SansNoneSchema):
    kind = fields.String(required=True, validate=validate.OneOf(PAIR_KINDS))
    theta0 = Finite()
    theta1 = Finite()
    gamma0 = Finite(validate=POSITIVE)
    gamma1 = Finite(validate=POSITIVE)
    moments = fields.Nested(MomentSummarySchema, attribute='declared')
    nonarithmetic = fields.Boolean()
    span = Finite(validate=POSITIVE)
    sampler = fields.String(attribute='sampler_path')

    @validates_schema
    def validate_kind_params(self, data, **kwargs):
        required = {
            GAUSSIAN: ('theta0', 'theta1'),
            EXPONENTIAL: ('gamma0', 'gamma1'),
            CUSTOM: ('declared',),
        }[data['kind']]
        if any(data.get(name) is None for name in required):
            raise ValidationError(MISSING_PARAMS_MSG)

    @post_load
    def make_pair(self, data, **kwargs):
        kind = data.pop('kind')
        if kind == GAUSSIAN:
            return GaussianPair(data['theta0'], data['theta1'])
        if kind == EXPONENTIAL:
            return ExponentialPair(data['gamma0'], data['gamma1'])
        path = data.get('sampler_path')
        return CustomPair(
            declared=data['declared'],
            sampler=resolve_sampler(path) if path else None,
            nonarithmetic=data.get('nonarithmetic', data.get('span') is None),
            span=data.get('span'),
            sampler_path=path
        )


def sample_llr(pair, hypothesis, rng, size=None):
    return pair.sample_llr(Hypothesis.parse(hypothesis), rng, size=size)


def moments(pair):
    return pair.moments()


def k_step_functionals(pair, k):
    return pair.k_step_functionals(k)


def is_nonarithmetic(pair):
    return pair.is_nonarithmetic
