"""First- and second-order error exponents of the SPRT.

Under the probabilistic constraint ``max_i P_i(T > n) <= eps`` the
correction to the exponent pair is of order 1/sqrt(n) and is given by
``G(lambda, eps)``; under the expectation constraint ``max_i E_i[T] <= n``
it is of order 1/n and given by ``F(lambda)``. Reports carry a
normalization marker so the two are never compared on one scale.
"""
import enum
import math
from dataclasses import dataclass
from typing import Optional

from marshmallow import fields

from seqexp.exceptions import DomainError
from seqexp.schema import SansNoneSchema
from seqexp.special import normal_quantile


class Constraint(str, enum.Enum):
    PROBABILISTIC = 'probabilistic'
    EXPECTATION = 'expectation'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        value = str(value).strip().lower()
        for c in cls:
            if c.value.startswith(value) and value:
                return c
        msg = f'Unknown constraint {value!r}'
        raise DomainError(msg)


class Normalization(str, enum.Enum):
    PER_SQRT_N = 'per_sqrt_n'
    PER_UNIT = 'per_unit'


NORMALIZATION = {
    Constraint.PROBABILISTIC: Normalization.PER_SQRT_N,
    Constraint.EXPECTATION: Normalization.PER_UNIT,
}


def check_lambda(lam):
    if not 0.0 <= lam <= 1.0:
        msg = f'lambda must lie in [0, 1] (got {lam})'
        raise DomainError(msg)


def check_eps(eps):
    if not 0.0 < eps < 1.0:
        msg = f'eps must lie in (0, 1) (got {eps})'
        raise DomainError(msg)


class ExponentReportSchema(SansNoneSchema):
    constraint = fields.Enum(Constraint, by_value=True, required=True)
    lam = fields.Float(data_key='lambda', required=True)
    eps = fields.Float()
    first_order = fields.Float()
    second_order = fields.Float(required=True)
    normalization = fields.Enum(Normalization, by_value=True, required=True)


@dataclass(frozen=True)
class ExponentReport:
    constraint: Constraint
    lam: float
    second_order: float
    normalization: Normalization
    first_order: Optional[float] = None
    eps: Optional[float] = None

    def __post_init__(self):
        check_lambda(self.lam)
        if NORMALIZATION[self.constraint] != self.normalization:
            msg = (
                f'{self.constraint.value} exponents are normalized '
                f'{NORMALIZATION[self.constraint].value}'
            )
            raise DomainError(msg)

    def to_dict(self):
        return ExponentReportSchema().dump(self)

    def to_json(self):
        return ExponentReportSchema().dumps(self)


def achievable_region_boundary(ms, E0):
    """Largest E1 with (E0, E1) achievable: ``E0 * E1 = D0 * D1``."""
    if not (E0 > 0.0 and math.isfinite(E0)):
        msg = f'E0 must be positive and finite (got {E0})'
        raise DomainError(msg)
    return ms.D1 * ms.D0 / E0


def first_order_exponent(ms, lam):
    check_lambda(lam)
    return lam * ms.D1 + (1.0 - lam) * ms.D0


def second_order_probabilistic(ms, lam, eps):
    """G(lambda, eps) = Phi^-1(eps) (lambda sqrt(V1) + (1-lambda) sqrt(V0)).

    lambda weighs the type-I term, whose threshold carries sqrt(V1).
    """
    check_lambda(lam)
    check_eps(eps)
    q = normal_quantile(eps)
    g = lam * math.sqrt(ms.V1) * q + (1.0 - lam) * math.sqrt(ms.V0) * q
    return ExponentReport(
        constraint=Constraint.PROBABILISTIC,
        lam=lam,
        eps=eps,
        first_order=first_order_exponent(ms, lam),
        second_order=g,
        normalization=Normalization.PER_SQRT_N
    )


def second_order_expectation(rc, lam, ms=None):
    """``F(lambda) = lambda (A_tilde + B_tilde) + (1-lambda) (A + B)``."""
    check_lambda(lam)
    f = lam * rc.sum_type_i + (1.0 - lam) * rc.sum_type_ii
    return ExponentReport(
        constraint=Constraint.EXPECTATION,
        lam=lam,
        first_order=first_order_exponent(ms, lam) if ms else None,
        second_order=f,
        normalization=Normalization.PER_UNIT
    )


def finite_length_exponent(ms, lam, n, p10, p01, constraint, eps=None):
    """Finite-n second-order quantity of a test with the given errors.

    ``p10`` is the type-I and ``p01`` the type-II error probability.

    Probabilistic: ``lambda (-log p10 / sqrt(n) - sqrt(n) D1)`` plus the
    type-II analogue weighted by ``1 - lambda``. Expectation:
    ``lambda (log p10 + n D1) + (1 - lambda) (log p01 + n D0)``.
    """
    check_lambda(lam)
    constraint = Constraint.parse(constraint)
    if int(n) != n or n < 1:
        msg = f'n must be a positive integer (got {n})'
        raise DomainError(msg)
    if not (0.0 < p10 <= 1.0 and 0.0 < p01 <= 1.0):
        msg = 'Error probabilities must lie in (0, 1]'
        raise DomainError(msg)
    if constraint == Constraint.PROBABILISTIC:
        if eps is not None:
            check_eps(eps)
        root_n = math.sqrt(n)
        value = (
            lam * (-math.log(p10) / root_n - root_n * ms.D1) +
            (1.0 - lam) * (-math.log(p01) / root_n - root_n * ms.D0)
        )
    else:
        value = (
            lam * (math.log(p10) + n * ms.D1) +
            (1.0 - lam) * (math.log(p01) + n * ms.D0)
        )
    return ExponentReport(
        constraint=constraint,
        lam=lam,
        eps=eps,
        first_order=first_order_exponent(ms, lam),
        second_order=value,
        normalization=NORMALIZATION[constraint]
    )
