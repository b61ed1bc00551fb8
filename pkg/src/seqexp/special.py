"""Special functions used throughout the package.

Standard normal pdf/cdf/quantile and the Erlang (integer-shape gamma) CDF.
All functions are pure and scalar.
"""
import math
from numbers import Integral

from seqexp.exceptions import DomainError

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)

# Rational approximation coefficients for the normal quantile (central
# region a/b, tails c/d); relative error below 1.2e-9 before refinement.
_QA = (
    -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
    1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00,
)
_QB = (
    -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
    6.680131188771972e+01, -1.328068155288572e+01,
)
_QC = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
    -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
)
_QD = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
    3.754408661907416e+00,
)
_Q_LOW = 0.02425

_TAIL_EPS = 1e-17
_MAX_POISSON_TERMS = 10_000_000


def normal_pdf(a):
    return math.exp(-0.5 * a * a) / SQRT2PI


def normal_cdf(a):
    if math.isnan(a):
        msg = 'normal_cdf of NaN'
        raise DomainError(msg)
    return 0.5 * math.erfc(-a / SQRT2)


def _horner(coeffs, x):
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def _quantile_lower(p):
    # p in (0, 0.5]
    if p < _Q_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return _horner(_QC, q) / (_horner(_QD, q) * q + 1.0)
    q = p - 0.5
    r = q * q
    return q * _horner(_QA, r) / (_horner(_QB, r) * r + 1.0)


def normal_quantile(p):
    """Inverse of :func:`normal_cdf` on (0, 1).

    A rational approximation refined by one Newton step against
    :func:`normal_cdf`; upper-half arguments are reflected so that
    ``normal_quantile(1 - p) == -normal_quantile(p)``.
    """
    if not (0.0 < p < 1.0):
        msg = f'normal_quantile requires 0 < p < 1 (got {p})'
        raise DomainError(msg)
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    x = _quantile_lower(p)
    err = normal_cdf(x) - p
    return x - err / normal_pdf(x)


def gaussian_negative_part(mu, sigma):
    """E[Z^-] for Z ~ N(mu, sigma^2)."""
    if sigma <= 0.0:
        return max(-mu, 0.0)
    z = mu / sigma
    return -mu * normal_cdf(-z) + sigma * normal_pdf(z)


def _check_erlang_args(x, k, gamma):
    if not isinstance(k, Integral) or k < 1:
        msg = f'Erlang shape must be a positive integer (got {k!r})'
        raise DomainError(msg)
    if not gamma > 0.0:
        msg = f'Erlang rate must be positive (got {gamma!r})'
        raise DomainError(msg)
    if not x >= 0.0:
        msg = f'Erlang argument must be nonnegative (got {x!r})'
        raise DomainError(msg)


def _poisson_side(lam, k, upper):
    """Poisson(lam) mass on j >= k (upper) or j <= k - 1.

    The summed side must be the one whose terms decrease away from the
    starting index; terms are accumulated relative to the first one and
    rescaled from log space.
    """
    j = k if upper else k - 1
    log_first = j * math.log(lam) - lam - math.lgamma(j + 1)
    terms = [1.0]
    t = 1.0
    for _ in range(_MAX_POISSON_TERMS):
        if upper:
            j += 1
            t *= lam / j
        else:
            if j == 0:
                break
            t *= j / lam
            j -= 1
        terms.append(t)
        if t < _TAIL_EPS:
            break
    return math.exp(log_first) * math.fsum(terms)


def erlang_cdf(x, k, gamma):
    """CDF of the sum of ``k`` i.i.d. exponentials with rate ``gamma``.

    Equals 1 - exp(-gamma x) sum_{j<k} (gamma x)^j / j!.
    """
    _check_erlang_args(x, k, gamma)
    lam = gamma * x
    if lam == 0.0:
        return 0.0
    if math.isinf(lam):
        return 1.0
    if lam < k:
        return min(1.0, _poisson_side(lam, k, upper=True))
    return max(0.0, 1.0 - _poisson_side(lam, k, upper=False))


def erlang_sf(x, k, gamma):
    """``1 - erlang_cdf(x, k, gamma)`` without cancellation."""
    _check_erlang_args(x, k, gamma)
    lam = gamma * x
    if lam == 0.0:
        return 1.0
    if math.isinf(lam):
        return 0.0
    if lam < k:
        return max(0.0, 1.0 - _poisson_side(lam, k, upper=True))
    return min(1.0, _poisson_side(lam, k, upper=False))
