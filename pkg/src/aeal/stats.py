"""Statistical special functions and evaluation metrics.

Keeps the screening path self-contained: chi-squared upper tails via the
regularized incomplete gamma function (series / continued-fraction split),
normal quantiles via a rational approximation polished by one Newton step.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OneClassOnly

_EPS = 1e-15
_MAX_ITER = 500


@dataclass(frozen=True)
class TestDecision:
    """Outcome of a chi-squared screening test."""

    statistic: float
    df: int
    p_value: float
    reject: bool
    alpha: float


def _lower_gamma_series(a, x):
    """Regularized lower incomplete gamma P(a, x) by power series; x < a + 1."""
    term = 1.0 / a
    total = term
    n = a
    for _ in range(_MAX_ITER):
        n += 1.0
        term *= x / n
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _upper_gamma_cf(a, x):
    """Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction; x >= a + 1."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_sf(x, df):
    """Upper-tail probability P(chi2_df > x).

    Split at x < df + 1 between the series for the lower tail and the
    continued fraction for the upper tail, as usual for gammainc.
    """
    if x < 0:
        raise DomainError("chi-squared statistic must be nonnegative")
    if df < 1:
        raise DomainError("degrees of freedom must be a positive integer")
    if x == 0.0:
        return 1.0
    a = 0.5 * df
    xh = 0.5 * x
    if xh < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _lower_gamma_series(a, xh)))
    return min(1.0, max(0.0, _upper_gamma_cf(a, xh)))


def _normal_cdf(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _normal_pdf(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


# Acklam's rational approximation coefficients for the inverse normal CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_quantile(p):
    """Inverse standard normal CDF, polished with one Newton step on erf."""
    if not 0.0 < p < 1.0:
        raise DomainError("normal quantile defined on (0, 1)")
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        z = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        z = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # one Newton step: |error| drops from ~1e-9 to machine level
    z -= (_normal_cdf(z) - p) / _normal_pdf(z)
    return z


def auc(scores, labels):
    """Area under the ROC curve as the Mann-Whitney statistic, ties counted 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("both classes required for AUC")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    n = len(s)
    starts_new = np.r_[True, s[1:] != s[:-1]]
    group = np.cumsum(starts_new) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)                    # 1-based last rank per tie group
    mid = ends - (counts - 1) / 2.0             # midrank per tie group
    ranks = np.empty(n, dtype=float)
    ranks[order] = mid[group]
    rank_sum_pos = float(ranks[pos].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _kolmogorov_sf(lam):
    """Asymptotic Kolmogorov survival function Q(lam) = 2 sum (-1)^(j-1) exp(-2 j^2 lam^2)."""
    if lam <= 0:
        return 1.0
    total = 0.0
    for j in range(1, 101):
        term = 2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam)
        total += term
        if abs(term) < 1e-16:
            break
    return min(1.0, max(0.0, total))


def ks_uniform(p_values):
    """Kolmogorov-Smirnov distance of a sample to Uniform(0,1) with asymptotic p-value.

    Returns (distance, p_value). Uses Stephens' finite-sample adjustment of
    the Kolmogorov asymptotic law.
    """
    u = np.sort(np.asarray(p_values, dtype=float))
    m = len(u)
    if m == 0:
        raise DomainError("empty sample")
    i = np.arange(1, m + 1)
    d_plus = np.max(i / m - u)
    d_minus = np.max(u - (i - 1) / m)
    d = float(max(d_plus, d_minus))
    sqrt_m = math.sqrt(m)
    lam = (sqrt_m + 0.12 + 0.11 / sqrt_m) * d
    return d, _kolmogorov_sf(lam)


def make_decision(statistic, df, alpha):
    """Bundle a chi-squared test outcome at significance level alpha."""
    p = chi2_sf(statistic, df)
    return TestDecision(statistic=float(statistic), df=int(df), p_value=p,
                        reject=bool(p < alpha), alpha=float(alpha))
