"""Statistical primitives: Chernoff sample sizes, a one-sample Student's
t-test, and the frequency-deviation bound used when hunting witness traces.

The t distribution's CDF is computed locally through the regularized
incomplete beta function (continued-fraction evaluation), so the package has
no runtime dependency on a stats library; the test suite cross-checks the
p-values against scipy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def chernoff_sample_size(eps: float, delta: float) -> int:
    """Samples needed so that P(|estimate - truth| >= eps) <= delta."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0,1), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0,1), got {delta}")
    return math.ceil((math.log(2.0) - math.log(delta)) / (2.0 * eps * eps))


def witness_bound(delta: float, n: int) -> float:
    """Deviation above which an empirical frequency over n samples is deemed
    incompatible with a claimed probability."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0,1), got {delta}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return math.sqrt((math.log(2.0) - math.log(delta)) / (2.0 * n))


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    p_value: float
    reject: bool


def t_test_one_sample(
    p_hat: float, p_bar: float, std: float, n: int, significance: float
) -> TestOutcome:
    """Two-sided one-sample t-test of the hypothesis p_bar == p_hat.

    `std` is the sample standard deviation (n-1 denominator) of the Bernoulli
    observations behind `p_bar`.  A zero standard deviation means every
    observation agreed (p_bar is exactly 0 or 1, or n identical values); the
    t statistic is undefined there, so the exact binomial tail under the null
    is used instead: P(all successes | p_hat) = p_hat**n and symmetrically
    for all failures.  An exact-equality rule would false-alarm at rate
    1 - p_hat**n whenever the true probability sits within 1/n of a bound.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if not 0.0 < significance < 1.0:
        raise ValueError(f"significance must be in (0,1), got {significance}")
    if std < 0.0:
        raise ValueError(f"std must be non-negative, got {std}")
    if std == 0.0:
        if p_bar == p_hat:
            return TestOutcome(0.0, 1.0, False)
        if p_bar >= 1.0:
            p = min(1.0, 2.0 * p_hat**n)
        elif p_bar <= 0.0:
            p = min(1.0, 2.0 * (1.0 - p_hat) ** n)
        else:
            p = 0.0  # constant non-extreme sample: impossible for Bernoulli data
        sign = 1.0 if p_bar > p_hat else -1.0
        return TestOutcome(sign * math.inf, p, p < significance)
    t = (p_bar - p_hat) * math.sqrt(n) / std
    p = student_t_two_sided_p(t, n - 1)
    return TestOutcome(t, p, p < significance)


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for T Student-t distributed with df degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be at least 1, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def student_t_cdf(t: float, df: int) -> float:
    p = 0.5 * student_t_two_sided_p(t, df)
    return p if t < 0 else 1.0 - p


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) via the standard continued-fraction expansion."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0,1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    # The continued fraction converges fastest for x < (a+1)/(a+b+2); use the
    # symmetry I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x)


def _beta_cf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-14) -> float:
    # Modified Lentz's method.
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")
