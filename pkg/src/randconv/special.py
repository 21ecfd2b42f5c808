"""Regularized incomplete gamma functions and chi-squared quantiles.

P(a, x) uses the power series below ``x < a + 1`` and Q(a, x) the modified
Lentz continued fraction above it; each is obtained from the other by
complement only where the complement is far from cancellation.
"""

from __future__ import annotations

import math

EPS = 1e-16
FPMIN = 1e-300
MAX_ITER = 10_000


def _log_prefactor(a: float, x: float) -> float:
    return -x + a * math.log(x) - math.lgamma(a)


def _series_p(a: float, x: float) -> float:
    ap = a
    term = total = 1.0 / a
    for _ in range(MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(_log_prefactor(a, x))


def _cf_q(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")
    return math.exp(_log_prefactor(a, x)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _series_p(a, x)
    return 1.0 - _cf_q(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _series_p(a, x)
    return _cf_q(a, x)


def chi2_sf(x: float, m: int) -> float:
    return gammainc_upper(m / 2.0, x / 2.0)


def chi2_cdf(x: float, m: int) -> float:
    return gammainc_lower(m / 2.0, x / 2.0)


def _solve(tail: float, m: int, upper: bool) -> float:
    """x with P(X > x) == tail (upper) or P(X < x) == tail (lower), tail <= 0.5."""
    f = (lambda x: chi2_sf(x, m)) if upper else (lambda x: chi2_cdf(x, m))
    # g(x) > 0 on the left of the root, < 0 on the right
    g = (lambda x: f(x) - tail) if upper else (lambda x: tail - f(x))
    lo = hi = float(m)
    if g(hi) > 0:
        while g(hi) > 0:
            lo, hi = hi, hi * 2.0
    else:
        while g(lo) <= 0:
            hi, lo = lo, lo / 2.0
            if lo < 1e-300:
                return 0.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-12 * hi or mid in (lo, hi):
            break
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check(prob: float, m: int) -> None:
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie strictly in (0, 1), got {prob}")
    if m < 1 or int(m) != m:
        raise ValueError(f"degrees of freedom must be a positive integer, got {m}")


def chi2_upper_quantile(alpha: float, m: int) -> float:
    """The x with P(X > x) = alpha for X ~ chi2(m)."""
    _check(alpha, m)
    if alpha <= 0.5:
        return _solve(alpha, m, upper=True)
    return _solve(1.0 - alpha, m, upper=False)


def chi2_lower_quantile(beta: float, m: int) -> float:
    """The x with P(X < x) = beta; keeps relative accuracy for tiny beta."""
    _check(beta, m)
    if beta <= 0.5:
        return _solve(beta, m, upper=False)
    return _solve(1.0 - beta, m, upper=True)
