"""Weight-exact quadrature for the degenerate vertical weight.

The vertical coordinate carries the weight t^(1-2s); rules here integrate
t^e * p(t) on an interval [a, b] with 0 <= a < b, exactly for polynomial p
whenever the interval touches the degenerate endpoint a = 0 (Gauss-Jacobi)
or the point count is small (moment-based Gauss).  For interior intervals at
high order the weight is analytic and is folded into a Gauss-Legendre rule,
whose error decays geometrically and sits far below the exact-rule floor for
the aspect ratios produced by graded meshes.
"""

from __future__ import annotations

from math import comb

import numpy as np
from scipy.special import roots_jacobi

_MOMENT_RULE_MAX = 5


def weighted_cell_moment(interval, s: float, m: int) -> float:
    """Exact value of the integral of t^(1-2s) * t^m over [a, b].

    Closed form (b^(m+2-2s) - a^(m+2-2s)) / (m+2-2s); the exponent is
    positive for every m >= 0, s < 1.
    """
    a, b = float(interval[0]), float(interval[1])
    if not (0.0 <= a < b):
        raise ValueError(f"need 0 <= a < b, got [{a}, {b}]")
    if not (0.0 < s < 1.0):
        raise ValueError(f"s must lie in (0,1), got {s}")
    if m < 0:
        raise ValueError("m must be a nonnegative integer")
    p = m + 2.0 - 2.0 * s
    return (b**p - a**p) / p


def power_moment(interval, exponent: float, m: int) -> float:
    """Integral of t^exponent * t^m over [a, b] for any exponent > -1."""
    a, b = float(interval[0]), float(interval[1])
    p = m + exponent + 1.0
    if p <= 0:
        raise ValueError(f"moment diverges: exponent {exponent}, order {m}")
    return (b**p - a**p) / p


def _rule_from_moments(interval, exponent: float, n: int):
    a, b = float(interval[0]), float(interval[1])
    if a > 0.0 and a != 1.0:
        # rescale t = a*tau to avoid cancellation in high moments of thin,
        # deep layers; the scaled interval [1, b/a] is O(1) for graded meshes
        x, w = _rule_from_moments((1.0, b / a), exponent, n)
        return a * x, a ** (exponent + 1.0) * w
    c = 0.5 * (a + b)
    e = 0.5 * (b - a)
    nm = 2 * n + 1
    # centered moments of u = (t-c)/e against t^exponent dt, evaluated with a
    # high-order Gauss rule: the integrand is analytic on interior intervals,
    # and direct evaluation avoids the catastrophic cancellation a binomial
    # recombination of raw moments suffers on narrow layers
    xg, wg = np.polynomial.legendre.leggauss(12 * n + 16)
    tg = c + e * xg
    base = wg * e * tg**exponent
    mom = np.array([np.sum(base * xg**k) for k in range(nm)])
    hank = np.empty((n + 1, n + 1))
    for i in range(n + 1):
        for j in range(n + 1):
            hank[i, j] = mom[i + j]
    chol = np.linalg.cholesky(hank)
    # three-term recurrence coefficients from the Cholesky factor
    d = np.diag(chol)
    sub = np.zeros(n + 1)
    sub[1:] = np.diag(chol, -1)
    alpha = np.empty(n)
    beta = np.empty(n)
    for k in range(n):
        alpha[k] = sub[k + 1] / d[k] - (sub[k] / d[k - 1] if k > 0 else 0.0)
        beta[k] = (d[k] / d[k - 1]) ** 2 if k > 0 else 0.0
    jac = np.diag(alpha)
    if n > 1:
        off = np.sqrt(beta[1:])
        jac += np.diag(off, 1) + np.diag(off, -1)
    vals, vecs = np.linalg.eigh(jac)
    return c + e * vals, mom[0] * vecs[0, :] ** 2


def _rule_jacobi(b: float, exponent: float, n: int):
    # weight t^e on [0, b]: map Jacobi weight (1+x)^e from [-1, 1]
    xj, wj = roots_jacobi(n, 0.0, exponent)
    return b * (1.0 + xj) / 2.0, (b / 2.0) ** (exponent + 1.0) * wj


def gauss_legendre_rule(interval, n: int):
    """Plain Gauss-Legendre rule mapped to [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = float(interval[0]), float(interval[1])
    return 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w


def weighted_gauss_rule(interval, exponent: float, n: int):
    """n-point Gauss rule for the measure t^exponent dt on [a, b].

    Returns (nodes, weights) with nodes in (a, b).  Exact for polynomials of
    degree <= 2n-1 against the weight when a = 0 or n <= 5; for interior
    intervals at larger n the analytic weight is evaluated at Gauss-Legendre
    nodes instead (geometric accuracy, no endpoint singularity in range).
    """
    a, b = float(interval[0]), float(interval[1])
    if n < 1:
        raise ValueError("need at least one point")
    if not (0.0 <= a < b):
        raise ValueError(f"need 0 <= a < b, got [{a}, {b}]")
    if exponent == 0.0:
        return gauss_legendre_rule(interval, n)
    if a == 0.0:
        return _rule_jacobi(b, exponent, n)
    if n <= _MOMENT_RULE_MAX:
        return _rule_from_moments(interval, exponent, n)
    x, w = gauss_legendre_rule(interval, n)
    return x, w * x**exponent
