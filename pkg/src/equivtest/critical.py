"""Critical constants and closed-form power functions for equivalence tests.

Everything here concerns the symmetric problem ``|T| <= C`` against a
``N(gamma, sigma^2)`` statistic, where the null hypothesis is
``|gamma| >= delta``.  The critical constant ``C(alpha, delta, sigma)`` is the
unique root of

    h(C) = Phi((C - delta) / sigma) - Phi((-C - delta) / sigma) = alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distfn import norm_cdf, norm_pdf, norm_quantile, norm_sf
from .errors import DomainError

__all__ = [
    "EquivalenceSpec",
    "CriticalConstant",
    "coverage_level",
    "critical_constant",
    "critical_value",
    "exact_power",
    "p_value",
    "least_favorable_weight",
    "lf_ratio",
    "tost_limit_power",
    "onesided_local_power",
    "small_margin_limit",
]

RESIDUAL_TOL = 1e-10


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def _check_positive(value: float, name: str) -> float:
    value = float(value)
    if not (value > 0.0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class EquivalenceSpec:
    """Level, margin half-width and statistic scale of an equivalence test."""

    alpha: float
    delta: float
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        object.__setattr__(self, "delta", _check_positive(self.delta, "delta"))
        object.__setattr__(self, "sigma", _check_positive(self.sigma, "sigma"))


@dataclass(frozen=True)
class CriticalConstant:
    """Solution of the critical-constant equation.

    Attributes:
        c: the critical constant
        spec: the problem it solves
        residual: ``|h(c) - alpha|``
        excess: ``c - (delta - sigma * z_{1-alpha})``, computed without
            cancellation; stays positive even where the gap is below one ulp of ``c``
        iterations: root-finder iterations used
        log_excess: natural log of ``excess``, finite even where ``excess``
            itself underflows to zero (gaps below about 1e-308)
    """

    c: float
    spec: EquivalenceSpec
    residual: float
    excess: float
    iterations: int
    log_excess: float = math.nan

    def __float__(self) -> float:
        return self.c


def _standard_h(u: float, d: float) -> float:
    return norm_cdf(u - d) - norm_cdf(-u - d)


def coverage_level(C: float, delta: float, sigma: float) -> float:
    """Probability that ``|N(delta, sigma^2)| <= C``: the size of the test at the boundary."""
    C = float(C)
    if not (C >= 0.0) or math.isnan(C):
        raise DomainError(f"C must be non-negative, got {C!r}")
    delta = _check_positive(delta, "delta")
    sigma = _check_positive(sigma, "sigma")
    if math.isinf(C):
        return 1.0
    return max(0.0, norm_cdf((C - delta) / sigma) - norm_cdf((-C - delta) / sigma))


def _solve_standard(alpha: float, d: float, z_one_sided: float) -> tuple[float, int]:
    """Root of ``Phi(u - d) - Phi(-u - d) = alpha`` in ``u``; safeguarded Newton."""
    lo = max(0.0, d - z_one_sided)
    hi = d + norm_quantile(1.0 - 0.5 * alpha) + 10.0
    # near-exact start in both regimes: small d (two-sided) and large d (one-sided)
    u = max(lo, norm_quantile(0.5 + 0.5 * alpha))
    if u >= hi:
        u = 0.5 * (lo + hi)
    for it in range(1, 201):
        f = _standard_h(u, d) - alpha
        if f < 0.0:
            lo = u
        elif f > 0.0:
            hi = u
        else:
            return u, it
        slope = norm_pdf(u - d) + norm_pdf(u + d)
        u_new = u - f / slope if slope > 0.0 else math.nan
        if abs(u_new - u) <= 1e-13 * max(1.0, u):
            return u_new, it
        if not lo < u_new < hi:
            u_new = 0.5 * (lo + hi)
            if hi - lo <= 1e-15 * max(1.0, u):
                return u_new, it
        u = u_new
    return u, 200


def _log_norm_cdf(x: float) -> float:
    """``log Phi(x)``, using the asymptotic tail series where ``Phi`` underflows."""
    if x > -37.0:
        return math.log(norm_cdf(x))
    r = 1.0 / (x * x)
    # Phi(x) = phi(x)/|x| (1 - r + 3r^2 - 15r^3 + 105r^4 - ...); r < 1e-3 here
    series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - r * (105.0 - 945.0 * r))))
    return -0.5 * x * x - math.log(-x) - 0.5 * math.log(2.0 * math.pi) + math.log(series)


def _excess_over_bound(u: float, z: float, d: float) -> float:
    """``u - (d - z)`` in standard units with ``z = z_{1-alpha}``, resolved below the ulp of ``u``."""
    raw = u - (d - z)
    if raw > 1e-6:
        return raw
    # Phi(e - z) - Phi(-z) = Phi(z - 2d - e); Taylor-expand the left side in e
    rhs0 = norm_cdf(z - 2.0 * d)
    phi_z = norm_pdf(z)
    e = rhs0 / phi_z
    for _ in range(50):
        lhs_per_e = phi_z * (1.0 + 0.5 * z * e + (z * z - 1.0) * e * e / 6.0)
        e_new = norm_cdf(z - 2.0 * d - e) / lhs_per_e
        if e_new == e:
            break
        e = e_new
    return e


def critical_constant(spec: EquivalenceSpec) -> CriticalConstant:
    """Solve ``h(C) = alpha`` for the critical constant ``C(alpha, delta, sigma)``.

    Works in standardized units ``u = C / sigma`` with ``d = delta / sigma`` and
    rescales, so ``C(alpha, delta, sigma) = sigma * C(alpha, delta / sigma, 1)``
    holds by construction.
    """
    if not isinstance(spec, EquivalenceSpec):
        raise DomainError("critical_constant expects an EquivalenceSpec")
    d = spec.delta / spec.sigma
    z = norm_quantile(1.0 - spec.alpha)
    u, iterations = _solve_standard(spec.alpha, d, z)
    c = spec.sigma * u
    residual = abs(coverage_level(c, spec.delta, spec.sigma) - spec.alpha)
    if residual > RESIDUAL_TOL:
        raise ArithmeticError(f"critical constant residual {residual:.3e} exceeds {RESIDUAL_TOL:g} for {spec}")
    e = _excess_over_bound(u, z, d)
    if e > 0.0:
        log_excess = math.log(spec.sigma) + math.log(e)
    else:
        # e = Phi(z - 2d - e) / phi(z) to first order, and e is negligible inside Phi
        log_excess = math.log(spec.sigma) + _log_norm_cdf(z - 2.0 * d) + 0.5 * z * z + 0.5 * math.log(2.0 * math.pi)
    return CriticalConstant(
        c=c, spec=spec, residual=residual, excess=spec.sigma * e, iterations=iterations, log_excess=log_excess
    )


def critical_value(alpha: float, delta: float, sigma: float = 1.0) -> float:
    """Shorthand for ``critical_constant(EquivalenceSpec(alpha, delta, sigma)).c``."""
    return critical_constant(EquivalenceSpec(alpha, delta, sigma)).c


def exact_power(delta_prime: float, spec: EquivalenceSpec) -> float:
    """Rejection probability of the UMP test when ``|E T| = delta_prime``."""
    delta_prime = float(delta_prime)
    if not delta_prime >= 0.0:
        raise DomainError(f"delta_prime must be >= 0 (pass its absolute value), got {delta_prime!r}")
    c = critical_constant(spec).c
    s = spec.sigma
    return max(0.0, norm_cdf((c - delta_prime) / s) - norm_cdf((-c - delta_prime) / s))


def p_value(t_abs: float, delta: float, sigma: float) -> float:
    """Smallest level at which ``|T| = t_abs`` leads to rejection.

    Since ``C(alpha, delta, sigma)`` increases with ``alpha`` this is simply
    ``h(t_abs)``.
    """
    return coverage_level(t_abs, delta, sigma)


def least_favorable_weight(m: float, delta: float, sigma: float, alpha: float) -> float:
    """Mass ``p`` on ``N(delta, sigma^2)`` in the least favorable two-point null.

    Chosen so that the likelihood ratio ``f`` of :func:`lf_ratio` satisfies
    ``f(C) = f(-C)``:  ``p / (1 - p) = sinh((delta + m) C / sigma^2) / sinh((delta - m) C / sigma^2)``.
    """
    m = float(m)
    delta = _check_positive(delta, "delta")
    sigma = _check_positive(sigma, "sigma")
    alpha = _check_alpha(alpha)
    if not abs(m) < delta:
        raise DomainError(f"alternative m must satisfy |m| < delta, got m={m!r}, delta={delta!r}")
    c = critical_constant(EquivalenceSpec(alpha, delta, sigma)).c
    big = (delta + m) * c / (sigma * sigma)
    small = (delta - m) * c / (sigma * sigma)
    # 1/r = sinh(small)/sinh(big), with the dominant exponentials factored out
    inv_ratio = math.exp(small - big) * math.expm1(-2.0 * small) / math.expm1(-2.0 * big)
    return 1.0 / (1.0 + inv_ratio)


def lf_ratio(x, m: float, delta: float, sigma: float, p: float):
    """Reduced likelihood ratio ``f(x) = p e^{(delta-m)x/sigma^2} + (1-p) e^{-(delta+m)x/sigma^2}``.

    Accepts a scalar or an array of ``x`` values.
    """
    m = float(m)
    delta = _check_positive(delta, "delta")
    sigma = _check_positive(sigma, "sigma")
    p = float(p)
    if not abs(m) < delta:
        raise DomainError(f"|m| must be < delta, got m={m!r}, delta={delta!r}")
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    xs = np.asarray(x, dtype=float)
    s2 = sigma * sigma
    with np.errstate(over="ignore"):
        out = np.exp(
            np.logaddexp(math.log(p) + (delta - m) * xs / s2, math.log1p(-p) - (delta + m) * xs / s2)
        )
    return float(out) if out.ndim == 0 else out


def tost_limit_power(h: float, alpha: float, delta: float, sigma: float) -> float:
    """Limiting power of the TOST under shrinking margins ``delta / sqrt(n)``.

    Equals ``P(-delta/sigma + z - h/sigma < Z < delta/sigma - z - h/sigma)`` with
    ``z = z_{1-alpha}``, and is zero when ``sigma * z >= delta``.
    """
    h = float(h)
    alpha = _check_alpha(alpha)
    delta = _check_positive(delta, "delta")
    sigma = _check_positive(sigma, "sigma")
    z = norm_quantile(1.0 - alpha)
    upper = delta / sigma - z - h / sigma
    lower = -delta / sigma + z - h / sigma
    if upper <= lower:
        return 0.0
    if lower >= 0.0:
        # both endpoints in the upper tail: subtract survival functions instead
        return max(0.0, norm_sf(lower) - norm_sf(upper))
    return max(0.0, norm_cdf(upper) - norm_cdf(lower))


def onesided_local_power(h: float, alpha: float, sigma: float) -> float:
    """Optimal local power ``Phi(h / sigma - z_{1-alpha})`` of a one-sided test at distance ``h``."""
    h = float(h)
    if not h >= 0.0:
        raise DomainError(f"h must be >= 0, got {h!r}")
    alpha = _check_alpha(alpha)
    sigma = _check_positive(sigma, "sigma")
    return norm_cdf(h / sigma - norm_quantile(1.0 - alpha))


def small_margin_limit(alpha: float) -> float:
    """Limit of ``C(alpha, eps, 1)`` as ``eps -> 0``, namely ``z_{(1+alpha)/2}``.

    With a vanishing margin ``h(C) -> 2 Phi(C) - 1``, so the limit solves
    ``2 Phi(C) - 1 = alpha``.
    """
    return norm_quantile(0.5 + 0.5 * _check_alpha(alpha))
