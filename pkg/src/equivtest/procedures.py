"""Equivalence test procedures.

Each procedure returns a :class:`TestDecision`. Rejecting the null hypothesis
means declaring equivalence. For the UMP and plug-in tests rejection is
``statistic <= critical_value``; the boundary has probability zero under every
continuous model, and the non-strict form makes ``reject == (p_value <= alpha)``
hold exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .critical import EquivalenceSpec, coverage_level, critical_constant, exact_power
from .distfn import t_cdf, t_quantile, t_sf
from .errors import DegenerateDataError, DomainError, SingularMatrixError
from .models import FunctionalG, ModelSpec, functional_sd

__all__ = [
    "Method",
    "TestDecision",
    "ump_known_sigma",
    "ump_linear_gaussian",
    "tost",
    "plugin_test",
    "asymptotic_power_bound",
]


class Method(str, Enum):
    UMP_KNOWN_SIGMA = "UMP_KNOWN_SIGMA"
    UMP_LINEAR_GAUSSIAN = "UMP_LINEAR_GAUSSIAN"
    TOST = "TOST"
    PLUGIN = "PLUGIN"


@dataclass(frozen=True)
class TestDecision:
    """Outcome of one equivalence test.

    ``spec.sigma`` is the standard deviation of ``statistic`` (for the TOST,
    of the sample mean); ``sigma_used`` is the model-scale value that went in:
    the known sigma, ``sqrt(a' Sigma a)``, ``S_n`` or the estimated functional
    standard deviation.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    method: Method
    statistic: float
    critical_value: float
    reject: bool
    p_value: float
    sigma_used: float
    spec: EquivalenceSpec
    n: int
    diagnostics: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "n": self.n,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "sigma_used": self.sigma_used,
            "alpha": self.spec.alpha,
            "delta": self.spec.delta,
            "diagnostics": list(self.diagnostics),
        }


def _sample(data) -> np.ndarray:
    x = np.asarray(data, dtype=float).reshape(-1)
    if x.size == 0:
        raise DomainError("data set is empty")
    if not np.all(np.isfinite(x)):
        raise DomainError("data contain non-finite values")
    return x


def ump_known_sigma(data, sigma: float, alpha: float, Delta: float) -> TestDecision:
    """UMP test of ``|mu| >= Delta`` for i.i.d. ``N(mu, sigma^2)`` with sigma known.

    Rejects when ``sqrt(n) |mean| <= C(alpha, sqrt(n) Delta, sigma)``.
    """
    x = _sample(data)
    n = x.size
    root_n = math.sqrt(n)
    spec = EquivalenceSpec(alpha, root_n * float(Delta), sigma)
    c = critical_constant(spec).c
    stat = root_n * abs(float(x.mean()))
    return TestDecision(
        method=Method.UMP_KNOWN_SIGMA,
        statistic=stat,
        critical_value=c,
        reject=stat <= c,
        p_value=coverage_level(stat, spec.delta, spec.sigma),
        sigma_used=spec.sigma,
        spec=spec,
        n=n,
    )


def ump_linear_gaussian(x, a, Sigma, alpha: float, delta: float) -> TestDecision:
    """UMP test of ``|a' mu| >= delta`` from one draw ``x ~ N_k(mu, Sigma)``, Sigma known.

    Sigma may be singular; only ``a' Sigma a > 0`` is required.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    cov = np.array(Sigma, dtype=float, ndmin=2)
    k = x.size
    if a.size != k or cov.shape != (k, k):
        raise DomainError(f"dimension mismatch: x has {k} entries, a has {a.size}, Sigma is {cov.shape}")
    scale = max(1.0, float(np.abs(cov).max()))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
        raise DomainError("Sigma must be symmetric")
    if np.linalg.eigvalsh(cov).min() < -1e-10 * scale:
        raise DomainError("Sigma must be positive semidefinite")
    var = float(a @ cov @ a)
    if not var > 0.0:
        raise DomainError("a' Sigma a must be positive")
    spec = EquivalenceSpec(alpha, delta, math.sqrt(var))
    c = critical_constant(spec).c
    stat = abs(float(a @ x))
    return TestDecision(
        method=Method.UMP_LINEAR_GAUSSIAN,
        statistic=stat,
        critical_value=c,
        reject=stat <= c,
        p_value=coverage_level(stat, spec.delta, spec.sigma),
        sigma_used=spec.sigma,
        spec=spec,
        n=1,
    )


def tost(data, alpha: float, Delta: float) -> TestDecision:
    """Two one-sided t-tests for ``|mu| >= Delta``.

    Rejects when ``|mean| <= Delta - S_n t_{n-1, 1-alpha} / sqrt(n)`` with the
    unbiased ``S_n``; never rejects once that bound is not positive. The
    p-value is the larger of the two one-sided t-test p-values.
    """
    x = _sample(data)
    n = x.size
    if n < 2:
        raise DegenerateDataError("TOST needs at least two observations")
    Delta = float(Delta)
    mean = float(x.mean())
    s = float(x.std(ddof=1))
    if not s > 0.0:
        raise DegenerateDataError("TOST: sample variance is zero")
    root_n = math.sqrt(n)
    df = n - 1
    spec = EquivalenceSpec(alpha, Delta, s / root_n)
    t_crit = t_quantile(1.0 - spec.alpha, df)
    cv = Delta - s * t_crit / root_n
    stat = abs(mean)
    p_lower = t_sf(root_n * (mean + Delta) / s, df)
    p_upper = t_cdf(root_n * (mean - Delta) / s, df)
    diagnostics = () if cv > 0.0 else ("critical value is not positive: the test cannot reject",)
    return TestDecision(
        method=Method.TOST,
        statistic=stat,
        critical_value=cv,
        reject=cv > 0.0 and stat <= cv,
        p_value=max(p_lower, p_upper),
        sigma_used=s,
        spec=spec,
        n=n,
        diagnostics=diagnostics,
    )


def plugin_test(
    model: ModelSpec,
    g: FunctionalG,
    data,
    alpha: float,
    delta: float,
    sigma_hat: float | None = None,
) -> TestDecision:
    """Asymptotically optimal test of ``|g(theta)| >= delta / sqrt(n)``.

    Rejects when ``sqrt(n) |g(theta_hat)| <= C(alpha, delta, sigma_hat)`` with
    ``theta_hat`` the MLE. ``sigma_hat`` defaults to the estimated asymptotic
    standard deviation of ``g`` at the MLE; any consistent estimate may be passed.
    """
    try:
        est = model.fit(data)
    except DegenerateDataError as exc:
        raise DegenerateDataError(f"plugin test ({model.name}): {exc}") from exc
    theta_hat = est.theta
    n = len(model.check_data(data))
    if sigma_hat is None:
        try:
            sigma_hat = functional_sd(model, g, theta_hat)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"plugin test ({model.name}) at the MLE: {exc}", exc.condition) from exc
    spec = EquivalenceSpec(alpha, delta, sigma_hat)
    c = critical_constant(spec).c
    stat = math.sqrt(n) * abs(g(theta_hat))
    return TestDecision(
        method=Method.PLUGIN,
        statistic=stat,
        critical_value=c,
        reject=stat <= c,
        p_value=coverage_level(stat, spec.delta, spec.sigma),
        sigma_used=spec.sigma,
        spec=spec,
        n=n,
        diagnostics=est.notes,
    )


def asymptotic_power_bound(
    delta_prime: float,
    model: ModelSpec,
    g: FunctionalG,
    theta0,
    alpha: float,
    delta: float,
) -> float:
    """Upper bound on the limiting power at local alternatives ``theta0 + h / sqrt(n)``.

    ``delta_prime = |g'(theta0) h|`` must be below ``delta``, and ``theta0`` must
    satisfy ``g(theta0) = 0``. The bound is attained by :func:`plugin_test`.
    """
    theta0 = model.check_theta(theta0)
    if abs(g(theta0)) > 1e-9:
        raise DomainError(f"asymptotic bound needs g(theta0) = 0, got {g(theta0)!r}")
    delta_prime = float(delta_prime)
    if not 0.0 <= delta_prime < float(delta):
        raise DomainError(f"need 0 <= delta_prime < delta, got delta_prime={delta_prime!r}, delta={delta!r}")
    sigma0 = functional_sd(model, g, theta0)
    return exact_power(delta_prime, EquivalenceSpec(alpha, delta, sigma0))
