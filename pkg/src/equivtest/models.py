"""Parametric families, smooth functionals and the quantities built from them.

A model exposes its per-observation log-density, score (gradient of the
log-density in the parameter), Fisher information, closed-form maximum
likelihood estimate and a sampler. Every family shipped here is quadratic mean
differentiable on its whole parameter domain, so the score vector is the
normalized sum of log-density gradients.

Data sets are numpy arrays with one row per observation:

* ``NormalModel`` and ``BernoulliModel``: shape ``(n,)``
* ``TwoSampleNormalModel``: shape ``(n, 2)`` of ``(group, value)`` with group in {1, 2}
* ``GaussianMeanModel``: shape ``(n, k)``
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateDataError, DomainError, SingularMatrixError
from .linalg import mat_inverse

__all__ = [
    "Estimate",
    "FunctionalG",
    "ModelSpec",
    "NormalModel",
    "TwoSampleNormalModel",
    "BernoulliModel",
    "GaussianMeanModel",
    "score_statistic",
    "fisher_information",
    "mle",
    "functional_sd",
    "make_model",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Estimate:
    """Parameter estimate plus notes on anything unusual about how it was formed."""

    theta: np.ndarray
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class FunctionalG:
    """Real-valued parameter of interest ``g(theta)`` and its gradient."""

    g: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = "g"

    def __call__(self, theta) -> float:
        return float(self.g(np.asarray(theta, dtype=float)))

    def gradient(self, theta) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(theta, dtype=float)), dtype=float).reshape(-1)

    @classmethod
    def linear(cls, coef, offset: float = 0.0, name: str | None = None) -> "FunctionalG":
        """``g(theta) = coef . theta - offset``."""
        coef = np.array(coef, dtype=float).reshape(-1)
        coef.setflags(write=False)
        offset = float(offset)
        label = name or f"linear({', '.join(f'{c:g}' for c in coef)}) - {offset:g}"
        return cls(g=lambda th: float(coef @ th) - offset, grad=lambda th: coef, name=label)

    def shifted(self, c: float) -> "FunctionalG":
        """The functional ``g - c``; used to re-center asymmetric margins."""
        c = float(c)
        if c == 0.0:
            return self
        base = self.g
        return FunctionalG(g=lambda th: base(th) - c, grad=self.grad, name=f"{self.name} - {c:g}")


class ModelSpec(ABC):
    """A smooth parametric family ``{P_theta : theta in Omega}`` with Omega open in R^k."""

    name: str = "model"
    param_names: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return len(self.param_names)

    @abstractmethod
    def in_domain(self, theta: np.ndarray) -> bool:
        ...

    def check_theta(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)
        if th.shape != (self.k,):
            raise DomainError(f"{self.name}: theta must have {self.k} coordinates, got {th.shape[0]}")
        if not (np.all(np.isfinite(th)) and self.in_domain(th)):
            raise DomainError(f"{self.name}: theta={th.tolist()} is outside the parameter domain")
        return th

    @abstractmethod
    def check_data(self, data) -> np.ndarray:
        """Validate observations against the sample space and return them as an array."""

    @abstractmethod
    def logpdf(self, data, theta) -> np.ndarray:
        """Per-observation log-density."""

    @abstractmethod
    def score(self, data, theta) -> np.ndarray:
        """Per-observation gradient of the log-density, shape ``(n, k)``."""

    @abstractmethod
    def fisher(self, theta) -> np.ndarray:
        ...

    def inverse_fisher(self, theta) -> np.ndarray:
        """``I(theta)^-1``; models with a closed form override this."""
        return mat_inverse(self.fisher(theta))

    @abstractmethod
    def fit(self, data) -> Estimate:
        """Maximum likelihood estimate, with notes when the estimate was adjusted."""

    @abstractmethod
    def sample(self, theta, n: int, rng: np.random.Generator) -> np.ndarray:
        ...

    def default_functional(self) -> FunctionalG:
        raise NotImplementedError(f"{self.name} has no default functional")

    def describe(self) -> dict:
        return {"name": self.name}


def _as_1d(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("expected a non-empty one-dimensional sample")
    if not np.all(np.isfinite(x)):
        raise DomainError("sample contains non-finite values")
    return x


class NormalModel(ModelSpec):
    """``N(mu, sigma^2)`` with ``theta = (mu, sigma)``, ``sigma > 0``."""

    name = "normal"
    param_names = ("mu", "sigma")

    def in_domain(self, theta):
        return theta[1] > 0.0

    def check_data(self, data):
        return _as_1d(data)

    def logpdf(self, data, theta):
        x = self.check_data(data)
        mu, sigma = self.check_theta(theta)
        z = (x - mu) / sigma
        return -_LOG_SQRT_2PI - math.log(sigma) - 0.5 * z * z

    def score(self, data, theta):
        x = self.check_data(data)
        mu, sigma = self.check_theta(theta)
        r = x - mu
        return np.column_stack([r / sigma**2, (r * r - sigma**2) / sigma**3])

    def fisher(self, theta):
        _, sigma = self.check_theta(theta)
        return np.diag([1.0 / sigma**2, 2.0 / sigma**2])

    def inverse_fisher(self, theta):
        _, sigma = self.check_theta(theta)
        return np.diag([sigma**2, 0.5 * sigma**2])

    def fit(self, data):
        x = self.check_data(data)
        mean = float(x.mean())
        # 1/n divisor: the actual maximum likelihood estimate
        sd = float(np.sqrt(np.mean((x - mean) ** 2)))
        if not sd > 0.0:
            raise DegenerateDataError("normal model: sample has zero variance, no interior MLE")
        return Estimate(np.array([mean, sd]))

    def sample(self, theta, n, rng):
        mu, sigma = self.check_theta(theta)
        return rng.normal(mu, sigma, size=n)

    def default_functional(self):
        return FunctionalG.linear([1.0, 0.0], name="mu")


class TwoSampleNormalModel(ModelSpec):
    """Two normal groups with common variance, ``theta = (mu1, mu2, sigma)``.

    Observations are ``(group, value)`` pairs. The group label is itself random,
    equal to 1 with probability ``allocation``, so the pairs are i.i.d. and the
    problem stays a one-sample problem in the pair.
    """

    name = "two_sample_normal"
    param_names = ("mu1", "mu2", "sigma")

    def __init__(self, allocation: float = 0.5):
        allocation = float(allocation)
        if not 0.0 < allocation < 1.0:
            raise DomainError(f"allocation fraction must lie in (0, 1), got {allocation!r}")
        self.allocation = allocation

    def in_domain(self, theta):
        return theta[2] > 0.0

    def check_data(self, data):
        arr = np.asarray(data, dtype=float)
        if arr.ndim == 1 and arr.size == 2:
            arr = arr.reshape(1, 2)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
            raise DomainError("two-sample data must have shape (n, 2): (group, value) rows")
        if not np.all(np.isin(arr[:, 0], (1.0, 2.0))):
            raise DomainError("two-sample group labels must be 1 or 2")
        if not np.all(np.isfinite(arr[:, 1])):
            raise DomainError("two-sample values must be finite")
        return arr

    def _split(self, data, theta):
        arr = self.check_data(data)
        mu1, mu2, sigma = self.check_theta(theta)
        first = arr[:, 0] == 1.0
        means = np.where(first, mu1, mu2)
        return arr[:, 1], first, means, sigma

    def logpdf(self, data, theta):
        y, first, means, sigma = self._split(data, theta)
        z = (y - means) / sigma
        log_w = np.where(first, math.log(self.allocation), math.log1p(-self.allocation))
        return log_w - _LOG_SQRT_2PI - math.log(sigma) - 0.5 * z * z

    def score(self, data, theta):
        y, first, means, sigma = self._split(data, theta)
        r = y - means
        return np.column_stack(
            [np.where(first, r, 0.0) / sigma**2, np.where(first, 0.0, r) / sigma**2, (r * r - sigma**2) / sigma**3]
        )

    def fisher(self, theta):
        _, _, sigma = self.check_theta(theta)
        lam = self.allocation
        return np.diag([lam / sigma**2, (1.0 - lam) / sigma**2, 2.0 / sigma**2])

    def inverse_fisher(self, theta):
        _, _, sigma = self.check_theta(theta)
        lam = self.allocation
        return np.diag([sigma**2 / lam, sigma**2 / (1.0 - lam), 0.5 * sigma**2])

    def fit(self, data):
        arr = self.check_data(data)
        first = arr[:, 0] == 1.0
        if first.all() or not first.any():
            raise DegenerateDataError("two-sample model: both groups need at least one observation")
        y = arr[:, 1]
        m1 = float(y[first].mean())
        m2 = float(y[~first].mean())
        resid = y - np.where(first, m1, m2)
        sd = float(np.sqrt(np.mean(resid * resid)))
        if not sd > 0.0:
            raise DegenerateDataError("two-sample model: zero within-group variance, no interior MLE")
        return Estimate(np.array([m1, m2, sd]))

    def sample(self, theta, n, rng):
        mu1, mu2, sigma = self.check_theta(theta)
        first = rng.random(n) < self.allocation
        values = rng.normal(0.0, sigma, size=n) + np.where(first, mu1, mu2)
        return np.column_stack([np.where(first, 1.0, 2.0), values])

    def default_functional(self):
        return FunctionalG.linear([1.0, -1.0, 0.0], name="mu1 - mu2")

    def describe(self):
        return {"name": self.name, "allocation": self.allocation}


class BernoulliModel(ModelSpec):
    """Bernoulli(p), ``theta = (p,)`` with ``0 < p < 1``."""

    name = "bernoulli"
    param_names = ("p",)

    def __init__(self, reference: float = 0.5):
        self.reference = float(reference)

    def in_domain(self, theta):
        return 0.0 < theta[0] < 1.0

    def check_data(self, data):
        x = _as_1d(data)
        if not np.all((x == 0.0) | (x == 1.0)):
            raise DomainError("Bernoulli observations must be 0 or 1")
        return x

    def logpdf(self, data, theta):
        x = self.check_data(data)
        (p,) = self.check_theta(theta)
        return x * math.log(p) + (1.0 - x) * math.log1p(-p)

    def score(self, data, theta):
        x = self.check_data(data)
        (p,) = self.check_theta(theta)
        return (x / p - (1.0 - x) / (1.0 - p)).reshape(-1, 1)

    def fisher(self, theta):
        (p,) = self.check_theta(theta)
        return np.array([[1.0 / (p * (1.0 - p))]])

    def inverse_fisher(self, theta):
        (p,) = self.check_theta(theta)
        return np.array([[p * (1.0 - p)]])

    def fit(self, data):
        x = self.check_data(data)
        n = x.size
        p_hat = float(x.mean())
        lo = 1.0 / (2.0 * n)
        if p_hat < lo or p_hat > 1.0 - lo:
            clamped = min(max(p_hat, lo), 1.0 - lo)
            return Estimate(
                np.array([clamped]),
                (f"bernoulli MLE {p_hat:g} on the boundary, clamped to {clamped:.12g}",),
            )
        return Estimate(np.array([p_hat]))

    def sample(self, theta, n, rng):
        (p,) = self.check_theta(theta)
        return (rng.random(n) < p).astype(float)

    def default_functional(self):
        return FunctionalG.linear([1.0], offset=self.reference, name=f"p - {self.reference:g}")

    def describe(self):
        return {"name": self.name, "reference": self.reference}


class GaussianMeanModel(ModelSpec):
    """``N_k(mu, Sigma)`` with known covariance and ``theta = mu``.

    ``Sigma`` only needs to be symmetric positive semidefinite for sampling;
    the Fisher information ``Sigma^-1`` additionally needs it to be invertible.
    """

    name = "gaussian_mean"

    def __init__(self, Sigma, a=None):
        cov = np.array(Sigma, dtype=float, ndmin=2)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise DomainError("Sigma must be a square matrix")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise DomainError("Sigma must be symmetric")
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < -1e-10 * max(1.0, evals.max()):
            raise DomainError("Sigma must be positive semidefinite")
        self.Sigma = cov
        self._prec = None
        self._factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
        self.a = None if a is None else np.array(a, dtype=float).reshape(-1)
        self.param_names = tuple(f"mu{i + 1}" for i in range(cov.shape[0]))

    def in_domain(self, theta):
        return True

    def check_data(self, data):
        arr = np.asarray(data, dtype=float)
        if arr.ndim == 1 and arr.size == self.k:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[1] != self.k or arr.shape[0] == 0:
            raise DomainError(f"data must have shape (n, {self.k})")
        return arr

    def _precision(self):
        if self._prec is None:
            self._prec = mat_inverse(self.Sigma)
        return self._prec

    def logpdf(self, data, theta):
        x = self.check_data(data)
        mu = self.check_theta(theta)
        prec = self._precision()
        r = x - mu
        _, logdet = np.linalg.slogdet(self.Sigma)
        return -self.k * _LOG_SQRT_2PI - 0.5 * logdet - 0.5 * np.einsum("ij,jk,ik->i", r, prec, r)

    def score(self, data, theta):
        x = self.check_data(data)
        mu = self.check_theta(theta)
        return (x - mu) @ self._precision()

    def fisher(self, theta):
        self.check_theta(theta)
        return self._precision().copy()

    def inverse_fisher(self, theta):
        self.check_theta(theta)
        self._precision()  # raises if Sigma is singular
        return self.Sigma.copy()

    def fit(self, data):
        return Estimate(self.check_data(data).mean(axis=0))

    def sample(self, theta, n, rng):
        mu = self.check_theta(theta)
        return mu + rng.standard_normal((n, self.k)) @ self._factor.T

    def default_functional(self):
        if self.a is None:
            raise NotImplementedError("GaussianMeanModel needs a coefficient vector a for its functional")
        return FunctionalG.linear(self.a, name="a'mu")

    def describe(self):
        return {
            "name": self.name,
            "Sigma": self.Sigma.tolist(),
            "a": None if self.a is None else self.a.tolist(),
        }


def score_statistic(model: ModelSpec, data, theta0) -> np.ndarray:
    """Normalized score ``Z_n = n^{-1/2} sum_i s(X_i, theta0)``."""
    s = model.score(data, theta0)
    return s.sum(axis=0) / math.sqrt(s.shape[0])


def fisher_information(model: ModelSpec, theta) -> np.ndarray:
    return model.fisher(theta)


def mle(model: ModelSpec, data) -> np.ndarray:
    return model.fit(data).theta


def functional_sd(model: ModelSpec, g: FunctionalG, theta) -> float:
    """Asymptotic standard deviation ``sqrt(g'(theta) I(theta)^-1 g'(theta)^T)``."""
    theta = model.check_theta(theta)
    grad = g.gradient(theta)
    if grad.shape != (model.k,):
        raise DomainError(f"gradient has {grad.size} entries, model has {model.k} parameters")
    try:
        inv = model.inverse_fisher(theta)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"Fisher information at theta={theta.tolist()} is not invertible", exc.condition) from None
    var = float(grad @ inv @ grad)
    if not var > 0.0:
        raise DomainError(f"functional {g.name} has zero asymptotic variance at theta={theta.tolist()}")
    return math.sqrt(var)


_MODELS = {
    "normal": NormalModel,
    "two_sample_normal": TwoSampleNormalModel,
    "bernoulli": BernoulliModel,
    "gaussian_mean": GaussianMeanModel,
}


def make_model(name: str, **options) -> ModelSpec:
    """Build a model by name; ``options`` go to its constructor."""
    try:
        cls = _MODELS[name]
    except KeyError:
        raise DomainError(f"unknown model {name!r}; choose from {sorted(_MODELS)}") from None
    return cls(**options)
