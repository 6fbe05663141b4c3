"""Monte Carlo estimation of size and power for the equivalence tests.

Replicate ``i`` of a run draws its data from the counter-based Philox
generator keyed by the master seed, started at counter block ``(0, i, 0, 0)``.
Its stream is a fixed function of (seed, i), so the outcome of a replicate does
not depend on which worker runs it, and aggregate reports are bit-identical for
any worker count.

Margins are given on the ``sqrt(n)`` scale: ``delta`` here is the local margin,
and the raw equivalence margin on the scale of ``g`` is ``delta / sqrt(n)``.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np

from .critical import EquivalenceSpec, exact_power, onesided_local_power, tost_limit_power
from .distfn import norm_quantile
from .errors import DegenerateDataError, DomainError, SingularMatrixError
from .models import FunctionalG, ModelSpec, functional_sd, make_model
from .procedures import TestDecision, plugin_test, tost, ump_known_sigma, ump_linear_gaussian

__all__ = [
    "PROCEDURES",
    "ReferenceSource",
    "ReplicateStreams",
    "SimConfig",
    "SimReport",
    "simulate_outcomes",
    "estimate_rejection",
    "compare_procedures",
    "power_curve",
    "boundary_size_sweep",
]

PROCEDURES = ("ump_known_sigma", "ump_linear_gaussian", "tost", "plugin")

REJECT, ACCEPT, ERROR = 1, 0, -1

# failures a replicate may legitimately hit; anything else is a bug and propagates
_REPLICATE_ERRORS = (DegenerateDataError, DomainError, SingularMatrixError, ArithmeticError)


class ReferenceSource(str, Enum):
    EXACT_POWER = "EXACT_POWER"
    BOUND_EQ9 = "BOUND_EQ9"
    TOST_LIMIT_EQ15 = "TOST_LIMIT_EQ15"
    ONESIDED_BOUND = "ONESIDED_BOUND"
    NONE = "NONE"


@dataclass(frozen=True)
class SimConfig:
    """One simulation setting.

    Attributes:
        procedure: one of ``PROCEDURES``
        model: model name understood by :func:`equivtest.models.make_model`
        theta: data-generating parameter, or the base point ``theta0`` when a
            local alternative is requested through ``shift`` or ``h``
        n: sample size per replicate
        replications: number of replicates R
        seed: master seed (unsigned 64-bit)
        alpha: test level
        delta: margin on the ``sqrt(n)`` scale
        shift: local distance ``delta'``; data come from
            ``theta + (shift / sqrt(n)) grad / |grad|^2`` so that
            ``g'(theta) h = shift``
        h: explicit local direction; data come from ``theta + h / sqrt(n)``
        sigma_estimator: plug-in scale estimate, ``"mle"`` or ``"unbiased"``
            (the latter uses the ``n - 1`` divisor, normal model only)
        reference: ``"auto"``, ``"onesided"`` or ``"none"``
        model_options: keyword arguments for the model constructor
            (``allocation``, ``reference``, ``Sigma``, ``a``)
    """

    procedure: str
    model: str = "normal"
    theta: tuple[float, ...] = (0.0, 1.0)
    n: int = 100
    replications: int = 10_000
    seed: int = 0
    alpha: float = 0.05
    delta: float = 1.0
    shift: float = 0.0
    h: tuple[float, ...] | None = None
    sigma_estimator: str = "mle"
    reference: str = "auto"
    model_options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.procedure not in PROCEDURES:
            raise DomainError(f"unknown procedure {self.procedure!r}; choose from {PROCEDURES}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise DomainError(f"replications must be a positive integer, got {self.replications!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        EquivalenceSpec(self.alpha, self.delta)
        if self.h is not None and self.shift != 0.0:
            raise DomainError("give either shift or h, not both")
        if self.sigma_estimator not in ("mle", "unbiased"):
            raise DomainError(f"sigma_estimator must be 'mle' or 'unbiased', got {self.sigma_estimator!r}")
        if self.reference not in ("auto", "onesided", "none"):
            raise DomainError(f"reference must be 'auto', 'onesided' or 'none', got {self.reference!r}")
        object.__setattr__(self, "theta", tuple(float(t) for t in np.atleast_1d(self.theta)))
        if self.h is not None:
            object.__setattr__(self, "h", tuple(float(t) for t in np.atleast_1d(self.h)))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "shift", float(self.shift))
        if self.procedure in ("ump_known_sigma", "tost") and self.model != "normal":
            raise DomainError(f"{self.procedure} simulates the one-sample normal model only")
        if self.procedure == "ump_linear_gaussian" and self.model != "gaussian_mean":
            raise DomainError("ump_linear_gaussian simulates the gaussian_mean model only")
        if self.sigma_estimator == "unbiased" and self.model != "normal":
            raise DomainError("the unbiased scale estimate is defined for the normal model only")
        # fail early on a bad model or parameter rather than in every replicate
        setting = _Setting(self)
        setting.model.check_theta(setting.theta_n)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta"] = list(self.theta)
        out["h"] = None if self.h is None else list(self.h)
        return out


@dataclass(frozen=True)
class SimReport:
    """Monte Carlo rejection-rate estimate for one procedure and setting.

    The rate and its standard error use the replicates that completed
    (``n_reject + n_accept``); failed replicates are counted in ``n_error``.
    """

    procedure: str
    n: int
    replications: int
    n_reject: int
    n_accept: int
    n_error: int
    rejection_rate: float
    mc_standard_error: float
    ci95: tuple[float, float]
    reference_value: float | None
    reference_source: ReferenceSource
    z_discrepancy: float | None
    theta: tuple[float, ...]
    grid_value: float | None = None
    errors: tuple[tuple[str, int], ...] = ()

    def within(self, tol_abs: float = 0.0, n_se: float = 3.0) -> bool:
        """Whether the rate is within ``tol_abs + n_se * SE`` of the reference."""
        if self.reference_value is None:
            raise ValueError("report has no reference value")
        return abs(self.rejection_rate - self.reference_value) <= tol_abs + n_se * self.mc_standard_error

    def to_dict(self) -> dict:
        return {
            "procedure": self.procedure,
            "n": self.n,
            "replications": self.replications,
            "n_reject": self.n_reject,
            "n_accept": self.n_accept,
            "n_error": self.n_error,
            "rejection_rate": self.rejection_rate,
            "mc_standard_error": self.mc_standard_error,
            "ci95_low": self.ci95[0],
            "ci95_high": self.ci95[1],
            "reference_value": self.reference_value,
            "reference_source": self.reference_source.value,
            "z_discrepancy": self.z_discrepancy,
            "theta": list(self.theta),
            "grid_value": self.grid_value,
            "errors": [{"message": m, "count": c} for m, c in self.errors],
        }


class _Setting:
    """Everything derived from a SimConfig that replicates share."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.model: ModelSpec = make_model(config.model, **config.model_options)
        self.g: FunctionalG = self.model.default_functional()
        self.root_n = math.sqrt(config.n)
        theta0 = self.model.check_theta(config.theta)
        self.theta0 = theta0
        if config.h is not None:
            h = np.asarray(config.h, dtype=float)
            if h.shape != theta0.shape:
                raise DomainError(f"h must have {theta0.size} coordinates")
            self.theta_n = theta0 + h / self.root_n
        elif config.shift != 0.0:
            grad = self.g.gradient(theta0)
            self.theta_n = theta0 + (config.shift / self.root_n) * grad / float(grad @ grad)
        else:
            self.theta_n = theta0
        self.local = config.h is not None or config.shift != 0.0

    def procedure(self) -> Callable[[np.ndarray], TestDecision]:
        cfg = self.config
        raw_margin = cfg.delta / self.root_n
        if cfg.procedure == "ump_known_sigma":
            sigma = self.theta_n[1]
            return lambda data: ump_known_sigma(data, sigma, cfg.alpha, raw_margin)
        if cfg.procedure == "tost":
            return lambda data: tost(data, cfg.alpha, raw_margin)
        if cfg.procedure == "ump_linear_gaussian":
            model = self.model
            a = model.a
            cov_mean = model.Sigma / cfg.n
            return lambda data: ump_linear_gaussian(data.mean(axis=0), a, cov_mean, cfg.alpha, raw_margin)
        model, g = self.model, self.g
        if cfg.sigma_estimator == "unbiased":
            return lambda data: plugin_test(model, g, data, cfg.alpha, cfg.delta, sigma_hat=float(np.std(data, ddof=1)))
        return lambda data: plugin_test(model, g, data, cfg.alpha, cfg.delta)

    def reference(self) -> tuple[float | None, ReferenceSource]:
        cfg = self.config
        if cfg.reference == "none":
            return None, ReferenceSource.NONE
        g_n = self.g(self.theta_n)
        local_gap = self.root_n * g_n
        if cfg.procedure == "ump_linear_gaussian":
            a = self.model.a
            sigma = math.sqrt(float(a @ self.model.Sigma @ a))
        else:
            # the local experiment is evaluated at theta0 when one was given
            at = self.theta0 if self.local else self.theta_n
            sigma = functional_sd(self.model, self.g, at)
        if cfg.reference == "onesided":
            inward = max(0.0, cfg.delta - abs(local_gap))
            return onesided_local_power(inward, cfg.alpha, sigma), ReferenceSource.ONESIDED_BOUND
        if cfg.procedure in ("ump_known_sigma", "ump_linear_gaussian"):
            return exact_power(abs(local_gap), EquivalenceSpec(cfg.alpha, cfg.delta, sigma)), ReferenceSource.EXACT_POWER
        if cfg.procedure == "tost":
            return tost_limit_power(local_gap, cfg.alpha, cfg.delta, sigma), ReferenceSource.TOST_LIMIT_EQ15
        return exact_power(abs(local_gap), EquivalenceSpec(cfg.alpha, cfg.delta, sigma)), ReferenceSource.BOUND_EQ9


class ReplicateStreams:
    """Per-replicate random streams derived from a master seed.

    Replicate ``i`` gets Philox(key=seed) positioned at counter ``(0, i, 0, 0)``;
    each replicate owns ``2**64`` counter blocks, so streams never overlap.
    One bit generator is reused and repositioned, which is much cheaper than
    building a fresh one per replicate and yields the same numbers.
    """

    def __init__(self, seed: int):
        self._bitgen = np.random.Philox(key=int(seed))
        self._gen = np.random.Generator(self._bitgen)
        self._key = self._bitgen.state["state"]["key"]

    def __call__(self, index: int) -> np.random.Generator:
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array([0, index, 0, 0], dtype=np.uint64), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


def _run_block(
    configs: Sequence[SimConfig], start: int, stop: int
) -> tuple[np.ndarray, list[Counter]]:
    """Outcomes of replicates ``start..stop-1`` for configs sharing one data stream."""
    base = _Setting(configs[0])
    procedures = [_Setting(c).procedure() for c in configs]
    outcomes = np.empty((len(configs), stop - start), dtype=np.int8)
    messages = [Counter() for _ in configs]
    streams = ReplicateStreams(base.config.seed)
    for j, i in enumerate(range(start, stop)):
        data = base.model.sample(base.theta_n, base.config.n, streams(i))
        for p, proc in enumerate(procedures):
            try:
                outcomes[p, j] = REJECT if proc(data).reject else ACCEPT
            except _REPLICATE_ERRORS as exc:
                outcomes[p, j] = ERROR
                messages[p][f"{type(exc).__name__}: {exc}"] += 1
    return outcomes, messages


def _block_bounds(total: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, total))
    edges = np.linspace(0, total, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _same_stream(configs: Sequence[SimConfig]) -> None:
    first = configs[0]
    for c in configs[1:]:
        if (c.model, c.model_options, c.theta, c.n, c.replications, c.seed, c.shift, c.h) != (
            first.model,
            first.model_options,
            first.theta,
            first.n,
            first.replications,
            first.seed,
            first.shift,
            first.h,
        ):
            raise DomainError("procedures compared on one data stream must share model, theta, n, R and seed")


def simulate_outcomes(
    configs: SimConfig | Sequence[SimConfig], workers: int = 1
) -> tuple[np.ndarray, list[Counter]]:
    """Per-replicate outcomes (1 reject, 0 accept, -1 error), one row per config.

    All configs must describe the same data stream; each replicate's data set is
    generated once and handed to every procedure.
    """
    if isinstance(configs, SimConfig):
        configs = [configs]
    configs = list(configs)
    _same_stream(configs)
    total = configs[0].replications
    bounds = _block_bounds(total, workers)
    if len(bounds) == 1:
        return _run_block(configs, 0, total)
    with ProcessPoolExecutor(max_workers=len(bounds)) as pool:
        parts = list(pool.map(_run_block, [configs] * len(bounds), *zip(*bounds)))
    outcomes = np.concatenate([p[0] for p in parts], axis=1)
    messages = [sum((p[1][k] for p in parts), Counter()) for k in range(len(configs))]
    return outcomes, messages


def _summarize(config: SimConfig, row: np.ndarray, messages: Counter, grid_value: float | None) -> SimReport:
    n_reject = int(np.count_nonzero(row == REJECT))
    n_accept = int(np.count_nonzero(row == ACCEPT))
    n_error = int(row.size - n_reject - n_accept)
    done = n_reject + n_accept
    rate = n_reject / done if done else math.nan
    se = math.sqrt(rate * (1.0 - rate) / done) if done else math.nan
    half = norm_quantile(0.975) * se
    ci = (max(0.0, rate - half), min(1.0, rate + half)) if done else (math.nan, math.nan)
    setting = _Setting(config)
    ref, source = setting.reference()
    z = None
    if ref is not None and done:
        diff = rate - ref
        if se > 0.0:
            z = diff / se
        elif diff != 0.0:
            z = math.copysign(math.inf, diff)
        else:
            z = 0.0
    return SimReport(
        procedure=config.procedure,
        n=config.n,
        replications=config.replications,
        n_reject=n_reject,
        n_accept=n_accept,
        n_error=n_error,
        rejection_rate=rate,
        mc_standard_error=se,
        ci95=ci,
        reference_value=ref,
        reference_source=source,
        z_discrepancy=z,
        theta=tuple(float(t) for t in setting.theta_n),
        grid_value=grid_value,
        errors=tuple(sorted(messages.items())),
    )


def estimate_rejection(config: SimConfig, workers: int = 1, grid_value: float | None = None) -> SimReport:
    """Estimate the rejection probability of ``config.procedure`` by simulation."""
    outcomes, messages = simulate_outcomes([config], workers)
    return _summarize(config, outcomes[0], messages[0], grid_value)


def compare_procedures(
    config: SimConfig, procedures: Sequence[str], workers: int = 1, grid_value: float | None = None
) -> dict[str, SimReport]:
    """Run several procedures on identical simulated data sets."""
    if not procedures:
        raise DomainError("no procedures given")
    configs = [replace(config, procedure=p) for p in procedures]
    outcomes, messages = simulate_outcomes(configs, workers)
    return {c.procedure: _summarize(c, outcomes[k], messages[k], grid_value) for k, c in enumerate(configs)}


def _run_point(config: SimConfig, procedures: Sequence[str] | None, workers: int, grid_value: float | None) -> list[SimReport]:
    if procedures is None:
        return [estimate_rejection(config, workers, grid_value)]
    return list(compare_procedures(config, procedures, workers, grid_value).values())


def power_curve(
    config: SimConfig, grid: Sequence[float], workers: int = 1, procedures: Sequence[str] | None = None
) -> list[SimReport]:
    """Reports along a grid of local distances ``delta'`` (data drawn at ``theta`` shifted by each).

    With ``procedures`` given, every procedure runs on the same data at each
    grid point; reports are ordered by grid point, then procedure.
    """
    grid = [float(v) for v in grid]
    if not grid:
        raise DomainError("power curve grid is empty")
    if any(not v >= 0.0 for v in grid):
        raise DomainError("power curve grid values must be >= 0")
    reports = []
    for v in grid:
        reports += _run_point(replace(config, shift=v, h=None), procedures, workers, v)
    return reports


def boundary_size_sweep(
    config: SimConfig,
    boundary_points: Sequence[Sequence[float]],
    workers: int = 1,
    procedures: Sequence[str] | None = None,
) -> list[SimReport]:
    """Rejection rates at parameters on the null boundary ``|g(theta)| = delta / sqrt(n)``."""
    if not boundary_points:
        raise DomainError("no boundary points given")
    setting = _Setting(config)
    target = config.delta / setting.root_n
    reports = []
    for point in boundary_points:
        theta = setting.model.check_theta(point)
        gap = abs(abs(setting.g(theta)) - target)
        if gap > 1e-9:
            raise DomainError(f"theta={theta.tolist()} is not on the null boundary (off by {gap:.3e})")
        reports += _run_point(replace(config, theta=tuple(theta), shift=0.0, h=None), procedures, workers, None)
    return reports
