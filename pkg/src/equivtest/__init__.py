"""Optimal equivalence tests for normal means and smooth parametric functionals."""

from .critical import (
    CriticalConstant,
    EquivalenceSpec,
    coverage_level,
    critical_constant,
    critical_value,
    exact_power,
    least_favorable_weight,
    lf_ratio,
    onesided_local_power,
    p_value,
    small_margin_limit,
    tost_limit_power,
)
from .distfn import betainc, norm_cdf, norm_pdf, norm_quantile, norm_sf, t_cdf, t_pdf, t_quantile, t_sf
from .errors import DegenerateDataError, DomainError, SingularMatrixError
from .linalg import mat_inverse
from .models import (
    BernoulliModel,
    Estimate,
    FunctionalG,
    GaussianMeanModel,
    ModelSpec,
    NormalModel,
    TwoSampleNormalModel,
    fisher_information,
    functional_sd,
    make_model,
    mle,
    score_statistic,
)
from .montecarlo import (
    ReferenceSource,
    SimConfig,
    SimReport,
    boundary_size_sweep,
    compare_procedures,
    estimate_rejection,
    power_curve,
)
from .procedures import (
    Method,
    TestDecision,
    asymptotic_power_bound,
    plugin_test,
    tost,
    ump_known_sigma,
    ump_linear_gaussian,
)

__version__ = "0.1.0"
