"""Yield estimation and optimization under truncated Gaussian manufacturing uncertainty."""

from .errors import (
    ConfigurationError,
    DegenerateTruncationError,
    DomainError,
    SurrogateFitError,
    YieldOptError,
)
from .uq import RngStream, UncertainSpec, draw_offsets, gaussian_pdf, sample_truncated
from .qoi import (
    DesignPoint,
    HalfSpaceModel,
    PerformanceSpec,
    QoiModel,
    RangeGrid,
    WaveguideConfig,
    WaveguideModel,
    classify,
    halfspace_oracle,
    is_in_safe_domain,
    waveguide_model,
)
from .estimate import (
    HybridEstimator,
    MonteCarloEstimator,
    SurrogatePool,
    YieldEstimate,
    estimate_yield_hybrid,
    estimate_yield_mc,
    sigma_mc,
)
from .deriv import (
    BfgsState,
    assemble_mixed_hessian,
    bfgs_update,
    fd_grad_det,
    grad_yield_mean,
    hess_yield_mean,
)
from .optimize import (
    STRATEGIES,
    OptimizerConfig,
    Problem,
    RunRecord,
    compare_strategies,
    nelder_mead_reference,
    newton_mixed,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
