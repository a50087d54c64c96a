"""Split conformal prediction for fields sampled on structured grids."""

__version__ = "0.1.0"

from .conformal import (
    CalibrationResult,
    CoverageReport,
    calibrate,
    coverage,
    coverage_from_scores,
    functional_radius,
    log_volume_score,
    nonconformity_scores,
    quantile_index,
)
from .errors import (
    ConvergenceError,
    DegenerateDenominatorError,
    DegenerateOffsetError,
    ExperimentError,
    FormatError,
    InvalidArgumentError,
    NumericError,
)
from .forecast import RolloutDiagnostics, StepDiagnostics, crps_ensemble, rollout_diagnostics, step_diagnostics
from .grid import (
    Field,
    Grid,
    GridKind,
    discretize,
    make_grid,
    quadrature_weights,
    relative_error,
    relative_weighted_error,
    resample,
    weighted_norm,
)
from .intervals import adjust_quantile_bounds, ensemble_mean, mc_envelope
from .surrogates import (
    SpectralOperator,
    TripletPredictor,
    ensemble_predict,
    fit_quantile_triplet,
    fit_spectral_operator,
    predict,
)
from .transport import (
    RadiusDecomposition,
    TransportFit,
    decompose_radius,
    extrapolate_tau,
    fit_log_linear,
    resolution_sweep,
)
