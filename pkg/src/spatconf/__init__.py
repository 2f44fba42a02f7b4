"""Spectral analysis of spatial confounding bias in partially linear models."""

__version__ = "0.1.0"

from .exceptions import (
    DataError,
    DegenerateCovariateError,
    IdentifiabilityError,
    InsufficientFrequencyError,
    NumericalError,
    OutputError,
    PreconditionError,
    SpatConfError,
    UndefinedBiasError,
    ValidationError,
)
from .spectral import (
    FrequencyCoordinates,
    ModelParams,
    SpatialDesign,
    SpectralDecomposition,
    coordinates,
    decompose,
    dense_precision,
    smoothing_weights,
    weighted_inner_product,
)
from .bias import (
    BiasReport,
    LambdaLimits,
    SweepPoint,
    bias_exact,
    bias_lambda_sweep,
    bias_nonspatial,
    bias_spectral,
    estimator_variance,
    lambda_limits,
)
from .estimators import (
    CapMode,
    CapSpec,
    CapSweepResult,
    FitResult,
    cap_sweep,
    capped_spatial_plus,
    fit_gls,
    fit_nonspatial,
    fit_spatial,
    select_lambda_gcv,
    spatial_plus,
)
from .bases import (
    FrequencyBasis,
    GPExponential,
    GraphLaplacian,
    ThinPlateEigen,
    ThinPlateRadial,
    build_design,
    build_gp_exponential,
    build_graph_laplacian,
    build_thin_plate,
    reparameterize,
)
from .simulation import (
    ScenarioSpec,
    StudySummary,
    capped_grid_study,
    generate_scenario,
    lambda_sweep_study,
    preset,
    run_study,
)
from .stations import StationDataset, export_csv, ingest_csv
from .application import AnalysisConfig, analyse_month, monthly_analysis
from .plotdata import emit_plot_data

__all__ = [name for name in dir() if not name.startswith("_")]
