"""classdp: label-indistinguishable Gaussian query release.

Given one Gaussian query distribution per class and a neighborhood graph
of class pairs that must stay indistinguishable, this package computes
privacy-loss curves, designs the additive Gaussian noise that best hides
the class under a trace budget, and applies the mechanism to ARMA
forecasts of positive seasonal series.
"""

from .arma import (
    ArmaModel,
    ForecastArtifact,
    ForecastDistribution,
    InsufficientDataError,
    NearUnitRootError,
    PipelineResult,
    SeasonalLogSeries,
    autocovariance,
    conditional_forecast,
    dp_forecast_pipeline,
    fit_arma,
    forecast_distribution,
    from_log_residual,
    impulse_response,
    load_series_csv,
    save_forecast_csv,
    to_log_residual,
)
from .ensemble import (
    ClassEnsemble,
    ClassGaussian,
    EnsembleValidationError,
    NeighborhoodGraph,
    Violation,
    ensemble_from_dict,
    ensemble_to_dict,
    gaussian_tail_q,
    load_ensemble,
    matrix_sqrt_sym,
    psd_project,
    require_valid_ensemble,
    save_ensemble,
    validate_ensemble,
)
from .experiments import (
    ConfigError,
    KMeansResult,
    ScenarioConfig,
    StageError,
    cluster_graph,
    config_from_dict,
    config_to_dict,
    daily_profile_features,
    gen_synthetic_scenario,
    kmeans_cluster,
    load_config,
    run_curve_experiment,
    run_stage,
    validate_config,
    write_experiment_csv,
)
from .noise import (
    AccuracyBudget,
    DescentStep,
    DescentTrace,
    NoiseSpec,
    ZeroTraceProjectionError,
    cost_J,
    design_noise,
    extract_noise_covariance,
    load_noise_spec,
    noise_spec_from_dict,
    noise_spec_to_dict,
    optimize_inverse_covariances,
    privatize_query,
    released_ensemble,
    sample_noise,
    save_noise_spec,
    step_size_bound,
    surrogate_cost_g,
    trace_to_csv,
    white_noise_spec,
    zero_noise_spec,
)
from .privacy import (
    PairGeometry,
    PrivacyCurve,
    chernoff_delta_bound,
    curve_to_csv,
    delta_exact_equal_cov,
    delta_monte_carlo,
    epsilon_delta_curve,
    gaussian_sensitivity,
    pair_geometry,
    privacy_loss,
    whitened_loss,
)
from .version import __version__

__all__ = [
    "__version__",
    "AccuracyBudget",
    "ArmaModel",
    "ClassEnsemble",
    "ClassGaussian",
    "ConfigError",
    "DescentStep",
    "DescentTrace",
    "EnsembleValidationError",
    "ForecastArtifact",
    "ForecastDistribution",
    "InsufficientDataError",
    "KMeansResult",
    "NearUnitRootError",
    "NeighborhoodGraph",
    "NoiseSpec",
    "PairGeometry",
    "PipelineResult",
    "PrivacyCurve",
    "ScenarioConfig",
    "SeasonalLogSeries",
    "StageError",
    "Violation",
    "ZeroTraceProjectionError",
    "autocovariance",
    "chernoff_delta_bound",
    "cluster_graph",
    "conditional_forecast",
    "config_from_dict",
    "config_to_dict",
    "cost_J",
    "curve_to_csv",
    "daily_profile_features",
    "delta_exact_equal_cov",
    "delta_monte_carlo",
    "design_noise",
    "dp_forecast_pipeline",
    "ensemble_from_dict",
    "ensemble_to_dict",
    "epsilon_delta_curve",
    "extract_noise_covariance",
    "fit_arma",
    "forecast_distribution",
    "from_log_residual",
    "gaussian_sensitivity",
    "gaussian_tail_q",
    "gen_synthetic_scenario",
    "impulse_response",
    "kmeans_cluster",
    "load_config",
    "load_ensemble",
    "load_noise_spec",
    "load_series_csv",
    "matrix_sqrt_sym",
    "noise_spec_from_dict",
    "noise_spec_to_dict",
    "optimize_inverse_covariances",
    "pair_geometry",
    "privacy_loss",
    "privatize_query",
    "psd_project",
    "released_ensemble",
    "require_valid_ensemble",
    "run_curve_experiment",
    "run_stage",
    "sample_noise",
    "save_ensemble",
    "save_forecast_csv",
    "save_noise_spec",
    "step_size_bound",
    "surrogate_cost_g",
    "to_log_residual",
    "trace_to_csv",
    "validate_config",
    "validate_ensemble",
    "white_noise_spec",
    "whitened_loss",
    "write_experiment_csv",
    "zero_noise_spec",
]
