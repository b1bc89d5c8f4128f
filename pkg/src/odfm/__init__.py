"""Outlier detection and size estimation for dynamic factor models.

The package fits the static-loading dynamic factor model y_t = A x_t +
eta_t to an N x T panel, tests in the frequency domain whether such a
model can fit at all, detects additive outliers by projecting onto the
orthogonal complement of the loading space, and splits each outlier's
size into a factor-level and a model-level component.
"""

__version__ = "0.1.0"

from .adequacy import AdequacyResult, BandMoments, adequacy_test, band_moments, reality_lrt
from .datamodel import (
    MultiSeries,
    TransformSpec,
    apply_transform,
    center,
    load_csv,
    replace_at,
    save_csv,
)
from .factors import (
    FactorModel,
    estimate_jointdiag,
    estimate_ml,
    estimate_svd,
    factor_scores,
    select_k,
)
from .moments import (
    EigenSystem,
    LagCovSet,
    SpectralSet,
    SpectralWindow,
    default_max_lag,
    dft,
    lag_cov,
    periodogram,
    smoothed_spectrum,
    sym_eigen,
)
from .outliers import (
    AdequacyRejectionError,
    Detection,
    OutlierReport,
    PipelineConfig,
    ProjectionSet,
    SizeEstimate,
    adjust,
    decompose_true,
    detect,
    project_series,
    projection_directions,
    run_pipeline,
    size_alpha,
    size_zeta,
    tchebychev_threshold,
    total_size,
)
from .simulation import (
    BiasReport,
    MonteCarloSummary,
    SimConfig,
    bias_experiment,
    gen_factors_var,
    gen_factors_varma,
    gen_observed,
    monte_carlo,
    section7_config,
    section8_config,
    simulate_panel,
)

__all__ = [
    "__version__",
    "AdequacyRejectionError",
    "AdequacyResult",
    "BandMoments",
    "BiasReport",
    "Detection",
    "EigenSystem",
    "FactorModel",
    "LagCovSet",
    "MonteCarloSummary",
    "MultiSeries",
    "OutlierReport",
    "PipelineConfig",
    "ProjectionSet",
    "SimConfig",
    "SizeEstimate",
    "SpectralSet",
    "SpectralWindow",
    "TransformSpec",
    "adequacy_test",
    "adjust",
    "apply_transform",
    "band_moments",
    "bias_experiment",
    "center",
    "decompose_true",
    "default_max_lag",
    "detect",
    "dft",
    "estimate_jointdiag",
    "estimate_ml",
    "estimate_svd",
    "factor_scores",
    "gen_factors_var",
    "gen_factors_varma",
    "gen_observed",
    "lag_cov",
    "load_csv",
    "monte_carlo",
    "periodogram",
    "project_series",
    "projection_directions",
    "reality_lrt",
    "replace_at",
    "run_pipeline",
    "save_csv",
    "section7_config",
    "section8_config",
    "select_k",
    "simulate_panel",
    "size_alpha",
    "size_zeta",
    "smoothed_spectrum",
    "sym_eigen",
    "tchebychev_threshold",
    "total_size",
]
