"""Rental-listings analytics: cleaning, validation statistics and
penalized spline models of log rent."""

from .errors import (
    ConfigurationError,
    DataError,
    NumericalError,
    OutOfDomainError,
    RentGamError,
)
from .gam import (
    Design,
    EffectSurface,
    FittedModel,
    ModelRow,
    ModelSpec,
    TermSpec,
    build_design,
    default_model_spec,
    derive_rows,
    effect_surface,
    fit_pls,
    haversine_miles,
    multiplicative_effect,
    predict,
    select_smoothness,
    spatial_filter,
)
from .inference import BootstrapResult, bootstrap_term_test, empirical_p, wald_statistic
from .listings import (
    CleanReport,
    GeocodedListing,
    Listing,
    PostcodeIndex,
    clean_pipeline,
    geocode,
    parse_listings,
    read_clean_listings,
    write_clean_listings,
)
from .splines import (
    bspline_basis,
    difference_penalty,
    make_knots,
    tensor_basis,
    tensor_penalty,
)
from .synthetic import (
    SimulatedCorpus,
    TruthSpec,
    default_truth,
    linear_truth,
    load_truth,
    oracle_smoothness,
    recovery_rmse,
    simulate_listings,
    write_corpus,
)
from .validation import (
    CoverageResult,
    IndexSeries,
    correlate,
    coverage_ratio,
    listings_index,
    load_area_reference,
    load_national_reference,
    turnover_rate,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "CleanReport",
    "ConfigurationError",
    "CoverageResult",
    "DataError",
    "Design",
    "EffectSurface",
    "FittedModel",
    "GeocodedListing",
    "IndexSeries",
    "Listing",
    "ModelRow",
    "ModelSpec",
    "NumericalError",
    "OutOfDomainError",
    "PostcodeIndex",
    "RentGamError",
    "SimulatedCorpus",
    "TermSpec",
    "TruthSpec",
    "bootstrap_term_test",
    "bspline_basis",
    "build_design",
    "clean_pipeline",
    "correlate",
    "coverage_ratio",
    "default_model_spec",
    "default_truth",
    "derive_rows",
    "difference_penalty",
    "effect_surface",
    "empirical_p",
    "fit_pls",
    "geocode",
    "haversine_miles",
    "linear_truth",
    "listings_index",
    "load_area_reference",
    "load_national_reference",
    "load_truth",
    "make_knots",
    "multiplicative_effect",
    "oracle_smoothness",
    "parse_listings",
    "predict",
    "read_clean_listings",
    "recovery_rmse",
    "select_smoothness",
    "simulate_listings",
    "spatial_filter",
    "tensor_basis",
    "tensor_penalty",
    "turnover_rate",
    "wald_statistic",
    "write_clean_listings",
    "write_corpus",
]
