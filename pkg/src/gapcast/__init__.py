"""Probabilistic wind-power forecasting that treats missing values natively.

Instead of imputing gaps and then fitting a predictor, gapcast fits one
joint generative model (a variational auto-encoder with a normalising-flow
posterior, trained on an importance-weighted likelihood bound over observed
coordinates only) to lag windows and their forecast targets, then forecasts
by importance-resampling the unknown target as if it were just another
missing coordinate.  Baseline impute-then-predict pipelines, proper scoring
rules and a reproducible experiment CLI round out the toolkit.
"""

from .bench import (
    ClimatologyForecaster,
    GaussianForecaster,
    IterativeLinearImputer,
    MeanImputer,
    QuantileRegressionForecaster,
    fit_reference_model,
)
from .data import (
    DataError,
    SeriesTable,
    Window,
    chronological_split,
    load_csv,
    make_synthetic,
    make_windows,
    windows_to_matrices,
)
from .dist import IdentityTransform, LogitTransform
from .forecast import (
    ForecastEnsemble,
    GenerativeForecaster,
    ProposalSet,
    ensemble_to_quantiles,
    missing_feature_imputations,
    normalize_weights,
    propose,
    resample,
)
from .genmodel import (
    ElboEstimate,
    GenerativeModel,
    TrainConfig,
    TrainState,
    TrainingDiverged,
    elbo,
    init_model,
    load_model,
    save_model,
    train,
)
from .metrics import (
    ScoreReport,
    crps_ensemble,
    crps_mean,
    pinball_loss,
    reliability,
    score_report,
    sharpness,
)
from .missing import (
    MissingnessConfig,
    gen_mask_mar,
    gen_mask_mcar,
    zero_impute,
)

__version__ = "0.1.0"

__all__ = [
    "ClimatologyForecaster",
    "DataError",
    "ElboEstimate",
    "ForecastEnsemble",
    "GaussianForecaster",
    "GenerativeForecaster",
    "GenerativeModel",
    "IdentityTransform",
    "IterativeLinearImputer",
    "LogitTransform",
    "MeanImputer",
    "MissingnessConfig",
    "ProposalSet",
    "QuantileRegressionForecaster",
    "ScoreReport",
    "SeriesTable",
    "TrainConfig",
    "TrainState",
    "TrainingDiverged",
    "Window",
    "__version__",
    "chronological_split",
    "crps_ensemble",
    "crps_mean",
    "elbo",
    "ensemble_to_quantiles",
    "fit_reference_model",
    "gen_mask_mar",
    "gen_mask_mcar",
    "init_model",
    "load_csv",
    "load_model",
    "make_synthetic",
    "make_windows",
    "missing_feature_imputations",
    "normalize_weights",
    "pinball_loss",
    "propose",
    "reliability",
    "resample",
    "save_model",
    "score_report",
    "sharpness",
    "train",
    "windows_to_matrices",
    "zero_impute",
]
