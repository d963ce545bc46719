"""Multi-horizon utilization forecasting."""

from .model import (  # noqa: F401
    ForecastSeries,
    NHitsConfig,
    NHitsModel,
    NonFiniteInput,
    interp_matrix,
    interp_matrix_at,
)
from .training import (  # noqa: F401
    Adam,
    DivergedLoss,
    EmptyTestSet,
    SeriesTooShort,
    TrainResult,
    UtilizationSeries,
    baseline_maes,
    evaluate_mae,
    gradient_check,
    make_windows,
    train,
    utilization_series,
)
