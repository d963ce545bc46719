"""Semi-supervised stage: rule-based label propagation over ensemble flags,
human-label merge, forest classifier, metric suite and hyperparameter
search."""

from .dataset import (  # noqa: F401
    AlignmentError,
    EventSpan,
    LabeledDataset,
    UnknownTimestamp,
    merge_events,
    merge_human,
    propagate,
)
from .forest import (  # noqa: F401
    ForestModel,
    ForestParams,
    SchemaMismatch,
    SingleClassData,
    train_forest,
)
from .metrics import (  # noqa: F401
    EmptyTestSet,
    MetricsReport,
    confusion_matrix,
    evaluate_predictions,
    f1_macro_from_cm,
    kappa_from_cm,
    mcc_from_cm,
)
from .rules import LabelRule, RuleThresholds, classify_flagged, default_rules  # noqa: F401
from .tune import Trial, cv_f1_macro, tune  # noqa: F401
