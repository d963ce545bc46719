"""Four-family unsupervised detector ensemble with vote-based certainty."""

from .ensemble import (  # noqa: F401
    DetectorParams,
    Ensemble,
    UnsupVerdict,
    fit_ensemble,
)
from .iforest import DegenerateData, IsolationForest, expected_path_length  # noqa: F401
from .lof import LocalOutlierFactor  # noqa: F401
from .mcd import MinCovDet, SingularCovariance  # noqa: F401
from .pca import PCADetector  # noqa: F401
