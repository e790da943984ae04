"""Wind-speed forecast post-processing with weighted CRPS training."""

__version__ = "0.1.0"

from .dists import GEV, LogNormal, Mixture, TruncNormal  # noqa: E402
from .errors import (  # noqa: E402
    ConfigurationError,
    DataValidationError,
    DomainError,
    FoldSpecError,
    ParseError,
    TrainingDivergence,
    WindpostError,
)
from .scoring import PRESETS, WeightFunction  # noqa: E402

__all__ = [
    "ConfigurationError", "DataValidationError", "DomainError", "FoldSpecError", "GEV", "LogNormal", "Mixture",
    "PRESETS", "ParseError", "TrainingDivergence", "TruncNormal", "WeightFunction", "WindpostError", "__version__",
]
