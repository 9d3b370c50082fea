"""Turnover-event graph pipeline for ranked on-street parking recommendations.

The package turns per-interval occupancy matrices into turnover-event
graphs, trains a listwise ranking model on top of them, and benchmarks the
result against predict-then-recommend baselines.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    EmptyDatasetError,
    ParkrankError,
    ParseError,
    TrainingDiverged,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "EmptyDatasetError",
    "ParkrankError",
    "ParseError",
    "TrainingDiverged",
    "__version__",
]
