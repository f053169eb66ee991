"""Left-ventricle coverage assessment toolkit.

A self-contained 3D convolutional network engine with a discriminant-
regularized objective, a synthetic short-axis phantom generator, a
hand-crafted ellipse baseline, coverage verdict logic, evaluation metrics,
and a command-line interface tying them together.
"""

from .errors import (
    DimensionError,
    DomainError,
    InputError,
    LVCoverageError,
    MeasurementError,
    ModelIOError,
    ParameterError,
    SampleError,
    SpecError,
    StatisticsError,
    TrainingDiverged,
    UndefinedMetric,
)
from .estimator import FisherCNNClassifier

__version__ = "0.1.0"

__all__ = [
    "FisherCNNClassifier",
    "LVCoverageError",
    "DimensionError",
    "DomainError",
    "InputError",
    "MeasurementError",
    "ModelIOError",
    "ParameterError",
    "SampleError",
    "SpecError",
    "StatisticsError",
    "TrainingDiverged",
    "UndefinedMetric",
    "__version__",
]
