"""Underwater-acoustic vessel-noise classifier built from scratch on numpy.

Pipeline: synthetic ship-noise corpus (or real WAVs) -> constant-Q
spectrograms -> learnable 2D Gabor front end -> squeeze-excitation
grouped-bottleneck residual network -> three split protocols of
increasing train/test isolation, plus temporal-proximity experiments.
"""

from .errors import DataError, GseError, NumericError, ShapeError, UsageError

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "GseError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "__version__",
]
