"""
Exception hierarchy for PointCrack3D

Each error also derives from the closest built-in so callers that catch
ValueError / RuntimeError keep working.
"""

from typing import Optional


class PointCrackError(Exception):
    """Base class for all pipeline errors"""


class ConfigError(PointCrackError, ValueError):
    """Invalid or unknown configuration value"""


class PlyParseError(PointCrackError, ValueError):
    """Malformed PLY header"""

    def __init__(self, message: str, line: Optional[str] = None):
        if line is not None:
            message = f"{message}: {line!r}"
        super().__init__(message)
        self.line = line


class PlyDataError(PointCrackError, ValueError):
    """PLY body holds values the pipeline cannot accept"""

    def __init__(self, message: str, vertex: Optional[int] = None):
        if vertex is not None:
            message = f"{message} (vertex {vertex})"
        super().__init__(message)
        self.vertex = vertex


class IntegrityError(PointCrackError, ValueError):
    """A voxel or instance refers to point ids that are not in the cloud"""


class InsufficientPointsError(PointCrackError, ValueError):
    """Fewer points than the requested sample size"""


class InsufficientDistinctPointsError(InsufficientPointsError):
    """Fewer distinct positions than the requested sample size"""


class EmptySelectionError(PointCrackError, ValueError):
    """A selection that must contain points came back empty"""


class SplitError(PointCrackError, ValueError):
    """Not enough crack instances to build train/val/test partitions"""


class ContractError(PointCrackError, ValueError):
    """Arguments violate an operation's preconditions"""


class DegenerateClassError(PointCrackError, ValueError):
    """Training set lacks one of the two classes"""


class GeometryError(PointCrackError, ValueError):
    """Synthetic geometry does not fit its surface"""


class ModelFormatError(PointCrackError, ValueError):
    """Model file is not a readable scorer container"""


class UndefinedMetricError(PointCrackError, ValueError):
    """Metric denominator is zero"""


class TrainingDivergenceError(PointCrackError, RuntimeError):
    """Loss became non-finite during training"""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"Training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
