"""Exceptions raised by the matting toolkit."""


class MattingError(ValueError):
    """Base class for every error the toolkit raises on bad input or state."""


class ShapeError(MattingError):
    """Extent, rank or divisibility mismatch."""


class NonFiniteError(MattingError):
    """A NaN or Inf was supplied to, or produced by, an operation."""


class EmptyMaskError(MattingError):
    """A loss or metric that averages over a mask received an empty mask."""


class TrimapDecodeError(MattingError):
    """An 8-bit trimap pixel falls outside every label band."""


class ProbabilityError(MattingError):
    """Probability channels that do not form a distribution."""


class GradientMissingError(MattingError):
    """An optimizer step was asked to update a parameter without a gradient."""


class GraphSchemaError(MattingError):
    """A graph description file violates the documented schema."""

    def __init__(self, message: str, field: str = None, line: int = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(field)
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")


class TrainingDivergedError(MattingError):
    """Loss became non-finite during training."""

    def __init__(self, iteration: int, message: str = "loss is not finite"):
        self.iteration = iteration
        super().__init__(f"training diverged at iteration {iteration}: {message}")
