"""Exception hierarchy shared by all modules."""


class LowBendError(Exception):
    """Base class; the CLI maps these to machine-readable error records."""

    code = "error"


class KindMismatchError(LowBendError, ValueError):
    code = "kind-mismatch"


class DegeneratePairError(LowBendError, ValueError):
    code = "degenerate-pair"


class OutOfDomainError(LowBendError, ValueError):
    code = "out-of-domain"


class SamplingStarvationError(LowBendError, RuntimeError):
    code = "sampling-starvation"


class DivisionGuardError(LowBendError, ZeroDivisionError):
    code = "division-guard"


class EmptySampleError(LowBendError, ValueError):
    code = "empty-sample"


class DimensionMismatchError(LowBendError, ValueError):
    code = "dimension-mismatch"


class TrainingDivergenceError(LowBendError, FloatingPointError):
    code = "training-divergence"


class BoundaryRenderError(LowBendError, ValueError):
    code = "boundary-render"


class UnsupportedKindError(LowBendError, ValueError):
    code = "unsupported-kind"


class DegenerateConeError(LowBendError, ValueError):
    code = "degenerate-cone"


class ConfigError(LowBendError, ValueError):
    code = "config"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
