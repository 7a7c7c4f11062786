"""Exception types shared across the package."""


class CxrcastError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CxrcastError):
    """Operands have incompatible shapes."""

    @classmethod
    def binary(cls, op: str, a_shape, b_shape) -> "ShapeError":
        return cls(f"{op}: incompatible shapes {tuple(a_shape)} and {tuple(b_shape)}")


class NumericError(CxrcastError):
    """An operation produced NaN or Inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values produced by op '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SchemaError(CxrcastError):
    """Input data does not match the declared variable schema."""


class SpecError(CxrcastError):
    """A variable specification is internally inconsistent."""


class DataError(CxrcastError):
    """Input data violates a documented precondition."""


class AlignmentError(CxrcastError):
    """Two hourly sequences do not cover the same window."""


class CapacityError(CxrcastError):
    """A sequence exceeds the configured maximum length."""


class ConfigError(CxrcastError):
    """One or more configuration keys are missing or invalid."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems)
        )


class CheckpointVersionError(CxrcastError):
    """Checkpoint schema version is not supported."""


class TrainingDivergedError(CxrcastError):
    """Training produced a non-finite loss; best checkpoint so far is retained."""

    def __init__(self, step: int, best_params=None, log=None):
        self.step = step
        self.best_params = best_params
        self.log = log
        super().__init__(f"non-finite training loss at step {step}")
