from typing import Optional


class CoagkitError(Exception):
    """Base class for every failure the CLI knows how to report."""

    exit_code = 1


class ConfigError(CoagkitError):
    exit_code = 2

    def __init__(self, message, field: Optional[str] = None, line: Optional[int] = None, column: Optional[int] = None):
        self.field = field
        self.line = line
        self.column = column
        location = []
        if line is not None:
            location.append(f"line {line}, column {column}")
        if field is not None:
            location.append(f"field '{field}'")
        if location:
            message = f"{message} ({'; '.join(location)})"
        super().__init__(message)


class MeasureError(CoagkitError, ValueError):
    exit_code = 2

    def __init__(self, message, index: Optional[int] = None):
        self.index = index
        if index is not None:
            message = f"{message} (pair index {index})"
        super().__init__(message)


class InvariantViolation(CoagkitError):
    exit_code = 3
    invariant = "invariant"

    def __init__(self, message, invariant: Optional[str] = None):
        if invariant is not None:
            self.invariant = invariant
        super().__init__(f"[{self.invariant}] {message}")


class MonotonicityViolation(InvariantViolation):
    invariant = "monotonicity"


class DominationError(InvariantViolation):
    invariant = "domination"


class CacheCoherenceError(InvariantViolation):
    invariant = "cache-coherence"


class NumericalFailure(CoagkitError):
    exit_code = 4


class SolverInstabilityError(NumericalFailure):
    def __init__(self, message, suggested_step: Optional[float] = None):
        self.suggested_step = suggested_step
        if suggested_step is not None:
            message = f"{message}; retry with max_step <= {suggested_step:.3e}"
        super().__init__(message)


class PicardDivergenceError(NumericalFailure):
    pass


class ChainOverflowError(NumericalFailure):
    pass


class DivergentMassError(NumericalFailure):
    pass
