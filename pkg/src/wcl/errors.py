"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: ValueError and the subclasses
below that extend it mean bad input (exit 2), NumericFailure means the solver
could not proceed in the requested mode (exit 3), and DivergenceError means an
optimization ran away (exit 4).
"""


class ParseError(ValueError):
    """A text input file failed to parse; carries path and 1-based line number."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class EmptySelectionError(ValueError):
    """Sampling selected no valid pixels."""


class UnsupportedInstanceError(ValueError):
    """The exact oracle was asked for something outside its contract."""


class InvalidSceneError(ValueError):
    """Synthetic scene geometry fell outside the camera frustum."""


class NumericFailure(ArithmeticError):
    """Under/overflow killed the unstabilized iteration; retry stabilized."""


class DivergenceError(RuntimeError):
    """Loss increased persistently during refinement; carries the trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
