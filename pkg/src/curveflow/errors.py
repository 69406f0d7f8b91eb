"""Exception hierarchy shared by all curveflow modules."""

from __future__ import annotations

import numpy as np


class CurveflowError(Exception):
    """Base class for every error raised by curveflow."""


class InvalidArgument(CurveflowError, ValueError):
    pass


class IncompatibleGrid(CurveflowError, ValueError):
    pass


class OutOfDomain(CurveflowError, ValueError):
    """A coordinate vector left the admissible parameter box."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class DegenerateBasis(CurveflowError, np.linalg.LinAlgError):
    """Tangent curves are (numerically) linearly dependent."""


class FitFailed(CurveflowError):
    """Curve fitting did not converge; ``best`` holds the best iterate found."""

    def __init__(self, message: str, best: np.ndarray, iterations: int):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class NumericalBlowup(CurveflowError, FloatingPointError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class InvalidTheta(InvalidArgument):
    pass


class SingularWeighting(CurveflowError, np.linalg.LinAlgError):
    pass


class DataFormatError(CurveflowError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
