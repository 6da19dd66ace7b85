"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for invalid input
(schema, geometry, configuration), 3 for mathematical failures
(positivity, divergence, weight range, conditioning).
"""

from __future__ import annotations


class PtfemError(Exception):
    exit_code = 1

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": type(self).__name__, "message": self.message}
        for key, val in self.details.items():
            out[key] = _jsonable(val)
        return out


def _jsonable(val):
    try:
        import numpy as np

        if isinstance(val, np.ndarray):
            return val.tolist()
        if isinstance(val, np.generic):
            return val.item()
    except ImportError:  # pragma: no cover
        pass
    if isinstance(val, (list, tuple)):
        return [_jsonable(v) for v in val]
    if isinstance(val, dict):
        return {str(k): _jsonable(v) for k, v in val.items()}
    return val


# -- input problems (exit 2) -------------------------------------------------

class ValidationError(PtfemError):
    """Schema or semantic validation failure; ``path`` is a JSON path."""

    exit_code = 2

    def __init__(self, message: str, path: str = "$", **details):
        super().__init__(f"{path}: {message}", path=path, **details)
        self.path = path


class GeometryError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class SymmetryError(ValidationError):
    pass


class SmoothnessClassError(ValidationError):
    pass


class OrderError(ValidationError):
    pass


class DataAccessError(ValidationError):
    pass


class AmbiguousSideError(PtfemError):
    exit_code = 2


# -- mathematical failures (exit 3) ------------------------------------------

class MathematicalError(PtfemError):
    exit_code = 3


class NotPositiveDefiniteError(MathematicalError):
    def __init__(self, message: str, eigenvector=None, **details):
        super().__init__(message, **details)
        self.eigenvector = eigenvector


class UniformPositivityError(MathematicalError):
    pass


class PositivityViolationError(MathematicalError):
    pass


class IllConditionedError(MathematicalError):
    pass


class EvaluationError(MathematicalError):
    pass


class WeightRangeError(MathematicalError):
    pass


class DivergenceError(MathematicalError):
    pass


class InternalConsistencyError(MathematicalError):
    pass


class UnsupportedCornerError(MathematicalError):
    pass


class InstabilityError(MathematicalError):
    def __init__(self, message: str, report=None, **details):
        super().__init__(message, **details)
        self.report = report
