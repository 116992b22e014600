"""Exception hierarchy.

Validation problems (bad config, bad inputs) derive from ``ValidationError``
and map to CLI exit code 1; everything else that aborts a run derives from
``SimulationError`` and maps to exit code 2.
"""


class RvaError(Exception):
    pass


class ValidationError(RvaError, ValueError):
    def __init__(self, key: str, message: str = ""):
        self.key = key
        super().__init__(f"{key}: {message}" if message else key)


class ParseError(ValidationError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__("<json>", f"{message} (line {line}, column {column})")


class SchemaMismatch(ValidationError):
    def __init__(self, found):
        super().__init__("schema", f"unsupported trial-log schema {found!r}")


class SimulationError(RvaError):
    pass


class InvalidJointVector(SimulationError, ValueError):
    pass


class NoConvergence(SimulationError):
    pass


class JointLimitViolation(SimulationError):
    pass


class NoVesselFound(SimulationError):
    pass


class NoIntersection(SimulationError):
    pass


class NoVesselDetected(SimulationError):
    pass


class NotPositiveDefinite(SimulationError, ValueError):
    pass


class QualityRetriesExhausted(SimulationError):
    pass


class DegenerateSegment(SimulationError, ValueError):
    pass


class MaxRetriesExceeded(SimulationError):
    pass


class EmptyBatch(SimulationError, ValueError):
    pass
