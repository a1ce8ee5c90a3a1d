"""
Exception hierarchy shared by every module
"""


class FeederIdError(Exception):
    """Base class for all toolkit errors"""


class ValidationError(FeederIdError):
    """Invalid input data, configuration or call order (CLI exit code 2)"""


class NumericalError(FeederIdError):
    """A computation could not produce a trustworthy result (CLI exit code 3)"""


class CycleDetected(ValidationError):
    pass


class DisconnectedNode(ValidationError):
    pass


class NonPositiveResistance(ValidationError):
    pass


class ProfileLengthMismatch(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class InconsistentSnapshotLengths(ValidationError):
    pass


class BranchingUnsupported(ValidationError):
    pass


class IncompleteSweep(ValidationError):
    pass


class MissingChildPayload(ValidationError):
    pass


class Deadlock(ValidationError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class DomainViolation(NumericalError):
    pass


class ConvergenceNotReached(NumericalError):
    pass


class ZeroColumn(NumericalError):
    pass


class LineError(FeederIdError):
    """
    Failure while identifying one power line

    Keeps the category of the underlying error so callers can still tell
    validation problems from numerical ones.

    Args:
        line: (from_node, to_node) tuple of the failing line
        cause: The original exception
    """

    def __init__(self, line, cause):
        self.line = tuple(line)
        self.cause = cause
        super().__init__(f"line {self.line[0]}->{self.line[1]}: {cause}")

    @property
    def is_numerical(self):
        return isinstance(self.cause, NumericalError)
