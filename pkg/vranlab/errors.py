"""
Exception hierarchy for the vRAN orchestration lab.

Everything raised on purpose by the package derives from VranLabError so the
command-line front end can map failures to exit codes in one place.
"""


class VranLabError(Exception):
    """Base class for all package errors"""


class ConfigError(VranLabError):
    """Invalid configuration value or configuration file"""

    def __init__(self, message: str, key: str = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class ContractViolation(VranLabError, ValueError):
    """A precondition of an operation does not hold"""


class UnknownSplitError(ContractViolation):
    """Split index outside S1..S4"""

    def __init__(self, split):
        self.split = split
        super().__init__(f"unknown functional split {split!r} (expected 1..4)")


class EpisodeExhaustedError(VranLabError):
    """step() called after the last stage of the episode"""


class InfeasibleAllocationError(VranLabError):
    """No candidate allocation covers the required utilization"""


class EmptyDatasetError(VranLabError):
    """A training routine received no samples"""


class InsufficientReplayError(VranLabError):
    """Replay memory holds fewer transitions than the requested minibatch"""


class NumericalInstabilityError(VranLabError):
    """A parameter update produced NaN or Inf"""


class MissingModelError(VranLabError):
    """A required checkpoint is absent"""


class ExportError(VranLabError):
    """Results could not be exported"""
