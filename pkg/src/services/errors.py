class OddmError(Exception):
    """Base class of every error raised by the simulator."""


class DomainError(OddmError, ValueError):
    """An operation was called outside its preconditions."""


class SizeGuardError(OddmError):
    """A dense computation was refused because it exceeds the configured size."""


class SolverError(OddmError):
    """A linear system could not be solved."""


class ConfigError(OddmError):
    """
    An experiment configuration failed validation.

    :param issues: One human readable entry per offending field.
    :type issues: list[str]
    """

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__("invalid configuration: " + "; ".join(self.issues))
