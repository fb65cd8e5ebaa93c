"""Exception hierarchy shared across the platform."""


class AvqStudyError(Exception):
    """Base class for all platform errors."""


class ScaleError(AvqStudyError):
    """A rating value is outside its scale or off the 0.1 grid."""


class ConfigurationError(AvqStudyError):
    """A stage/study configuration is inconsistent or incomplete."""


class ScoringError(AvqStudyError):
    """A submission cannot be scored against the reference table."""


class OperationalError(AvqStudyError):
    """An operation was invoked in a state that cannot satisfy it."""
