"""Exception types shared across the package."""


class XlkError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(XlkError):
    """Invalid configuration value or combination (e.g. M not divisible by S)."""


class DegenerateGeometryError(XlkError):
    """Geometry that makes the model ill-defined (e.g. user on top of an antenna)."""


class CorrelationModelError(XlkError):
    """Supplied spatial correlation matrix is not usable (wrong shape, not PSD)."""


class RankDeficiencyError(XlkError):
    """Gram system restricted to active users is singular at zero regularization."""

    def __init__(self, users, message=None):
        self.users = tuple(int(u) for u in users)
        if message is None:
            message = (
                "Gram matrix singular at xi=0; linearly dependent columns for "
                f"users {list(self.users)}"
            )
        super().__init__(message)


class EmptyScheduleError(XlkError):
    """Update schedule requested for a subarray with no active users."""
