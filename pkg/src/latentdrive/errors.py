"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`ValidationError` to exit code 1 and every other
:class:`LatentDriveError` to exit code 2.
"""


class LatentDriveError(Exception):
    """Base class for all package errors."""


class ValidationError(LatentDriveError, ValueError):
    """Bad input: malformed routes, configs, logs, or checkpoints."""


class UsageError(LatentDriveError, RuntimeError):
    """API misuse, e.g. stepping a finished episode or a non-scalar loss."""


class PlacementError(ValidationError):
    """A scenario kind cannot be placed on the given route."""

    def __init__(self, kinds):
        self.kinds = list(kinds)
        names = ", ".join(str(k) for k in self.kinds)
        super().__init__(f"cannot place scenario kind(s) on route: {names}")


class UnavailableError(LatentDriveError, LookupError):
    """Requested data does not exist yet (empty buffer, zero distance)."""


class NonFiniteError(LatentDriveError, FloatingPointError):
    """A tensor or loss went NaN/Inf; ``field`` names the offender."""

    def __init__(self, field, detail=""):
        self.field = field
        msg = f"non-finite values in {field}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
