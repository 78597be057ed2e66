"""Exception hierarchy shared by all modules."""


class LaserError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(LaserError, ValueError):
    pass


class NumericError(LaserError, ArithmeticError):
    pass


class FormatError(LaserError, ValueError):
    """A MATX1 payload or manifest could not be parsed.

    ``field`` names the offending header field and ``offset`` the byte
    offset at which parsing failed (``None`` for manifest errors).
    """

    def __init__(self, message, field=None, offset=None):
        if offset is not None:
            message = f"{message} (field {field!r} at byte {offset})"
        super().__init__(message)
        self.field = field
        self.offset = offset


class BundleError(LaserError, ValueError):
    pass


class PlanError(LaserError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class CapabilityError(LaserError, TypeError):
    """The evaluator cannot perform the requested operation (e.g. gradients)."""
