"""Exception types raised across the package.

Errors derived from :class:`ValidationError` signal bad input (shapes,
files, arguments); errors derived from :class:`ComputationError` signal
that valid input could not be processed numerically. The CLI maps the two
families onto exit codes 2 and 3.
"""


class AnthroError(Exception):
    """Base class for every error raised by anthrokit."""


class ValidationError(AnthroError, ValueError):
    pass


class ComputationError(AnthroError, ArithmeticError):
    pass


class NonFinite(ValidationError):
    """A coordinate or parameter is NaN or infinite."""


class DimensionMismatch(ValidationError):
    pass


class FormatError(ValidationError):
    """A file does not follow the expected layout."""


class SelectionMismatch(ValidationError):
    """A feature selection does not match the one a model was trained on."""


class LengthMismatch(ValidationError):
    pass


class IdMismatch(ValidationError):
    pass


class EmptyStream(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class TooFewFrames(ValidationError):
    pass


class DegeneratePelvis(ComputationError):
    """The pelvis anchors do not define a usable frame."""


class EmptyCrossSection(ComputationError):
    """The cutting plane does not intersect the mesh."""


class OpenCrossSection(ComputationError):
    """The intersection could not be stitched into closed loops."""


class NonFiniteLoss(ComputationError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
