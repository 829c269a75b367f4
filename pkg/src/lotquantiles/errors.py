"""Exception hierarchy shared by all modules."""


class LotQuantilesError(Exception):
    """Base class for every error raised by this package."""


class FormatError(LotQuantilesError, ValueError):
    """A file does not follow the expected layout (bad magic, bad header)."""


class LengthError(FormatError):
    """A file payload is shorter than its header announces."""


class DomainError(LotQuantilesError, ValueError):
    """Input values fall outside the admissible domain (e.g. negative pixels)."""


class DegenerateImageError(LotQuantilesError, ValueError):
    """An image has zero total mass and cannot be normalized."""


class NumericalError(LotQuantilesError, RuntimeError):
    """An iterative solver failed to converge or lost precision."""


class DegenerateDirectionError(NumericalError):
    """A latent coordinate was requested along a zero-variance direction."""
