"""Exception hierarchy shared by all modules."""


class WishartEMError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(WishartEMError, ValueError):
    pass


class ConvergenceFailure(WishartEMError, RuntimeError):
    pass


class DimensionMismatch(WishartEMError, ValueError):
    pass


class DomainError(WishartEMError, ValueError):
    pass


class TruncationNotConverged(WishartEMError, ArithmeticError):
    """The zonal series tail is still significant at the configured max weight."""


class RhoOutOfRange(WishartEMError, ValueError):
    pass


class NumericalUnderflow(WishartEMError, ArithmeticError):
    pass


class EmptyPlan(WishartEMError, ValueError):
    pass


class LengthMismatch(WishartEMError, ValueError):
    pass


class MaskTooSmall(WishartEMError, ValueError):
    pass


class DegenerateFeatures(WishartEMError, ValueError):
    pass


class ZeroBlueVariance(WishartEMError, ValueError):
    pass


class ImageFormatError(WishartEMError, ValueError):
    pass
