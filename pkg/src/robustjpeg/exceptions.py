"""Exception hierarchy shared by every module of the package."""


class RobustJpegError(Exception):
    """Base class for all errors raised by robustjpeg."""

    exit_code = 1


class InvalidQuality(RobustJpegError, ValueError):
    pass


class InvalidModification(RobustJpegError, ValueError):
    pass


class UnsupportedJpeg(RobustJpegError):
    exit_code = 6


class MalformedJpeg(RobustJpegError):
    exit_code = 6


class CoefficientOverflow(RobustJpegError, ValueError):
    pass


class ScheduleMismatch(RobustJpegError, ValueError):
    pass


class UnknownCostModel(RobustJpegError, KeyError):
    pass


class InvalidRates(RobustJpegError, ValueError):
    pass


class SolverNoConverge(RobustJpegError, RuntimeError):
    pass


class PayloadExceedsCapacity(RobustJpegError):
    """The requested payload does not fit in the robust set of the cover."""

    exit_code = 3

    def __init__(self, requested, capacity, message=None):
        self.requested = float(requested)
        self.capacity = float(capacity)
        if message is None:
            message = (f"payload of {self.requested:.1f} bits exceeds the robust "
                       f"capacity of {self.capacity:.1f} bits; use a different "
                       f"image or a smaller message")
        super().__init__(message)


class EmbeddingInfeasible(RobustJpegError):
    exit_code = 4

    def __init__(self, message, lattice=None):
        self.lattice = lattice
        super().__init__(message)


class InvalidLength(RobustJpegError, ValueError):
    exit_code = 5


class ChannelMismatch(RobustJpegError):
    exit_code = 7


class ExternalCoderFailure(RobustJpegError):
    exit_code = 8
