"""Exception hierarchy."""


class QKDError(Exception):
    """Base class for errors raised by this package."""


class InsufficientDataError(QKDError, ValueError):
    """Too few bits or events to carry out the requested estimate."""


class DegenerateStatisticsError(QKDError, ValueError):
    """A fluctuation bound was requested with zero expected counts."""


class ParameterDomainError(QKDError, ValueError):
    """Parameters outside the domain where a formula is defined."""


class BoundUnavailableError(QKDError):
    """A decoy bound is invalid, so no secure key can be extracted."""


class AbortBlockError(QKDError):
    """Post-processing of a block had to be abandoned."""


class KeyExhaustedError(QKDError):
    """A key pool does not hold enough unconsumed bits."""


class StarvationError(KeyExhaustedError):
    """An application could not obtain pad material in time."""


class FrameError(QKDError, ValueError):
    """Malformed or out-of-sequence wire frame."""
