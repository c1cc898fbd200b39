"""Exception hierarchy shared by the scheduling modules."""


class SchedError(Exception):
    """Base class for all package errors."""


class ConfigError(SchedError, ValueError):
    """Invalid or inconsistent configuration."""


class ShapeError(SchedError, ValueError):
    """Array or parameter-tree shape mismatch."""


class DecodeError(SchedError, IndexError):
    """Action index outside the branch action table."""


class SizeError(SchedError, ValueError):
    """Joint action space too large for exhaustive enumeration."""


class TicketError(SchedError, KeyError):
    """Unknown, expired, or already committed replay ticket."""


class ReplayUnderflowError(SchedError, ValueError):
    """Not enough committed experiences to draw a batch."""


class CheckpointError(SchedError, ValueError):
    """Corrupt checkpoint or architecture mismatch."""
