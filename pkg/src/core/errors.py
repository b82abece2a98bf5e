"""
Exception types raised by the Lmser engine
"""


class LmserError(Exception):
    """Base class for all engine errors"""


class DimensionError(LmserError, ValueError):
    """Operand shapes do not agree"""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class ConfigurationError(LmserError, ValueError):
    """A configuration value or geometry is invalid"""


class FormatError(LmserError, ValueError):
    """A file does not match its binary format"""


class ConsistencyError(LmserError, ValueError):
    """Two inputs that must agree (e.g. image and label files) do not"""


class CapabilityError(LmserError, RuntimeError):
    """The network lacks a head or unit the operation needs"""


class ContractViolation(LmserError, AssertionError):
    """A caller broke an operation's precondition"""
