"""Error categories shared by every part of the package.

Each class carries a ``category`` string; the command-line interface uses it to
print ``error[<category>]: <message>`` and to pick an exit code.
"""
from typing import Optional


class WoundFormerError(Exception):
    """Base class for all errors raised by this package"""

    category = "error"


class ShapeError(WoundFormerError, ValueError):
    """Extent or channel mismatch between operands"""

    category = "shape"


class ArgumentError(WoundFormerError, ValueError):
    """An argument value outside what the operation accepts"""

    category = "argument"


class LabelRangeError(ArgumentError):
    """A class label outside [0, num_classes)"""

    category = "label"


class CodecError(WoundFormerError, ValueError):
    """Malformed image file or manifest"""

    category = "codec"


class NonFiniteError(WoundFormerError, ArithmeticError):
    """A forward operation produced NaN or Inf"""

    category = "numeric"

    def __init__(self, message: str, op_name: Optional[str] = None):
        super().__init__(message)
        self.op_name = op_name


class UndefinedTestError(WoundFormerError, ValueError):
    """The paired test has no usable (nonzero) differences"""

    category = "statistics"


class ConfigError(WoundFormerError, ValueError):
    """Missing run-config file, schema violation or unknown override"""

    category = "config"


class CheckpointError(WoundFormerError, ValueError):
    """Unreadable or incompatible checkpoint"""

    category = "checkpoint"


class VerificationError(WoundFormerError, AssertionError):
    """A verification harness (gradcheck, counters) found a mismatch"""

    category = "verification"
