#!/usr/bin/env python3
"""Exception types raised by the hand package.

Each one derives from the builtin a caller would naturally catch, so
``except ValueError`` keeps working for code that does not care about the
finer distinction.
"""


class DimensionError(ValueError):
    """Shapes of the operands do not agree."""


class ParameterError(ValueError):
    """A hyperparameter or configuration value is out of range."""


class ContractError(ValueError):
    """A precondition of an operation is violated."""


class NumericError(ArithmeticError):
    """NaN (or otherwise unusable) numeric input."""


class TokenError(KeyError):
    """Token or token id unknown to the vocabulary."""


class InfeasibleTargetError(ValueError):
    """CTC target cannot be aligned to the given number of frames."""


class SchemaError(ValueError):
    """XML document does not follow the layout schema."""


class UndefinedRateError(ZeroDivisionError):
    """A metric has an empty denominator."""


class ConfigError(ValueError):
    """Unknown or malformed configuration key."""

    def __init__(self, key, msg=None):
        self.key = key
        super().__init__(msg or "unknown configuration key '{}'".format(key))


class LayoutParseError(ValueError):
    """Layout tag grammar violation at a given token position."""

    def __init__(self, position, msg):
        self.position = position
        super().__init__("token {}: {}".format(position, msg))


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, msg, last_good_checkpoint=None):
        self.last_good_checkpoint = last_good_checkpoint
        super().__init__(msg)
