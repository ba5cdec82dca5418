"""Exception types.

Every error carries a short ``category`` slug; the command line prints it as
``error[<category>]: message`` so scripts can match on it.
"""
from __future__ import annotations


class VRPowerError(Exception):
    category = "error"


class ParseError(VRPowerError, ValueError):
    category = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(VRPowerError, ValueError):
    category = "validation"

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class OutOfRangeError(VRPowerError, ValueError):
    category = "out-of-range"


class NegativeNetError(VRPowerError, ValueError):
    category = "negative-net"


class SingularDesignError(VRPowerError, ValueError):
    category = "singular-design"

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class UnderdeterminedError(VRPowerError, ValueError):
    category = "underdetermined"


class SchemaVersionError(VRPowerError, ValueError):
    category = "schema-version"


class FoldError(VRPowerError, ValueError):
    category = "fold"

    def __init__(self, message: str, sequence: str):
        super().__init__(message)
        self.sequence = sequence


class ZeroPowerError(VRPowerError, ZeroDivisionError):
    category = "division-by-zero"


class UnsupportedQueryError(VRPowerError, ValueError):
    category = "unsupported-query"


class SynthConfigError(VRPowerError, ValueError):
    category = "config"
