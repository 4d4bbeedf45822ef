"""
MatchErrors.py - exception hierarchy shared by every module.

Library code raises these; only match_core.py turns them into exit codes.
"""

from typing import Optional


class MatchLstmError(Exception):
    """Base class for all errors raised by the engine."""


class DimensionError(MatchLstmError):
    """Operand shapes do not satisfy an operation's contract."""


class NumericError(MatchLstmError):
    """NaN or Inf appeared in a forward value, a gradient, a loss or an update."""

    def __init__(self, message: str, batch_index: Optional[int] = None):
        if batch_index is not None:
            message = f"{message} (batch {batch_index})"
        super().__init__(message)
        self.batch_index = batch_index


class InvalidMaskError(MatchLstmError):
    """A softmax mask selects no position."""


class EmptyInputError(MatchLstmError):
    """A corpus, sentence or statistic group is empty where content is required."""


class ParseError(MatchLstmError):
    """Malformed input file; carries the path and 1-based line number."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")
        self.path = path
        self.line = line


class CheckpointError(MatchLstmError):
    """Checkpoint file is truncated or inconsistent with its header."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""
