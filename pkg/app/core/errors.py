"""Exception hierarchy shared by every stage, with CLI exit codes."""

from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_STAGE = 3


class UDFlowError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = EXIT_STAGE


class ConfigError(UDFlowError):
    """Invalid configuration, unknown flag or unresolvable model path."""

    exit_code = EXIT_USAGE


class ConlluError(UDFlowError):
    """Malformed or invalid CoNLL-U input, optionally tied to a line number."""

    exit_code = EXIT_DATA

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DataError(UDFlowError):
    """Training or evaluation data that cannot be used as given."""

    exit_code = EXIT_DATA


class AlignmentError(DataError):
    """Gold and system documents do not share the same character stream."""


class StageError(UDFlowError):
    """A pipeline stage failed on a given sentence."""

    exit_code = EXIT_STAGE

    def __init__(self, stage: str, sentence_index: Optional[int], cause: Exception):
        self.stage = stage
        self.sentence_index = sentence_index
        self.cause = cause
        where = f" at sentence {sentence_index}" if sentence_index is not None else ""
        super().__init__(f"stage '{stage}' failed{where}: {cause}")
