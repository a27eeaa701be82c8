"""Exception hierarchy shared by the library and the CLI."""

from typing import Optional


class KGELabError(Exception):
    """Base class for every error raised on purpose by kge_lab."""

    exit_code = 1


class UsageError(KGELabError):
    """Unknown preset, unknown scenario or an invalid option value."""

    exit_code = 1


class DataError(KGELabError):
    """Problems with dataset files or their vocabulary."""

    exit_code = 2


class TripleParseError(DataError):
    def __init__(self, path: str, line_number: int, detail: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {detail}")


class DuplicateTripleError(DataError):
    def __init__(self, path: str, line_number: int, triple: tuple):
        self.path = path
        self.line_number = line_number
        self.triple = triple
        super().__init__(f"{path}:{line_number}: duplicate triple {triple}")


class VocabularyError(DataError):
    """Unknown symbol under a fixed vocabulary, or mismatched sizes."""


class NumericalAbort(KGELabError):
    """Training produced a non-finite loss."""

    exit_code = 3

    def __init__(self, step: int, batch_seed: Optional[int], loss: float):
        self.step = step
        self.batch_seed = batch_seed
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (batch seed {batch_seed})"
        )
