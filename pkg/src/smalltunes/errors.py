"""Exception types shared across the pipeline.

The CLI maps :class:`DataError` to exit code 2 and :class:`ContractViolation`
to exit code 3.
"""

from __future__ import annotations


class SmallTunesError(Exception):
    """Base class for all library errors."""


class DataError(SmallTunesError):
    """Input data is malformed or unusable."""


class MidiParseError(DataError):
    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class EmptyMelodyError(DataError):
    pass


class StructureError(DataError):
    """A token sequence violates the BOS / PHRASE_END / EOS layout."""

    def __init__(self, message: str, index: int | None = None) -> None:
        self.index = index
        if index is not None:
            message = f"token {index}: {message}"
        super().__init__(message)


class ContractViolation(SmallTunesError):
    """An internal precondition was broken (e.g. a fully masked attention row)."""


class ShapeError(ContractViolation):
    pass


class FilteredOut(Exception):
    """Signals that an input is valid but excluded by corpus filters.

    Deliberately not a :class:`SmallTunesError`: callers skip, they do not fail.
    """
