"""Exception hierarchy for the simulator.

Plain argument problems raise ``ValueError``. The classes below cover the
failures the command line maps to distinct exit codes.
"""

from __future__ import annotations

from pathlib import Path


class DrSimError(Exception):
    """Base class for simulator errors."""


class ConfigError(DrSimError):
    """Experiment configuration is invalid."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class DataFormatError(DrSimError):
    """A persisted file could not be parsed."""

    def __init__(
        self,
        path: Path | str,
        message: str,
        *,
        line: int | None = None,
        field: str | None = None,
    ) -> None:
        self.path = Path(path)
        self.line = line
        self.field = field
        location = str(self.path)
        if line is not None:
            location += f", line {line}"
        if field is not None:
            location += f", field '{field}'"
        super().__init__(f"{location}: {message}")


class FormatVersionError(DataFormatError):
    """A persisted document has an unsupported ``format_version``."""

    def __init__(self, path: Path | str, found: object, expected: int) -> None:
        self.found = found
        self.expected = expected
        super().__init__(
            path,
            f"unsupported format_version {found!r} (expected {expected})",
            field="format_version",
        )


class ContractError(DrSimError):
    """An operation was called outside its documented contract."""
