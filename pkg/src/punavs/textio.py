"""Helpers for the line-oriented structured text formats.

Every format in this package is UTF-8 text, one record per line, fields
separated by single spaces, floats serialized at 17 significant digits
(enough to round-trip IEEE doubles bit-exactly, independent of locale).
"""

from __future__ import annotations

from .errors import FormatError


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def parse_float(token: str, where: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise FormatError(f"{where}: expected a number, got {token!r}") from None


def parse_int(token: str, where: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"{where}: expected an integer, got {token!r}") from None


class LineReader:
    """Iterates stripped lines, tracking numbers for error messages."""

    def __init__(self, text: str, name: str):
        self.lines = text.splitlines()
        self.name = name
        self.index = 0

    def where(self) -> str:
        return f"{self.name}:{self.index}"

    def next_content_line(self) -> str | None:
        """The next nonempty line, or None at end of input."""
        while self.index < len(self.lines):
            line = self.lines[self.index].strip()
            self.index += 1
            if line:
                return line
        return None

    def expect_line(self, what: str) -> str:
        line = self.next_content_line()
        if line is None:
            raise FormatError(f"{self.name}: missing {what} (file truncated)")
        return line
