from typing import Callable, List, Optional, Type

from core.exceptions import FileFormatError


class TokenReader:
    """Line-oriented reader over a text header or file; `#` starts a comment."""

    def __init__(self, lines: List[str], path: str, error: Type[FileFormatError] = FileFormatError, first_line: int = 1):
        self.path = path
        self.error = error
        self._records = []
        for offset, raw in enumerate(lines):
            text = raw.split("#", 1)[0].strip()
            if text:
                self._records.append((first_line + offset, text.split()))
        self._pos = 0

    @classmethod
    def open(cls, path: str, error: Type[FileFormatError] = FileFormatError) -> "TokenReader":
        try:
            with open(path, "r") as fh:
                return cls(fh.read().splitlines(), path, error)
        except OSError as e:
            raise error(f"cannot read file: {e.strerror}", path) from e

    @property
    def line(self) -> Optional[int]:
        if self._pos < len(self._records):
            return self._records[self._pos][0]
        return self._records[-1][0] if self._records else None

    def at_end(self) -> bool:
        return self._pos >= len(self._records)

    def fail(self, message: str, line: Optional[int] = None) -> FileFormatError:
        """Error at `line`, by default the record consumed last."""
        if line is None:
            line = self._records[self._pos - 1][0] if self._pos else self.line
        return self.error(message, self.path, line)

    def next(self, count: Optional[int] = None, what: str = "record") -> List[str]:
        if self.at_end():
            raise self.fail(f"unexpected end of file while reading {what}")
        line, tokens = self._records[self._pos]
        if count is not None and len(tokens) != count:
            raise self.fail(f"expected {count} fields for {what}, found {len(tokens)}", line)
        self._pos += 1
        return tokens

    def keyword(self, *expected: str) -> List[str]:
        """Next record must start with the given keywords; returns the remaining tokens."""
        tokens = self.next(what=" ".join(expected))
        if tokens[: len(expected)] != list(expected):
            raise self.fail(f"expected '{' '.join(expected)}', found '{' '.join(tokens)}'", self._records[self._pos - 1][0])
        return tokens[len(expected):]

    def convert(self, value: str, kind: Callable, what: str):
        try:
            return kind(value)
        except ValueError:
            raise self.fail(f"invalid {what} '{value}'", self._records[self._pos - 1][0])
