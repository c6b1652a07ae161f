"""
The exception hierarchy of the #mcdc package. Every error raised deliberately by this package derives
from #McdcError and, where it makes sense, from the closest builtin exception type.
"""

import typing as t
from dataclasses import dataclass

try:
    from termcolor import colored
except ImportError:

    def colored(s, *a, **kw) -> str:  # type: ignore
        return str(s)


class McdcError(Exception):
    """Base class for all errors raised by #mcdc."""


class InvalidArgumentError(McdcError, ValueError):
    """An argument is outside of its valid domain (e.g. a negative fan-in or an empty dataset)."""


class ShapeError(McdcError, ValueError):
    """Tensor shapes are inconsistent with each other or with the layer/model they are passed to."""


class StateError(McdcError, RuntimeError):
    """An operation was invoked in a state that does not permit it (e.g. a backward pass without cache)."""


class SpecError(McdcError, ValueError):
    """An #ArchitectureSpec is not buildable."""


class ConsistencyError(McdcError):
    """Two inputs that must agree with each other do not (e.g. image and label counts of a dataset)."""


@dataclass
class FormatError(McdcError):
    """
    A binary file (IDX or checkpoint) does not follow its format. The *offset* is the byte offset at which
    the problem was detected.
    """

    message: str
    path: str
    offset: int

    def __str__(self) -> str:
        return f"{self.path}: {self.message} (at byte offset {self.offset})"


@dataclass
class ConfigError(McdcError):
    """
    An error in a `key = value` configuration file, or in a value given on the command-line (in which case
    the *filename* is `<argv>`).

    If the `termcolor` module is installed, the error message will be color coded.
    """

    message: str
    filename: str
    line: int
    column: int
    text: str

    def get_text_hint(self) -> str:
        return "\n".join((self.text, "~" * self.column + "^"))

    def __str__(self) -> str:
        lines: t.List[str] = [
            "",
            f'  in {colored(self.filename, "blue")} at line {self.line}: {colored(self.message, "red")}',
            *("  |" + line for line in self.get_text_hint().splitlines()),
        ]
        return "\n".join(lines)
