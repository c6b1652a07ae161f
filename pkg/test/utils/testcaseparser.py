import os
import re
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

import pytest

MARKER = re.compile(r'^===\s*(.+?)\s*===\s*$')


@dataclass
class Block:
  marker: str
  line: int
  body: t.List[str] = field(default_factory=list)

  @property
  def text(self) -> str:
    return '\n'.join(self.body)


@dataclass
class CaseData:
  filename: str
  name: str
  input: str
  input_line: int
  expects: str
  expects_line: int
  expects_error: bool
  options: t.Set[str]


def split_blocks(content: str, filename: str) -> t.List[Block]:
  """
  Splits *content* at `=== MARKER ===` lines. Every line after a marker up to the next one is the marker's
  body. Line numbers are zero-based.
  """

  blocks: t.List[Block] = []
  for index, line in enumerate(content.splitlines()):
    match = MARKER.match(line)
    if match:
      blocks.append(Block(match.group(1), index))
    elif blocks:
      blocks[-1].body.append(line)
    elif line.strip():
      raise ValueError(f'{filename}:{index}: text before the first marker')
  return blocks


def parse_testcase_file(content: str, filename: str) -> t.Iterator[CaseData]:
  """
  Parses a config test case file. Such a file must be of the following form:

  ```
  === TEST <test_name> ===
  <config lines>
  <...>
  === EXPECTS ===
  <key = value lines of the effective config>
  <...>
  === END ===
  ```

  The EXPECTS marker may read `EXPECTS ERROR`, in which case its body is the text hint of the expected
  error. Multiple such blocks may be contained in a single file, each optionally preceded by
  `=== OPTION <name> ===` markers that apply to that test only.
  """

  options: t.Set[str] = set()
  blocks = iter(split_blocks(content, filename))
  for block in blocks:
    option = re.match(r'OPTION\s+(\w+)$', block.marker)
    if option:
      options.add(option.group(1))
      continue
    test = re.match(r'(DISABLED\s+)?TEST\s+(\w+)$', block.marker)
    if not test:
      raise ValueError(f'{filename}:{block.line}: expected a TEST marker, got {block.marker!r}')
    expects = next(blocks, None)
    kind = re.match(r'EXPECTS(\s+ERROR)?$', expects.marker) if expects else None
    if not expects or not kind:
      raise ValueError(f'{filename}:{block.line}: TEST {test.group(2)} has no EXPECTS section')
    end = next(blocks, None)
    if not end or end.marker != 'END':
      raise ValueError(f'{filename}:{expects.line}: TEST {test.group(2)} is not closed by END')
    if not test.group(1):
      yield CaseData(
        filename,
        test.group(2),
        block.text,
        block.line + 1,
        expects.text,
        expects.line + 1,
        bool(kind.group(1)),
        options,
      )
    options = set()


def cases_from(path: Path) -> t.Callable[[t.Callable], t.Callable]:
  """
  Decorator for a test function to parametrize it with the test cases from the `.txt` files of a directory.
  """

  test_cases = {}
  for root, dirs, files in os.walk(path):
    for filename in sorted(map(Path(root).joinpath, files)):
      if filename.suffix == '.txt':
        test_cases[filename] = {case.name: case for case in parse_testcase_file(filename.read_text(), str(filename))}
  test_parameters = [(path, name) for path, cases in test_cases.items() for name in cases]

  def decorator(func: t.Callable) -> t.Callable:

    @pytest.mark.parametrize('path,name', test_parameters)
    def wrapper(path, name):
      return func(test_cases[path][name])

    wrapper.__name__ = func.__name__
    return wrapper

  return decorator
