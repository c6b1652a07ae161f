from textwrap import dedent

import pytest

from .testcaseparser import CaseData, parse_testcase_file, split_blocks


def test_testcaseparser():
  content = dedent('''
    === OPTION foobar ===
    === TEST abc ===
    epochs = 3
    === EXPECTS ===
    epochs = 3
    === END ===

    === DISABLED TEST skipped ===
    seed = 1
    === EXPECTS ===
    === END ===
    === TEST bad ===
    epochs three
    === EXPECTS ERROR ===
    epochs three
    ~~~~~~~^
    === END ===
  ''')

  result = list(parse_testcase_file(content, '<string>'))

  assert result == [
      CaseData('<string>', 'abc', 'epochs = 3', 3, 'epochs = 3', 5, False, {'foobar'}),
      CaseData('<string>', 'bad', 'epochs three', 13, 'epochs three\n~~~~~~~^', 15, True, set()),
  ]


def test_split_blocks():
  blocks = split_blocks('\n=== A ===\none\n\ntwo\n=== B ===\n', '<string>')
  assert [(b.marker, b.line, b.text) for b in blocks] == [('A', 1, 'one\n\ntwo'), ('B', 5, '')]
  with pytest.raises(ValueError):
    split_blocks('stray\n=== A ===\n', '<string>')


def test_incomplete_case():
  with pytest.raises(ValueError, match='not closed'):
    list(parse_testcase_file('=== TEST a ===\nx\n=== EXPECTS ===\ny\n', '<string>'))
