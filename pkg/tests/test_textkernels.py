"""Text kernels: whitespace collapse with offset maps and word-limit cuts.

The compiled and pure implementations must be indistinguishable, and both
must agree with the independent groupby-based references in oracles.py.
"""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hnrefine.textkernels import IMPLEMENTATION, collapse_ws_map, word_prefix_end
from hnrefine.textkernels import _pure

from oracles import reference_collapse, reference_word_cut

try:
    from hnrefine.textkernels import _native
except ImportError:
    _native = None

IMPLS = [("pure", _pure)] + ([("native", _native)] if _native else [])

# Mixed scripts, combining marks, and every common whitespace class.
_TEXT = st.text(
    alphabet=st.characters(
        codec="utf-8", categories=("L", "N", "P", "Zs", "Cc", "Mn")
    ),
    max_size=200,
)


def test_active_implementation_is_exported():
    assert IMPLEMENTATION in ("pure", "native")
    assert collapse_ws_map("x") == ("x", [0])


@pytest.mark.parametrize("name,impl", IMPLS)
def test_collapse_examples(name, impl):
    assert impl.collapse_ws_map("") == ("", [])
    assert impl.collapse_ws_map("abc") == ("abc", [0, 1, 2])
    assert impl.collapse_ws_map("a  b") == ("a b", [0, 1, 3])
    assert impl.collapse_ws_map("a\t\n b") == ("a b", [0, 1, 4])
    assert impl.collapse_ws_map("  a") == (" a", [0, 2])
    assert impl.collapse_ws_map("a  ") == ("a ", [0, 1])
    assert impl.collapse_ws_map(" \t ") == (" ", [0])


@pytest.mark.parametrize("name,impl", IMPLS)
def test_word_cut_examples(name, impl):
    assert impl.word_prefix_end("one two three", 2) == 7
    assert impl.word_prefix_end("one two three", 3) == -1
    assert impl.word_prefix_end("one two three", 5) == -1
    assert impl.word_prefix_end("  lead  pad  tail", 2) == 11
    assert impl.word_prefix_end("", 3) == -1
    assert impl.word_prefix_end("word", 1) == -1
    assert impl.word_prefix_end("word extra", 1) == 4


@pytest.mark.parametrize("name,impl", IMPLS)
@settings(max_examples=300)
@given(text=_TEXT)
def test_collapse_matches_reference(name, impl, text):
    assert impl.collapse_ws_map(text) == reference_collapse(text)


@pytest.mark.parametrize("name,impl", IMPLS)
@settings(max_examples=300)
@given(text=_TEXT, max_words=st.integers(min_value=1, max_value=30))
def test_word_cut_matches_reference(name, impl, text, max_words):
    assert impl.word_prefix_end(text, max_words) == reference_word_cut(text, max_words)


@pytest.mark.skipif(_native is None, reason="compiled kernels not built")
@settings(max_examples=400)
@given(text=_TEXT, max_words=st.integers(min_value=1, max_value=40))
def test_native_equals_pure(text, max_words):
    assert _native.collapse_ws_map(text) == _pure.collapse_ws_map(text)
    assert _native.word_prefix_end(text, max_words) == _pure.word_prefix_end(
        text, max_words
    )


@settings(max_examples=200)
@given(text=_TEXT)
def test_collapse_offsets_point_back_at_sources(text):
    collapsed, offsets = collapse_ws_map(text)
    assert len(collapsed) == len(offsets)
    assert offsets == sorted(offsets)
    for ch, src in zip(collapsed, offsets):
        if ch == " ":
            assert text[src].isspace()
        else:
            assert text[src] == ch
    # Collapsing twice changes nothing.
    assert collapse_ws_map(collapsed)[0] == collapsed


@settings(max_examples=200)
@given(text=_TEXT, max_words=st.integers(min_value=1, max_value=20))
def test_word_cut_lands_on_a_word_boundary(text, max_words):
    end = word_prefix_end(text, max_words)
    if end == -1:
        assert len(text.split()) <= max_words
        return
    assert 0 < end <= len(text)
    assert not text[end - 1].isspace()
    if end < len(text):
        # Everything kept is exactly max_words words; the cut never splits one.
        assert len(text[:end].split()) == max_words
