"""Pure-Python reference implementation of the text kernels.

Whitespace means ``str.isspace()`` for a single code point, matching the
compiled twin exactly.
"""

from __future__ import annotations


def collapse_ws_map(text: str) -> tuple[str, list[int]]:
    """Collapse whitespace runs to single spaces, tracking source offsets.

    Returns ``(collapsed, offsets)`` where ``offsets[i]`` is the index in
    ``text`` of the character that produced ``collapsed[i]``; a collapsed run
    maps to the index of its first whitespace character.
    """
    chars: list[str] = []
    offsets: list[int] = []
    in_ws = False
    for i, ch in enumerate(text):
        if ch.isspace():
            if not in_ws:
                chars.append(" ")
                offsets.append(i)
                in_ws = True
        else:
            chars.append(ch)
            offsets.append(i)
            in_ws = False
    return "".join(chars), offsets


def word_prefix_end(text: str, max_words: int) -> int:
    """Offset just past the ``max_words``-th whitespace-delimited word.

    Returns -1 when ``text`` holds at most ``max_words`` words (no cut
    needed). The cut point excludes any whitespace after the last kept word.
    """
    count = 0
    end = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        count += 1
        if count > max_words:
            return end
        while i < n and not text[i].isspace():
            i += 1
        end = i
    return -1
