# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twin of _pure.py. Keep behaviour identical; tests compare both."""

from cpython.unicode cimport Py_UNICODE_ISSPACE


def collapse_ws_map(str text):
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i
    cdef Py_UCS4 ch
    cdef bint in_ws = False
    cdef list chars = []
    cdef list offsets = []
    for i in range(n):
        ch = text[i]
        if Py_UNICODE_ISSPACE(ch):
            if not in_ws:
                chars.append(u" ")
                offsets.append(i)
                in_ws = True
        else:
            chars.append(ch)
            offsets.append(i)
            in_ws = False
    return u"".join(chars), offsets


def word_prefix_end(str text, max_words):
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t end = 0
    cdef Py_ssize_t count = 0
    cdef Py_ssize_t limit = max_words
    while i < n:
        if Py_UNICODE_ISSPACE(<Py_UCS4> text[i]):
            i += 1
            continue
        count += 1
        if count > limit:
            return end
        while i < n and not Py_UNICODE_ISSPACE(<Py_UCS4> text[i]):
            i += 1
        end = i
    return -1
