"""Answer-snippet extraction with verbatim-containment enforcement.

A model reply only becomes a snippet if it is located verbatim inside the
truncated document text. Location is whitespace-robust: comparisons happen
on NFC text with whitespace runs collapsed, and the returned offsets point
back into the raw truncated text. One corrective retry is spent on replies
that fail containment; after that the pair degrades to no-answer.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass

from .gateway import Gateway, build_corrective_prompt, build_stage1_prompt
from .model import (
    NO_ANSWER,
    AnswerSpan,
    Document,
    Snippet,
    SnippetSet,
    TrainingInstance,
    candidate_set,
)
from .textkernels import collapse_ws_map

REJECT_NOT_FOUND = "not-found"
REJECT_BEYOND_TRUNCATION = "found-only-beyond-truncation"

FLAG_SPAN_VALIDATION_FAILED = "span-validation-failed"
FLAG_POSITIVE_NO_ANSWER = "positive-no-answer"


@dataclass(frozen=True)
class SpanRejection:
    """Why a candidate reply is not a verbatim span of the document."""

    reason: str


def _normalize(text: str) -> tuple[str, list[int]]:
    return collapse_ws_map(unicodedata.normalize("NFC", text))


def validate_span(candidate_text: str, doc: Document) -> AnswerSpan | SpanRejection:
    """Locate ``candidate_text`` verbatim in the doc's truncated text.

    Matching is case-sensitive on NFC text with whitespace runs collapsed;
    offsets index the raw truncated text, so slicing with them re-yields the
    span exactly. A candidate present only past the truncation boundary is
    rejected with its own reason.
    """
    if not candidate_text or candidate_text == NO_ANSWER:
        raise ValueError("candidate must be non-empty and not the no-answer sentinel")
    needle, _ = _normalize(candidate_text.strip())
    if not needle:
        return SpanRejection(REJECT_NOT_FOUND)
    # Document text is NFC already (normalized at construction); the model
    # reply is not, hence the one-sided re-normalization above.
    hay, offsets = collapse_ws_map(doc.truncated_text)
    idx = hay.find(needle)
    if idx < 0:
        full_hay, _ = collapse_ws_map(doc.text)
        if full_hay.find(needle) >= 0:
            return SpanRejection(REJECT_BEYOND_TRUNCATION)
        return SpanRejection(REJECT_NOT_FOUND)
    start = offsets[idx]
    end = offsets[idx + len(needle) - 1] + 1
    return AnswerSpan(doc.truncated_text[start:end], start, end)


def extract_snippet(
    query: str, doc: Document, gateway: Gateway, *, instance_id: str = ""
) -> Snippet:
    """One (query, document) extraction round trip, with one corrective retry."""
    prompt = build_stage1_prompt(query, doc.truncated_text)
    raw = gateway.complete(prompt, instance_id=instance_id)
    snippet = _interpret(doc, raw, attempts=1)
    if snippet is not None:
        return snippet
    complaint = (
        "the reply was not a verbatim contiguous span of the document text "
        "and not the NO_ANSWER token."
    )
    retry_prompt = build_corrective_prompt(prompt, raw, complaint)
    raw = gateway.complete(retry_prompt, instance_id=instance_id)
    snippet = _interpret(doc, raw, attempts=2)
    if snippet is not None:
        return snippet
    return Snippet(doc.doc_id, None, attempts=2, flags=(FLAG_SPAN_VALIDATION_FAILED,))


def _interpret(doc: Document, raw: str, attempts: int) -> Snippet | None:
    candidate = raw.strip()
    if candidate.upper() == NO_ANSWER:
        return Snippet(doc.doc_id, None, attempts=attempts)
    if not candidate:
        return None
    located = validate_span(candidate, doc)
    if isinstance(located, SpanRejection):
        return None
    return Snippet(doc.doc_id, located, attempts=attempts)


def run_stage1(
    instance: TrainingInstance, gateway: Gateway
) -> tuple[SnippetSet, tuple[str, ...]]:
    """Extract snippets for the anchor positive and every negative.

    Snippet ids are 1 for the anchor and 2..N+1 for negatives in input
    order. Gateway failures propagate (the caller marks the instance
    stage1-incomplete); validation failures degrade to no-answer locally.
    """
    entries: list[tuple[int, Snippet]] = []
    flags: list[str] = []
    for snippet_id, doc in enumerate(candidate_set(instance), start=1):
        snippet = extract_snippet(
            instance.query, doc, gateway, instance_id=instance.instance_id
        )
        entries.append((snippet_id, snippet))
        for flag in snippet.flags:
            flags.append(f"{flag}:{doc.doc_id}")
    snippet_set = SnippetSet(query=instance.query, entries=tuple(entries))
    if snippet_set.anchor.is_no_answer:
        flags.append(FLAG_POSITIVE_NO_ANSWER)
    return snippet_set, tuple(flags)
