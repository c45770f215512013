"""Listwise ranking over snippet sets, with parse-and-repair of replies.

The model is asked for ``[r1] > [r2] > ... > [rK]``. Real replies drift from
that form, so the parser accepts bracketed or bare integers separated by ``>``
and repairs duplicates, omissions, and unknown ids deterministically, noting
every repair. A reply with no usable id token at all is unparseable; after
the corrective retry the outcome falls back to input order (anchor first),
which makes downstream refinement a no-op for that instance.
"""

from __future__ import annotations

import re

from .gateway import (
    Gateway,
    PASSAGE_GRANULARITY,
    SNIPPET_GRANULARITY,
    build_corrective_prompt,
    build_stage2_prompt,
)
from .model import ModelError, RankingOutcome, SnippetSet

FLAG_RANKING_UNPARSEABLE = "ranking-unparseable"

_ID_TOKEN = re.compile(r"\[\s*(\d+)\s*\]|(?<![\w.\[])(\d+)(?![\w.\]])")


def serialize_ranking(order: list[int]) -> str:
    """The canonical ranking string for an order, e.g. ``[2] > [1] > [3]``."""
    if not order:
        raise ValueError("order must be non-empty")
    return " > ".join(f"[{r}]" for r in order)


def parse_ranking(raw: str, expected_ids: set[int]) -> tuple[list[int], tuple[str, ...]]:
    """Parse a ranking reply into a permutation of ``expected_ids``.

    Repairs, each recorded as ``kind:id``:
      duplicate-dropped  repeated id keeps its first occurrence
      unknown-dropped    id outside the expected set is discarded
      missing-appended   absent ids are appended at the tail, ascending

    Raises ModelError("unparseable") when the reply contains no expected id
    token at all; partial replies are repaired, not rejected.
    """
    if not expected_ids:
        raise ValueError("expected_ids must be non-empty")
    seen: list[int] = []
    repairs: list[str] = []
    matched_any = False
    for match in _ID_TOKEN.finditer(raw):
        token = match.group(1) or match.group(2)
        value = int(token)
        if value not in expected_ids:
            repairs.append(f"unknown-dropped:{value}")
            continue
        matched_any = True
        if value in seen:
            repairs.append(f"duplicate-dropped:{value}")
            continue
        seen.append(value)
    if not matched_any:
        raise ModelError("unparseable")
    for value in sorted(expected_ids - set(seen)):
        repairs.append(f"missing-appended:{value}")
        seen.append(value)
    return seen, tuple(repairs)


def rank_of(outcome: RankingOutcome, snippet_id: int) -> int:
    """1-based position of a snippet id; smaller means ranked more direct."""
    try:
        return outcome.order.index(snippet_id) + 1
    except ValueError:
        raise ModelError(f"snippet id {snippet_id} not in ranking order") from None


def ranking_entries(
    snippets: SnippetSet,
    granularity: str = SNIPPET_GRANULARITY,
    passages: dict[int, str] | None = None,
) -> list[tuple[int, str]]:
    """Prompt entries for a snippet set, honoring the granularity switch.

    Snippet granularity shows each snippet's text (or the no-answer token);
    passage granularity shows the full truncated passages instead, which
    must be supplied keyed by snippet id.
    """
    if granularity == SNIPPET_GRANULARITY:
        return [(sid, snippet.display_text) for sid, snippet in snippets.entries]
    if granularity == PASSAGE_GRANULARITY:
        if passages is None:
            raise ValueError("passage granularity requires passages keyed by snippet id")
        missing = [sid for sid, _ in snippets.entries if sid not in passages]
        if missing:
            raise ValueError(f"missing passages for snippet ids {missing}")
        return [(sid, passages[sid]) for sid, _ in snippets.entries]
    raise ValueError(f"unknown granularity {granularity!r}")


def rank_snippets(
    query: str,
    snippets: SnippetSet,
    gateway: Gateway,
    *,
    granularity: str = SNIPPET_GRANULARITY,
    passages: dict[int, str] | None = None,
    instance_id: str = "",
) -> RankingOutcome:
    """Obtain a validated total order over a snippet set.

    Singleton sets short-circuit to [1] without a request. Unparseable
    replies get one corrective retry; if that also fails to parse, the
    outcome is input order with the ranking-unparseable flag set.
    """
    ids = [sid for sid, _ in snippets.entries]
    if len(ids) == 1:
        return RankingOutcome(order=(1,), repairs=(), raw_response="")
    entries = ranking_entries(snippets, granularity, passages)
    prompt = build_stage2_prompt(query, entries, granularity)
    raw = gateway.complete(prompt, instance_id=instance_id)
    expected = set(ids)
    try:
        order, repairs = parse_ranking(raw, expected)
    except ModelError:
        retry_prompt = build_corrective_prompt(
            prompt, raw,
            "the reply did not contain a ranking over the numbered entries.",
        )
        raw = gateway.complete(retry_prompt, instance_id=instance_id)
        try:
            order, repairs = parse_ranking(raw, expected)
        except ModelError:
            return RankingOutcome(
                order=tuple(ids),
                repairs=(FLAG_RANKING_UNPARSEABLE,),
                raw_response=raw,
            )
    return RankingOutcome(order=tuple(order), repairs=repairs, raw_response=raw)
