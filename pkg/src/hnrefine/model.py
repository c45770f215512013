"""Domain types shared across the pipeline. Pure data, no I/O.

Everything here is an immutable value after construction and safe to share
between worker threads. Invariants are enforced in ``__post_init__`` so a
constructed value is always well-formed.
"""

from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

NO_ANSWER = "NO_ANSWER"


class ModelError(ValueError):
    """Invariant violation while constructing or combining domain values."""


def _tuple(items: Iterable) -> tuple:
    return items if isinstance(items, tuple) else tuple(items)


@dataclass(frozen=True)
class Document:
    """A candidate passage, kept alongside its truncated form.

    ``text`` and ``truncated_text`` are NFC-normalized at construction;
    ``truncated_text`` is always a prefix of ``text``.
    """

    doc_id: str
    text: str
    truncated_text: str
    truncation_applied: bool = False
    id_synthesized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "text", unicodedata.normalize("NFC", self.text))
        object.__setattr__(
            self, "truncated_text", unicodedata.normalize("NFC", self.truncated_text)
        )
        if not self.doc_id:
            raise ModelError("document requires a doc_id")
        if not self.text.startswith(self.truncated_text):
            raise ModelError(f"truncated_text is not a prefix of text for {self.doc_id!r}")
        if self.text and not self.truncated_text:
            raise ModelError(f"truncated_text is empty for non-empty document {self.doc_id!r}")

    @classmethod
    def raw(cls, doc_id: str, text: str, *, id_synthesized: bool = False) -> "Document":
        """An untruncated document (truncated_text == text)."""
        return cls(
            doc_id=doc_id,
            text=text,
            truncated_text=unicodedata.normalize("NFC", text),
            truncation_applied=False,
            id_synthesized=id_synthesized,
        )


@dataclass(frozen=True)
class TrainingInstance:
    """One query with its positive set and hard-negative set."""

    instance_id: str
    query: str
    positives: tuple[Document, ...]
    negatives: tuple[Document, ...]
    source_dataset: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "positives", _tuple(self.positives))
        object.__setattr__(self, "negatives", _tuple(self.negatives))
        if not self.positives:
            raise ModelError(f"instance {self.instance_id!r} has no positive document")
        ids = [d.doc_id for d in self.positives + self.negatives]
        if len(set(ids)) != len(ids):
            raise ModelError(f"instance {self.instance_id!r} has duplicate document ids")

    @property
    def multi_positive(self) -> bool:
        return len(self.positives) > 1


def candidate_set(instance: TrainingInstance) -> list[Document]:
    """The ranked candidates for one query: anchor positive, then negatives.

    Only the first positive participates in ranking (the candidate set has
    1 + N entries); any extra positives pass through refinement untouched
    and the instance carries the multi-positive flag.
    """
    return [instance.positives[0]] + list(instance.negatives)


@dataclass(frozen=True)
class AnswerSpan:
    """A verbatim span located inside a document's truncated text."""

    text: str
    char_start: int
    char_end: int

    def __post_init__(self) -> None:
        if not self.text:
            raise ModelError("answer span text is empty")
        if not (0 <= self.char_start < self.char_end):
            raise ModelError(f"bad span offsets [{self.char_start}, {self.char_end})")


@dataclass(frozen=True)
class Snippet:
    """Stage-1 output for one (query, document) pair.

    ``span`` is None for the no-answer sentinel.
    """

    doc_id: str
    span: AnswerSpan | None
    attempts: int = 1
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "flags", _tuple(self.flags))

    @property
    def is_no_answer(self) -> bool:
        return self.span is None

    @property
    def display_text(self) -> str:
        return NO_ANSWER if self.span is None else self.span.text


@dataclass(frozen=True)
class SnippetSet:
    """Snippets for one instance, keyed by 1-based snippet id.

    Id 1 is always the positive document's snippet (the anchor).
    """

    query: str
    entries: tuple[tuple[int, Snippet], ...]
    anchor_id: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", _tuple(self.entries))
        ids = [sid for sid, _ in self.entries]
        if ids != list(range(1, len(ids) + 1)):
            raise ModelError(f"snippet ids must be 1..{len(ids)} in order, got {ids}")
        if self.anchor_id != 1:
            raise ModelError("anchor snippet id must be 1 (positive document)")

    def __len__(self) -> int:
        return len(self.entries)

    def snippet(self, snippet_id: int) -> Snippet:
        return self.entries[snippet_id - 1][1]

    @property
    def anchor(self) -> Snippet:
        return self.snippet(self.anchor_id)


@dataclass(frozen=True)
class RankingOutcome:
    """A validated strict total order over snippet ids (most answerable first)."""

    order: tuple[int, ...]
    repairs: tuple[str, ...] = ()
    raw_response: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", _tuple(self.order))
        object.__setattr__(self, "repairs", _tuple(self.repairs))
        if sorted(self.order) != list(range(1, len(self.order) + 1)):
            raise ModelError(f"order is not a permutation of 1..{len(self.order)}: {self.order}")


class Mode(enum.Enum):
    """Which of the two label edits are applied."""

    FILTER = "filter"
    RELABEL = "relabel"
    RELABEL_AND_FILTER = "r+f"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {
            "filter": cls.FILTER,
            "relabel": cls.RELABEL,
            "r+f": cls.RELABEL_AND_FILTER,
            "rf": cls.RELABEL_AND_FILTER,
            "relabel+filter": cls.RELABEL_AND_FILTER,
            "relabel_and_filter": cls.RELABEL_AND_FILTER,
        }
        try:
            return aliases[value.strip().lower()]
        except KeyError:
            raise ModelError(f"unknown mode {value!r} (expected filter, relabel, or r+f)") from None

    @property
    def promotes(self) -> bool:
        return self in (Mode.RELABEL, Mode.RELABEL_AND_FILTER)

    @property
    def filters(self) -> bool:
        return self in (Mode.FILTER, Mode.RELABEL_AND_FILTER)


class Action(enum.Enum):
    PROMOTE = "PromoteToPositive"
    FILTER = "FilterOut"
    RETAIN = "RetainNegative"


class Reason(enum.Enum):
    RANKED_ABOVE_ANCHOR = "RankedAboveAnchor"
    SNIPPET_BELOW_ANCHOR = "SnippetBelowAnchor"
    NO_ANSWER = "NoAnswer"
    MODE_SUPPRESSED = "ModeSuppressed"
    INSTANCE_SKIPPED = "InstanceSkipped"


# Legal (action, reason) pairs. The last row is only reachable with the
# experimental filter_above_anchor switch.
LEGAL_ACTION_REASONS: frozenset[tuple[Action, Reason]] = frozenset(
    {
        (Action.PROMOTE, Reason.RANKED_ABOVE_ANCHOR),
        (Action.FILTER, Reason.SNIPPET_BELOW_ANCHOR),
        (Action.RETAIN, Reason.NO_ANSWER),
        (Action.RETAIN, Reason.MODE_SUPPRESSED),
        (Action.RETAIN, Reason.INSTANCE_SKIPPED),
        (Action.FILTER, Reason.RANKED_ABOVE_ANCHOR),
    }
)


@dataclass(frozen=True)
class RefinementDecision:
    """The recorded outcome for one input negative."""

    doc_id: str
    action: Action
    reason: Reason
    rank: int | None = None
    snippet_text: str | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "flags", _tuple(self.flags))
        if (self.action, self.reason) not in LEGAL_ACTION_REASONS:
            raise ModelError(f"illegal action/reason pair: {self.action}/{self.reason}")


@dataclass(frozen=True)
class RefinedInstance:
    """Output partition of an instance's negatives, with provenance."""

    instance_id: str
    new_positives: tuple[Document, ...]
    new_negatives: tuple[Document, ...]
    decisions: tuple[RefinementDecision, ...]
    mode: Mode
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "new_positives", _tuple(self.new_positives))
        object.__setattr__(self, "new_negatives", _tuple(self.new_negatives))
        object.__setattr__(self, "decisions", _tuple(self.decisions))
        object.__setattr__(self, "flags", _tuple(self.flags))

    def decided(self, action: Action) -> list[RefinementDecision]:
        return [d for d in self.decisions if d.action is action]


class ItemStatus(enum.Enum):
    PENDING = "pending"
    DISAGREED = "disagreed"
    ADJUDICATED = "adjudicated"
    DONE = "done"


@dataclass(frozen=True)
class AnnotationItem:
    """One query-negative pair offered to human assessors.

    ``llm_label`` is the hidden machine claim (True = predicted false
    negative); it must never reach assessor-facing payloads before export.
    """

    pair_id: str
    query: str
    negative_text: str
    llm_label: bool
    judge_tag: str = ""


@dataclass(frozen=True)
class AnnotationSession:
    """Immutable snapshot of an annotation session's state."""

    session_id: str
    items: tuple[AnnotationItem, ...]
    judgments: Mapping[str, Mapping[str, bool]]  # pair_id -> assessor -> label
    adjudicated: Mapping[str, bool]  # pair_id -> final label
    assessors: tuple[str, ...] = ("A", "B")

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", _tuple(self.items))
        object.__setattr__(self, "assessors", _tuple(self.assessors))

    def status(self, pair_id: str) -> ItemStatus:
        judged = self.judgments.get(pair_id, {})
        if len(judged) < len(self.assessors):
            return ItemStatus.PENDING
        labels = set(judged.values())
        if len(labels) == 1:
            return ItemStatus.DONE
        if pair_id in self.adjudicated:
            return ItemStatus.ADJUDICATED
        return ItemStatus.DISAGREED

    def final_label(self, pair_id: str) -> bool | None:
        """Adjudicated label; for agreed items this is the common judgment."""
        status = self.status(pair_id)
        if status is ItemStatus.DONE:
            return next(iter(self.judgments[pair_id].values()))
        if status is ItemStatus.ADJUDICATED:
            return self.adjudicated[pair_id]
        return None

    @property
    def complete(self) -> bool:
        return all(
            self.status(item.pair_id) in (ItemStatus.DONE, ItemStatus.ADJUDICATED)
            for item in self.items
        )


def instance_flags(instance: TrainingInstance) -> tuple[str, ...]:
    """Anomaly flags derivable from the instance shape alone."""
    return ("multi-positive",) if instance.multi_positive else ()


def make_refined_passthrough(
    instance: TrainingInstance,
    mode: Mode,
    flags: Sequence[str],
    decisions: Sequence[RefinementDecision] = (),
) -> RefinedInstance:
    """An unrefined result: labels untouched, negatives all retained."""
    return RefinedInstance(
        instance_id=instance.instance_id,
        new_positives=instance.positives,
        new_negatives=instance.negatives,
        decisions=tuple(decisions),
        mode=mode,
        flags=tuple(flags),
    )
