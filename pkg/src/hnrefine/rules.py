"""The deterministic label-reconstruction rules.

Given a snippet set and a ranking, every negative gets exactly one decision:

  no-answer snippet                 -> Retain, at any rank (precedence rule)
  ranked above the anchor positive  -> Promote when the mode relabels
  ranked below the anchor positive  -> FilterOut when the mode filters
  action suppressed by the mode     -> Retain (ModeSuppressed)

Everything here is pure; this module is the correctness core of the package.
"""

from __future__ import annotations

from typing import Sequence

from .model import (
    Action,
    Document,
    Mode,
    ModelError,
    RankingOutcome,
    Reason,
    RefinedInstance,
    RefinementDecision,
    SnippetSet,
    TrainingInstance,
)

FLAG_NOANSWER_ABOVE_ANCHOR = "noanswer-above-anchor"
FLAG_NO_NEGATIVES_REMAINING = "no-negatives-remaining"


def decide(
    snippets: SnippetSet,
    ranking: RankingOutcome,
    mode: Mode,
    *,
    filter_above_anchor: bool = False,
) -> list[RefinementDecision]:
    """One decision per negative, in snippet-id (input) order.

    A no-answer snippet is retained in every mode at every position; when it
    ranks above the anchor (a judge inconsistency: no evidence, yet judged
    more direct) the decision carries the noanswer-above-anchor flag.

    ``filter_above_anchor`` widens filter mode to also drop answer-bearing
    negatives ranked above the anchor; it has no effect in modes that
    promote, where promotion takes precedence.
    """
    if len(ranking.order) != len(snippets):
        raise ModelError(
            f"ranking covers {len(ranking.order)} ids, snippet set has {len(snippets)}"
        )
    try:
        anchor_rank = ranking.order.index(snippets.anchor_id) + 1
    except ValueError:
        raise ModelError("no-anchor") from None
    decisions: list[RefinementDecision] = []
    for snippet_id, snippet in snippets.entries:
        if snippet_id == snippets.anchor_id:
            continue
        rank = ranking.order.index(snippet_id) + 1
        span_text = None if snippet.span is None else snippet.span.text
        if snippet.is_no_answer:
            flags = (FLAG_NOANSWER_ABOVE_ANCHOR,) if rank < anchor_rank else ()
            decisions.append(RefinementDecision(
                snippet.doc_id, Action.RETAIN, Reason.NO_ANSWER,
                rank=rank, flags=flags,
            ))
        elif rank < anchor_rank:
            if mode.promotes:
                decisions.append(RefinementDecision(
                    snippet.doc_id, Action.PROMOTE, Reason.RANKED_ABOVE_ANCHOR,
                    rank=rank, snippet_text=span_text,
                ))
            elif filter_above_anchor and mode.filters:
                decisions.append(RefinementDecision(
                    snippet.doc_id, Action.FILTER, Reason.RANKED_ABOVE_ANCHOR,
                    rank=rank, snippet_text=span_text,
                ))
            else:
                decisions.append(RefinementDecision(
                    snippet.doc_id, Action.RETAIN, Reason.MODE_SUPPRESSED,
                    rank=rank, snippet_text=span_text,
                ))
        else:
            if mode.filters:
                decisions.append(RefinementDecision(
                    snippet.doc_id, Action.FILTER, Reason.SNIPPET_BELOW_ANCHOR,
                    rank=rank, snippet_text=span_text,
                ))
            else:
                decisions.append(RefinementDecision(
                    snippet.doc_id, Action.RETAIN, Reason.MODE_SUPPRESSED,
                    rank=rank, snippet_text=span_text,
                ))
    return decisions


def skip_decisions(instance: TrainingInstance) -> list[RefinementDecision]:
    """All-retain decisions for an instance passed through unrefined."""
    return [
        RefinementDecision(doc.doc_id, Action.RETAIN, Reason.INSTANCE_SKIPPED)
        for doc in instance.negatives
    ]


def apply_decisions(
    instance: TrainingInstance,
    decisions: Sequence[RefinementDecision],
    mode: Mode,
    flags: Sequence[str] = (),
) -> RefinedInstance:
    """Reconstruct labels from decisions.

    Promoted negatives append to the positives in their original negative
    order (the original anchor stays first); retained negatives keep their
    order; filtered documents survive only in provenance.
    """
    decided_ids = [d.doc_id for d in decisions]
    negative_ids = [doc.doc_id for doc in instance.negatives]
    if decided_ids != negative_ids:
        raise ModelError(
            f"decisions cover {decided_ids}, instance negatives are {negative_ids}"
        )
    by_id = {d.doc_id: d for d in decisions}
    promoted: list[Document] = []
    retained: list[Document] = []
    for doc in instance.negatives:
        action = by_id[doc.doc_id].action
        if action is Action.PROMOTE:
            promoted.append(doc)
        elif action is Action.RETAIN:
            retained.append(doc)
    all_flags = list(flags)
    if instance.negatives and not retained:
        all_flags.append(FLAG_NO_NEGATIVES_REMAINING)
    return RefinedInstance(
        instance_id=instance.instance_id,
        new_positives=instance.positives + tuple(promoted),
        new_negatives=tuple(retained),
        decisions=tuple(decisions),
        mode=mode,
        flags=tuple(all_flags),
    )
