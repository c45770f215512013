"""Label-reconstruction rules against an independent outcome oracle."""

from __future__ import annotations

import itertools

import pytest

from hnrefine.model import (
    Action,
    AnswerSpan,
    Document,
    Mode,
    ModelError,
    RankingOutcome,
    Reason,
    Snippet,
    SnippetSet,
    TrainingInstance,
)
from hnrefine.rules import (
    FLAG_NOANSWER_ABOVE_ANCHOR,
    FLAG_NO_NEGATIVES_REMAINING,
    apply_decisions,
    decide,
    skip_decisions,
)

from oracles import naive_outcome_table


def _snippets(has_span):
    """Snippet set from a presence list; index 0 is the anchor."""
    entries = tuple(
        (
            i + 1,
            Snippet(
                "anchor" if i == 0 else f"neg{i}",
                AnswerSpan(f"span text {i + 1}", 0, 11) if present else None,
            ),
        )
        for i, present in enumerate(has_span)
    )
    return SnippetSet(query="q", entries=entries)


def _instance(n_neg):
    return TrainingInstance(
        instance_id="i1",
        query="q",
        positives=(Document.raw("anchor", "anchor text"),),
        negatives=tuple(Document.raw(f"neg{i}", f"neg text {i}") for i in range(1, n_neg + 1)),
    )


# The four-candidate scenario: anchor A=1 plus negatives B=2, C=3, D=4,
# ranked B > A > C > D, with D carrying no span.
WE_SNIPPETS = _snippets([True, True, True, False])
WE_RANKING = RankingOutcome(order=(2, 1, 3, 4))


def _by_doc(decisions):
    return {d.doc_id: d for d in decisions}


class TestWorkedExampleModes:
    def test_relabel_and_filter(self):
        got = _by_doc(decide(WE_SNIPPETS, WE_RANKING, Mode.RELABEL_AND_FILTER))
        assert got["neg1"].action is Action.PROMOTE
        assert got["neg1"].reason is Reason.RANKED_ABOVE_ANCHOR
        assert got["neg1"].rank == 1
        assert got["neg2"].action is Action.FILTER
        assert got["neg2"].reason is Reason.SNIPPET_BELOW_ANCHOR
        assert got["neg2"].rank == 3
        assert got["neg3"].action is Action.RETAIN
        assert got["neg3"].reason is Reason.NO_ANSWER
        assert got["neg3"].rank == 4

    def test_relabel_only_suppresses_the_filter(self):
        got = _by_doc(decide(WE_SNIPPETS, WE_RANKING, Mode.RELABEL))
        assert got["neg1"].action is Action.PROMOTE
        assert got["neg2"].action is Action.RETAIN
        assert got["neg2"].reason is Reason.MODE_SUPPRESSED
        assert got["neg3"].reason is Reason.NO_ANSWER

    def test_filter_only_suppresses_the_promotion(self):
        got = _by_doc(decide(WE_SNIPPETS, WE_RANKING, Mode.FILTER))
        assert got["neg1"].action is Action.RETAIN
        assert got["neg1"].reason is Reason.MODE_SUPPRESSED
        assert got["neg2"].action is Action.FILTER
        assert got["neg3"].action is Action.RETAIN

    def test_decisions_in_input_order_with_span_text(self):
        decisions = decide(WE_SNIPPETS, WE_RANKING, Mode.RELABEL_AND_FILTER)
        assert [d.doc_id for d in decisions] == ["neg1", "neg2", "neg3"]
        assert decisions[0].snippet_text == "span text 2"
        assert decisions[2].snippet_text is None


class TestPartitions:
    def test_worked_example_partitions_per_mode(self):
        instance = _instance(3)
        expectations = {
            Mode.RELABEL_AND_FILTER: (["anchor", "neg1"], ["neg3"]),
            Mode.RELABEL: (["anchor", "neg1"], ["neg2", "neg3"]),
            Mode.FILTER: (["anchor"], ["neg1", "neg3"]),
        }
        for mode, (want_pos, want_neg) in expectations.items():
            refined = apply_decisions(
                instance, decide(WE_SNIPPETS, WE_RANKING, mode), mode
            )
            assert [d.doc_id for d in refined.new_positives] == want_pos, mode
            assert [d.doc_id for d in refined.new_negatives] == want_neg, mode
            assert len(refined.decisions) == 3

    def test_promoted_documents_append_in_negative_order(self):
        instance = _instance(3)
        snippets = _snippets([True, True, True, True])
        # Both neg1 and neg3 rank above the anchor.
        ranking = RankingOutcome(order=(2, 4, 1, 3))
        refined = apply_decisions(
            instance, decide(snippets, ranking, Mode.RELABEL), Mode.RELABEL
        )
        assert [d.doc_id for d in refined.new_positives] == ["anchor", "neg1", "neg3"]

    def test_no_negatives_remaining_flag(self):
        instance = _instance(2)
        snippets = _snippets([True, True, True])
        ranking = RankingOutcome(order=(2, 3, 1))
        refined = apply_decisions(
            instance,
            decide(snippets, ranking, Mode.RELABEL_AND_FILTER),
            Mode.RELABEL_AND_FILTER,
        )
        assert refined.new_negatives == ()
        assert FLAG_NO_NEGATIVES_REMAINING in refined.flags

    def test_decision_coverage_must_match_negatives(self):
        instance = _instance(3)
        decisions = decide(WE_SNIPPETS, WE_RANKING, Mode.FILTER)
        with pytest.raises(ModelError, match="decisions cover"):
            apply_decisions(instance, decisions[:2], Mode.FILTER)
        with pytest.raises(ModelError):
            apply_decisions(instance, list(reversed(decisions)), Mode.FILTER)

    def test_skip_decisions_retain_everything(self):
        instance = _instance(4)
        decisions = skip_decisions(instance)
        assert [d.doc_id for d in decisions] == ["neg1", "neg2", "neg3", "neg4"]
        assert all(d.action is Action.RETAIN for d in decisions)
        assert all(d.reason is Reason.INSTANCE_SKIPPED for d in decisions)
        refined = apply_decisions(instance, decisions, Mode.FILTER)
        assert refined.new_positives == instance.positives
        assert refined.new_negatives == instance.negatives


class TestNoAnswerPrecedence:
    def test_no_answer_above_anchor_is_retained_and_flagged(self):
        snippets = _snippets([True, False, True])
        ranking = RankingOutcome(order=(2, 1, 3))
        for mode in Mode:
            got = _by_doc(decide(snippets, ranking, mode))
            assert got["neg1"].action is Action.RETAIN, mode
            assert got["neg1"].reason is Reason.NO_ANSWER
            assert FLAG_NOANSWER_ABOVE_ANCHOR in got["neg1"].flags

    def test_no_answer_below_anchor_not_flagged(self):
        got = _by_doc(decide(WE_SNIPPETS, WE_RANKING, Mode.RELABEL_AND_FILTER))
        assert got["neg3"].flags == ()


class TestFilterAboveAnchorSwitch:
    def test_widens_filter_mode(self):
        got = _by_doc(
            decide(WE_SNIPPETS, WE_RANKING, Mode.FILTER, filter_above_anchor=True)
        )
        assert got["neg1"].action is Action.FILTER
        assert got["neg1"].reason is Reason.RANKED_ABOVE_ANCHOR
        assert got["neg2"].action is Action.FILTER

    def test_promotion_takes_precedence_when_mode_promotes(self):
        for mode in (Mode.RELABEL, Mode.RELABEL_AND_FILTER):
            got = _by_doc(
                decide(WE_SNIPPETS, WE_RANKING, mode, filter_above_anchor=True)
            )
            assert got["neg1"].action is Action.PROMOTE, mode


class TestValidation:
    def test_ranking_length_must_match(self):
        with pytest.raises(ModelError, match="covers"):
            decide(WE_SNIPPETS, RankingOutcome(order=(2, 1, 3)), Mode.FILTER)

    def test_anchor_must_be_ranked(self):
        snippets = _snippets([True, True])
        # A hand-built outcome that skips the anchor id entirely.
        bogus = RankingOutcome(order=(1, 2))
        object.__setattr__(bogus, "order", (2, 3))
        with pytest.raises(ModelError, match="no-anchor"):
            decide(snippets, bogus, Mode.FILTER)


class TestOracleEquivalenceSmall:
    def test_every_case_up_to_three_negatives(self):
        # The acceptance suite sweeps through N=4; this keeps the fast check
        # close to the unit tests.
        for n_neg in range(1, 4):
            instance = _instance(n_neg)
            for pattern in itertools.product([False, True], repeat=n_neg):
                snippets = _snippets([True, *pattern])
                for order in itertools.permutations(range(1, n_neg + 2)):
                    ranking = RankingOutcome(order=order)
                    for mode in Mode:
                        for widen in (False, True):
                            want = naive_outcome_table(
                                {i + 1: s.span is not None
                                 for i, (_, s) in enumerate(snippets.entries)},
                                order,
                                mode.value,
                                widen_filter=widen,
                            )
                            got = decide(
                                snippets, ranking, mode, filter_above_anchor=widen
                            )
                            got_table = {
                                sid: (d.action.value, d.reason.value)
                                for sid, d in zip(range(2, n_neg + 2), got)
                            }
                            assert got_table == want, (pattern, order, mode, widen)
                            refined = apply_decisions(instance, got, mode)
                            # Partition sanity: every negative lands in
                            # exactly one of the three buckets.
                            n_promoted = len(refined.new_positives) - 1
                            n_retained = len(refined.new_negatives)
                            n_filtered = n_neg - n_promoted - n_retained
                            assert n_promoted == sum(
                                1 for v in want.values() if v[0] == "PromoteToPositive"
                            )
                            assert n_filtered == sum(
                                1 for v in want.values() if v[0] == "FilterOut"
                            )
