"""Ranking serialization, reply parsing with repairs, and stage-2 retries."""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hnrefine.model import AnswerSpan, ModelError, RankingOutcome, Snippet, SnippetSet
from hnrefine.ranking import (
    FLAG_RANKING_UNPARSEABLE,
    parse_ranking,
    rank_of,
    rank_snippets,
    ranking_entries,
    serialize_ranking,
)
from hnrefine.synth import FaultSpec

from conftest import StubGateway, build_worked_example, oracle_gateway


def _snippet_set(texts):
    entries = tuple(
        (i + 1, Snippet(f"d{i + 1}", AnswerSpan(t, 0, len(t)) if t else None))
        for i, t in enumerate(texts)
    )
    return SnippetSet(query="q", entries=entries)


class TestSerializeAndParse:
    def test_canonical_form(self):
        assert serialize_ranking([2, 1, 3]) == "[2] > [1] > [3]"
        with pytest.raises(ValueError):
            serialize_ranking([])

    def test_roundtrip_all_permutations_up_to_six(self):
        for k in range(1, 7):
            expected = set(range(1, k + 1))
            for perm in itertools.permutations(range(1, k + 1)):
                order, repairs = parse_ranking(serialize_ranking(list(perm)), expected)
                assert order == list(perm)
                assert repairs == ()

    def test_bracketed_and_bare_tokens(self):
        assert parse_ranking("[3] > [1] > [2]", {1, 2, 3})[0] == [3, 1, 2]
        assert parse_ranking("3 > 1 > 2", {1, 2, 3})[0] == [3, 1, 2]
        assert parse_ranking("Order: 2, then 1, then 3.", {1, 2, 3})[0] == [2, 1, 3]

    def test_duplicate_keeps_first_and_missing_appends(self):
        order, repairs = parse_ranking("[2] > [2] > [1]", {1, 2, 3})
        assert order == [2, 1, 3]
        assert repairs == ("duplicate-dropped:2", "missing-appended:3")

    def test_unknown_ids_dropped(self):
        order, repairs = parse_ranking("[1] > [5] > [2]", {1, 2})
        assert order == [1, 2]
        assert repairs == ("unknown-dropped:5",)

    def test_missing_ids_append_ascending(self):
        order, repairs = parse_ranking("[3]", {1, 2, 3, 4})
        assert order == [3, 1, 2, 4]
        assert repairs == ("missing-appended:1", "missing-appended:2",
                           "missing-appended:4")

    def test_numbers_inside_words_and_decimals_ignored(self):
        with pytest.raises(ModelError, match="unparseable"):
            parse_ranking("pi is 3.14 and x1 beats y2", {1, 2, 3})
        order, _ = parse_ranking("item2 ranks above, so: 2 > 1", {1, 2})
        assert order == [2, 1]

    def test_no_expected_tokens_is_unparseable(self):
        with pytest.raises(ModelError, match="unparseable"):
            parse_ranking("I cannot rank these.", {1, 2, 3})
        # Only out-of-range ids is still unparseable, not a repair job.
        with pytest.raises(ModelError, match="unparseable"):
            parse_ranking("[9] > [8]", {1, 2, 3})

    def test_expected_ids_required(self):
        with pytest.raises(ValueError):
            parse_ranking("[1]", set())

    @settings(max_examples=400)
    @given(
        k=st.integers(min_value=2, max_value=8),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_mutilated_replies_repair_to_permutations(self, k, seed):
        rng = random.Random(seed)
        ids = list(range(1, k + 1))
        rng.shuffle(ids)
        tokens = [f"[{i}]" for i in ids]
        # Random mutilations: duplicate, drop, inject unknown, prose noise.
        if rng.random() < 0.5 and tokens:
            tokens.insert(rng.randrange(len(tokens) + 1), rng.choice(tokens))
        if rng.random() < 0.5 and len(tokens) > 1:
            tokens.pop(rng.randrange(len(tokens)))
        if rng.random() < 0.4:
            tokens.insert(rng.randrange(len(tokens) + 1), f"[{k + rng.randrange(1, 9)}]")
        sep = rng.choice([" > ", ">", " , ", " then "])
        raw = rng.choice(["", "Ranking: ", "Sure. "]) + sep.join(tokens)
        try:
            order, _ = parse_ranking(raw, set(range(1, k + 1)))
        except ModelError:
            # Legal only when the reply kept no expected token at all.
            assert not any(str(i) in raw for i in range(1, k + 1))
            return
        assert sorted(order) == list(range(1, k + 1))


class TestRankOf:
    def test_positions_are_one_based(self):
        outcome = RankingOutcome(order=(2, 1, 3, 4))
        assert rank_of(outcome, 2) == 1
        assert rank_of(outcome, 1) == 2
        assert rank_of(outcome, 4) == 4
        with pytest.raises(ModelError):
            rank_of(outcome, 9)


class TestRankingEntries:
    def test_snippet_granularity_uses_display_text(self):
        snippets = _snippet_set(["alpha", None, "gamma"])
        assert ranking_entries(snippets) == [
            (1, "alpha"), (2, "NO_ANSWER"), (3, "gamma"),
        ]

    def test_passage_granularity_substitutes_full_passages(self):
        snippets = _snippet_set(["alpha", None])
        passages = {1: "full passage one", 2: "full passage two"}
        assert ranking_entries(snippets, "passage", passages) == [
            (1, "full passage one"), (2, "full passage two"),
        ]

    def test_passage_granularity_requires_every_passage(self):
        snippets = _snippet_set(["alpha", None])
        with pytest.raises(ValueError, match="missing passages"):
            ranking_entries(snippets, "passage", {1: "only one"})
        with pytest.raises(ValueError):
            ranking_entries(snippets, "passage", None)
        with pytest.raises(ValueError):
            ranking_entries(snippets, "paragraph")


class TestRankSnippets:
    def test_worked_example_order(self):
        we = build_worked_example()
        gateway, backend = oracle_gateway(we.plan)
        snippets = _snippet_set(
            [we.spans["A"], we.spans["B"], we.spans["C"], None]
        )
        outcome = rank_snippets(we.query, snippets, gateway)
        assert outcome.order == (2, 1, 3, 4)
        assert outcome.repairs == ()
        assert backend.requests == 1

    def test_singleton_needs_no_request(self):
        we = build_worked_example()
        gateway, backend = oracle_gateway(we.plan)
        outcome = rank_snippets(we.query, _snippet_set(["only"]), gateway)
        assert outcome.order == (1,)
        assert backend.requests == 0

    def test_duplicate_mangle_is_repaired_without_retry(self):
        we = build_worked_example()
        gateway, backend = oracle_gateway(we.plan, FaultSpec(mangle_stage2="duplicate"))
        snippets = _snippet_set([we.spans["A"], we.spans["B"], we.spans["C"], None])
        outcome = rank_snippets(we.query, snippets, gateway)
        assert outcome.order == (2, 1, 3, 4)
        assert outcome.repairs == ("duplicate-dropped:2",)
        assert backend.requests == 1

    def test_missing_mangle_appends_dropped_id(self):
        we = build_worked_example()
        gateway, _ = oracle_gateway(we.plan, FaultSpec(mangle_stage2="missing"))
        snippets = _snippet_set([we.spans["A"], we.spans["B"], we.spans["C"], None])
        outcome = rank_snippets(we.query, snippets, gateway)
        assert outcome.order == (2, 1, 3, 4)
        assert outcome.repairs == ("missing-appended:4",)

    def test_unparseable_reply_gets_one_corrective_then_recovers(self):
        gateway = StubGateway(["no ranking here", "[2] > [1]"])
        outcome = rank_snippets("q", _snippet_set(["a", "b"]), gateway)
        assert outcome.order == (2, 1)
        assert len(gateway.prompts) == 2
        assert "PREVIOUS REPLY <" in gateway.prompts[1]

    def test_twice_unparseable_falls_back_to_input_order(self):
        we = build_worked_example()
        gateway, backend = oracle_gateway(
            we.plan, FaultSpec(mangle_stage2="garbage-always")
        )
        snippets = _snippet_set([we.spans["A"], we.spans["B"], we.spans["C"], None])
        outcome = rank_snippets(we.query, snippets, gateway)
        assert outcome.order == (1, 2, 3, 4)
        assert FLAG_RANKING_UNPARSEABLE in outcome.repairs
        assert backend.requests == 2
