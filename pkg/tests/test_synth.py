"""Synthetic corpus generation and the plan-driven mock backend."""

from __future__ import annotations

import json

import pytest

from hnrefine.corpus import read_instances, TripletSchema
from hnrefine.gateway import (
    BackendUnavailable,
    build_corrective_prompt,
    build_stage1_prompt,
    build_stage2_prompt,
)
from hnrefine.model import NO_ANSWER
from hnrefine.synth import (
    GOLD_FILTER,
    GOLD_PROMOTE,
    GOLD_RETAIN,
    CrashInjected,
    FaultSpec,
    OracleBackend,
    SynthSpec,
    generate_synthetic_corpus,
    load_plan,
)

from conftest import build_worked_example


def _generate(tmp_path, **kwargs):
    spec = SynthSpec(**kwargs)
    corpus = tmp_path / "corpus.jsonl"
    plan_path = tmp_path / "plan.json"
    plan = generate_synthetic_corpus(spec, corpus, plan_path)
    return spec, corpus, plan_path, plan


class TestGenerator:
    def test_same_seed_is_byte_identical(self, tmp_path):
        _, c1, p1, _ = _generate(
            tmp_path / "a", n_queries=15, n_negatives=6, plant_rate=0.5, seed=3
        )
        _, c2, p2, _ = _generate(
            tmp_path / "b", n_queries=15, n_negatives=6, plant_rate=0.5, seed=3
        )
        assert c1.read_bytes() == c2.read_bytes()
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seed_changes_filler_not_structure(self, tmp_path):
        _, c1, _, plan1 = _generate(
            tmp_path / "a", n_queries=5, n_negatives=4, plant_rate=0.5, seed=1
        )
        _, c2, _, plan2 = _generate(
            tmp_path / "b", n_queries=5, n_negatives=4, plant_rate=0.5, seed=2
        )
        assert c1.read_bytes() != c2.read_bytes()
        golds1 = [q["gold"] for q in plan1["queries"].values()]
        golds2 = [q["gold"] for q in plan2["queries"].values()]
        assert golds1 == golds2

    def test_planting_quotas_are_exact(self, tmp_path):
        _, _, _, plan = _generate(
            tmp_path,
            n_queries=10, n_negatives=10, plant_rate=0.3, above_fraction=0.5, seed=0,
        )
        per_query_planted = []
        total_promote = total_filter = total_retain = 0
        for qplan in plan["queries"].values():
            gold = qplan["gold"]
            per_query_planted.append(
                sum(1 for g in gold.values() if g != GOLD_RETAIN)
            )
            total_promote += sum(1 for g in gold.values() if g == GOLD_PROMOTE)
            total_filter += sum(1 for g in gold.values() if g == GOLD_FILTER)
            total_retain += sum(1 for g in gold.values() if g == GOLD_RETAIN)
        # Exactly round(10 * 0.3) = 3 plants per query, half promoted overall.
        assert per_query_planted == [3] * 10
        assert total_promote == 15
        assert total_filter == 15
        assert total_retain == 70

    def test_plant_rate_zero_plants_nothing(self, tmp_path):
        _, corpus, _, plan = _generate(
            tmp_path, n_queries=4, n_negatives=5, plant_rate=0.0
        )
        for qplan in plan["queries"].values():
            assert set(qplan["gold"].values()) == {GOLD_RETAIN}
            assert qplan["planted"] == {}
            assert list(qplan["span_scores"].values()) == [0.5]
        assert len(list(read_instances(corpus))) == 4

    def test_plant_rate_one_plants_everything(self, tmp_path):
        _, _, _, plan = _generate(
            tmp_path, n_queries=3, n_negatives=4, plant_rate=1.0, above_fraction=1.0
        )
        for qplan in plan["queries"].values():
            assert set(qplan["gold"].values()) == {GOLD_PROMOTE}

    def test_documents_carry_their_planted_spans(self, tmp_path):
        _, corpus, plan_path, plan = _generate(
            tmp_path, n_queries=3, n_negatives=4, plant_rate=0.5
        )
        assert load_plan(plan_path) == plan
        for inst in read_instances(corpus):
            qplan = plan["queries"][inst.query]
            assert inst.positives[0].doc_id == qplan["positive_id"]
            assert qplan["positive_span"] in inst.positives[0].text
            by_id = {d.doc_id: d for d in inst.negatives}
            for neg_id, span in qplan["planted"].items():
                assert span in by_id[neg_id].text
            for neg_id, gold in qplan["gold"].items():
                if gold == GOLD_RETAIN:
                    assert qplan["positive_span"] not in by_id[neg_id].text

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_queries=0, n_negatives=1, plant_rate=0.5),
            dict(n_queries=1, n_negatives=0, plant_rate=0.5),
            dict(n_queries=1, n_negatives=1, plant_rate=1.5),
            dict(n_queries=1, n_negatives=1, plant_rate=0.5, above_fraction=-0.1),
        ],
    )
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            SynthSpec(**kwargs)


class TestOracleBackend:
    def setup_method(self):
        self.we = build_worked_example()
        self.backend = OracleBackend(self.we.plan)

    def _stage1(self, doc_key):
        return build_stage1_prompt(self.we.query, self.we.texts[doc_key])

    def test_stage1_returns_planted_span(self):
        assert self.backend.complete(self._stage1("A")) == self.we.spans["A"]
        assert self.backend.complete(self._stage1("B")) == self.we.spans["B"]

    def test_stage1_no_answer_for_unplanted_document(self):
        assert self.backend.complete(self._stage1("D")) == NO_ANSWER

    def test_stage1_respects_shown_truncation(self):
        # A document cut before its span must come back NO_ANSWER.
        shown = self.we.texts["B"][:20]
        prompt = build_stage1_prompt(self.we.query, shown)
        assert self.backend.complete(prompt) == NO_ANSWER

    def test_stage2_orders_by_directness(self):
        entries = [
            (1, self.we.spans["A"]),
            (2, self.we.spans["B"]),
            (3, self.we.spans["C"]),
            (4, NO_ANSWER),
        ]
        prompt = build_stage2_prompt(self.we.query, entries)
        assert self.backend.complete(prompt) == "[2] > [1] > [3] > [4]"

    def test_stage2_passage_granularity_same_order(self):
        entries = [(i + 1, self.we.texts[k]) for i, k in enumerate("ABCD")]
        prompt = build_stage2_prompt(self.we.query, entries, "passage")
        assert self.backend.complete(prompt) == "[2] > [1] > [3] > [4]"

    def test_unknown_query_is_an_error(self):
        prompt = build_stage1_prompt("a query the plan never saw", "doc text")
        with pytest.raises(Exception, match="not in oracle plan"):
            self.backend.complete(prompt)

    def test_request_and_in_flight_counters(self):
        self.backend.complete(self._stage1("A"))
        self.backend.complete(self._stage1("D"))
        assert self.backend.requests == 2
        assert self.backend.max_in_flight >= 1


class TestFaultInjection:
    def setup_method(self):
        self.we = build_worked_example()

    def _backend(self, **faults):
        return OracleBackend(self.we.plan, FaultSpec(**faults))

    def _stage1(self, doc_key="B"):
        return build_stage1_prompt(self.we.query, self.we.texts[doc_key])

    def _stage2(self):
        entries = [
            (1, self.we.spans["A"]),
            (2, self.we.spans["B"]),
            (3, self.we.spans["C"]),
            (4, NO_ANSWER),
        ]
        return build_stage2_prompt(self.we.query, entries)

    def test_fail_first_requests_then_recover(self):
        backend = self._backend(fail_first_requests=2)
        for _ in range(2):
            with pytest.raises(BackendUnavailable):
                backend.complete(self._stage1())
        assert backend.complete(self._stage1()) == self.we.spans["B"]

    def test_crash_after_budget(self):
        backend = self._backend(crash_after=2)
        backend.complete(self._stage1("A"))
        backend.complete(self._stage1("B"))
        with pytest.raises(CrashInjected):
            backend.complete(self._stage1("C"))

    def test_paraphrase_mangle_breaks_verbatim_then_corrects(self):
        backend = self._backend(mangle_stage1="paraphrase")
        reply = backend.complete(self._stage1("B"))
        assert reply != self.we.spans["B"]
        assert reply not in self.we.texts["B"]
        corrective = build_corrective_prompt(self._stage1("B"), reply, "not verbatim.")
        assert backend.complete(corrective) == self.we.spans["B"]

    def test_duplicate_mangle(self):
        backend = self._backend(mangle_stage2="duplicate")
        assert backend.complete(self._stage2()) == "[2] > [2] > [1] > [3] > [4]"

    def test_missing_mangle(self):
        backend = self._backend(mangle_stage2="missing")
        assert backend.complete(self._stage2()) == "[2] > [1] > [3]"

    def test_reversed_garbage_mangle_still_has_tokens(self):
        backend = self._backend(mangle_stage2="reversed-garbage")
        reply = backend.complete(self._stage2())
        assert reply.startswith("Ranking: ")
        assert "[4]" in reply

    def test_garbage_always_defeats_the_corrective_retry(self):
        backend = self._backend(mangle_stage2="garbage-always")
        first = backend.complete(self._stage2())
        corrective = build_corrective_prompt(self._stage2(), first, "no ranking.")
        second = backend.complete(corrective)
        assert first == second == "I cannot rank these."

    def test_corrective_replies_are_clean_under_plain_mangles(self):
        backend = self._backend(mangle_stage2="duplicate")
        first = backend.complete(self._stage2())
        corrective = build_corrective_prompt(self._stage2(), first, "bad.")
        assert backend.complete(corrective) == "[2] > [1] > [3] > [4]"
