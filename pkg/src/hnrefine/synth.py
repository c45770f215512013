"""Synthetic corpus generation and the deterministic mock backend.

The generator writes a corpus whose correct refinement is known in advance
(the plan), and the mock backend answers prompts by parsing them back and
consulting that plan. Every response is a pure function of the prompt text,
so runs are bit-identical and response caching is exercised honestly.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .gateway import (
    BackendUnavailable,
    GatewayError,
    parse_stage1_prompt,
    parse_stage2_prompt,
    prompt_kind,
)
from .model import NO_ANSWER

GOLD_PROMOTE = "promote"
GOLD_FILTER = "filter"
GOLD_RETAIN = "retain"

_FILLER_WORDS = (
    "archive", "basin", "cedar", "delta", "ember", "fjord", "granite", "harbor",
    "isthmus", "juniper", "kelp", "lagoon", "meadow", "nickel", "orchard",
    "prairie", "quartz", "ridge", "summit", "tundra", "upland", "valley",
    "willow", "zenith",
)


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a generated corpus."""

    n_queries: int
    n_negatives: int
    plant_rate: float
    above_fraction: float = 0.5
    seed: int = 0
    dataset_tag: str = "synthetic"

    def __post_init__(self) -> None:
        if self.n_queries < 1 or self.n_negatives < 1:
            raise ValueError("n_queries and n_negatives must be >= 1")
        if not 0.0 <= self.plant_rate <= 1.0:
            raise ValueError(f"plant_rate must be in [0, 1], got {self.plant_rate}")
        if not 0.0 <= self.above_fraction <= 1.0:
            raise ValueError(f"above_fraction must be in [0, 1], got {self.above_fraction}")


def _filler(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(_FILLER_WORDS) for _ in range(n_words))


def _answer_sentence(topic: str, code: str) -> str:
    return f"The verified finding for {topic} is artifact {code}."


def generate_synthetic_corpus(
    spec: SynthSpec, corpus_path: str | Path, plan_path: str | Path
) -> dict:
    """Write a triplet corpus plus its plan; returns the plan dict.

    Planting is quota-exact rather than Bernoulli: each query gets exactly
    round(N * plant_rate) planted negatives, and the above-anchor share is
    apportioned by a running quota, so corpus-level means match the spec'd
    rates exactly instead of fluctuating with the seed.
    """
    rng = random.Random(spec.seed)
    plan: dict = {
        "spec": {
            "n_queries": spec.n_queries,
            "n_negatives": spec.n_negatives,
            "plant_rate": spec.plant_rate,
            "above_fraction": spec.above_fraction,
            "seed": spec.seed,
            "dataset_tag": spec.dataset_tag,
        },
        "queries": {},
    }
    n_planted = round(spec.n_negatives * spec.plant_rate)
    above_assigned = 0
    corpus_path = Path(corpus_path)
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    with open(corpus_path, "w", encoding="utf-8") as out:
        for i in range(spec.n_queries):
            topic = f"topic-{i:05d}"
            query = f"synthetic question {i:05d}: what is the verified finding for {topic}?"
            above_quota = round((i + 1) * n_planted * spec.above_fraction) - above_assigned
            above_assigned += above_quota

            span_scores: dict[str, float] = {}
            planted: dict[str, str] = {}
            gold: dict[str, str] = {}

            pos_id = f"q{i:05d}-pos"
            pos_span = _answer_sentence(topic, f"{i:05d}-pos")
            span_scores[pos_span] = 0.5
            pos_text = f"{_filler(rng, 12)}. {pos_span} {_filler(rng, 12)}."
            record = {
                "query": query,
                "pos": [{"id": pos_id, "text": pos_text}],
                "neg": [],
            }

            for j in range(spec.n_negatives):
                neg_id = f"q{i:05d}-neg{j:02d}"
                if j < above_quota:
                    score = (600 + j) / 1000
                    gold[neg_id] = GOLD_PROMOTE
                elif j < n_planted:
                    score = (400 - j) / 1000
                    gold[neg_id] = GOLD_FILTER
                else:
                    score = None
                    gold[neg_id] = GOLD_RETAIN
                if score is None:
                    text = f"{_filler(rng, 14)}. {_filler(rng, 13)}."
                else:
                    span = _answer_sentence(topic, f"{i:05d}-neg{j:02d}")
                    span_scores[span] = score
                    planted[neg_id] = span
                    text = f"{_filler(rng, 10)}. {span} {_filler(rng, 10)}."
                record["neg"].append({"id": neg_id, "text": text})

            plan["queries"][query] = {
                "positive_id": pos_id,
                "positive_span": pos_span,
                "span_scores": span_scores,
                "planted": planted,
                "gold": gold,
            }
            out.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")

    plan_path = Path(plan_path)
    plan_path.parent.mkdir(parents=True, exist_ok=True)
    plan_path.write_text(
        json.dumps(plan, ensure_ascii=False, separators=(",", ":")), encoding="utf-8"
    )
    return plan


def load_plan(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


class CrashInjected(GatewayError):
    """Simulated process death for resume testing; never retried."""


@dataclass
class FaultSpec:
    """Deterministic fault injection for the mock backend.

    fail_first_requests: raise a retryable failure for the first k requests.
    crash_after: raise CrashInjected once this many responses have been served.
    mangle_stage1: "paraphrase" returns a non-verbatim span on plain prompts.
    mangle_stage2: "duplicate" | "missing" | "reversed-garbage" mutilate plain
      ranking replies; "garbage-always" mutilates corrective replies too.
    Corrective prompts (unless garbage-always) get the correct answer, so the
    one-retry repair path is exercised end to end.
    """

    fail_first_requests: int = 0
    crash_after: int | None = None
    mangle_stage1: str = ""
    mangle_stage2: str = ""
    work_delay_s: float = 0.0


_CORRECTIVE_MARK = "\nPREVIOUS REPLY <"


class OracleBackend:
    """Answers prompts from a plan; a drop-in Backend for the Gateway.

    Stage 1: return the planted span if it survives in the shown (possibly
    truncated) document text, else NO_ANSWER. Stage 2:sort entries by the
    directness score of the span their text carries, descending; entries
    with no matching span rank last, ties broken by entry id.
    """

    def __init__(self, plan: dict, faults: FaultSpec | None = None):
        self.plan = plan
        self.faults = faults or FaultSpec()
        self._lock = threading.Lock()
        self._requests = 0
        self._responses = 0
        self._in_flight = 0
        self.max_in_flight = 0

    @property
    def requests(self) -> int:
        with self._lock:
            return self._requests

    def _query_plan(self, query: str) -> dict:
        try:
            return self.plan["queries"][query]
        except KeyError:
            raise GatewayError(f"query not in oracle plan: {query[:80]!r}") from None

    def _score_of(self, qplan: dict, text: str) -> float | None:
        if text == NO_ANSWER:
            return None
        for span, score in qplan["span_scores"].items():
            if span in text:
                return score
        return None

    def complete(self, prompt: str) -> str:
        with self._lock:
            self._requests += 1
            request_no = self._requests
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        try:
            if self.faults.work_delay_s:
                time.sleep(self.faults.work_delay_s)
            if request_no <= self.faults.fail_first_requests:
                raise BackendUnavailable(f"injected failure on request {request_no}")
            with self._lock:
                if self.faults.crash_after is not None and self._responses >= self.faults.crash_after:
                    raise CrashInjected(
                        f"injected crash after {self._responses} responses"
                    )
            response = self._respond(prompt)
            with self._lock:
                self._responses += 1
            return response
        finally:
            with self._lock:
                self._in_flight -= 1

    def _respond(self, prompt: str) -> str:
        corrective = _CORRECTIVE_MARK in prompt
        kind = prompt_kind(prompt)
        if kind == "stage1":
            query, document = parse_stage1_prompt(prompt)
            qplan = self._query_plan(query)
            answer = NO_ANSWER
            for span in qplan["span_scores"]:
                if span in document:
                    answer = span
                    break
            if answer != NO_ANSWER and self.faults.mangle_stage1 == "paraphrase" and not corrective:
                return "In short, " + answer.rstrip(".") + ", give or take."
            return answer
        query, entries, _granularity = parse_stage2_prompt(prompt)
        qplan = self._query_plan(query)
        scored = []
        for entry_id, text in entries:
            score = self._score_of(qplan, text)
            scored.append((-(score if score is not None else -1.0), entry_id))
        order = [entry_id for _, entry_id in sorted(scored)]
        return self._render_ranking(order, corrective)

    def _render_ranking(self, order: list[int], corrective: bool) -> str:
        mode = self.faults.mangle_stage2
        if mode == "garbage-always":
            return "I cannot rank these."
        if not corrective and mode:
            if mode == "duplicate" and len(order) >= 2:
                order = [order[0]] + order
            elif mode == "missing" and len(order) >= 2:
                order = order[:-1]
            elif mode == "reversed-garbage":
                return "Ranking: " + " < ".join(f"[{r}]" for r in reversed(order)) + " maybe?"
        return " > ".join(f"[{r}]" for r in order)
