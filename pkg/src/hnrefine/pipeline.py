"""Run orchestration: extraction, ranking, and rules over a corpus stream.

Instances are processed by a worker pool but emitted strictly in input
order, so outputs are deterministic regardless of completion order and the
in-flight window keeps memory bounded. The monolithic run and the
stage-wise commands share these functions, which is what makes their
outputs byte-identical.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, TypeVar

from .corpus import (
    OutputWriter,
    partial_marker_path,
    read_grouped,
    truncate_instance,
)
from .gateway import Gateway, GatewayError
from .model import (
    NO_ANSWER,
    AnswerSpan,
    Mode,
    ModelError,
    RankingOutcome,
    Snippet,
    SnippetSet,
    TrainingInstance,
    candidate_set,
    instance_flags,
    make_refined_passthrough,
    RefinedInstance,
)
from .ranking import FLAG_RANKING_UNPARSEABLE, rank_snippets
from .rules import apply_decisions, decide, skip_decisions
from .snippets import FLAG_POSITIVE_NO_ANSWER, run_stage1
from .synth import CrashInjected

logger = logging.getLogger(__name__)

FLAG_STAGE1_INCOMPLETE = "stage1-incomplete"
FLAG_STAGE2_INCOMPLETE = "stage2-incomplete"

T = TypeVar("T")
R = TypeVar("R")


def ordered_parallel_map(
    fn: Callable[[T], R], items: Iterable[T], max_workers: int
) -> Iterator[R]:
    """Map with a thread pool, yielding results in input order.

    At most ``2 * max_workers`` items are in flight, so an arbitrarily long
    input stream is processed in bounded memory. A worker exception
    propagates at its item's position; later submissions are cancelled.
    """
    if max_workers <= 1:
        for item in items:
            yield fn(item)
        return
    window = max_workers * 2
    pending: deque = deque()
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        try:
            for item in items:
                pending.append(pool.submit(fn, item))
                if len(pending) >= window:
                    yield pending.popleft().result()
            while pending:
                yield pending.popleft().result()
        finally:
            for fut in pending:
                fut.cancel()


@dataclass
class InstanceResult:
    """Everything one instance produced, for writing and dumping."""

    instance: TrainingInstance
    refined: RefinedInstance
    snippets: SnippetSet | None = None
    ranking: RankingOutcome | None = None
    backend_failed: bool = False


@dataclass(frozen=True)
class RefineSettings:
    mode: Mode = Mode.RELABEL_AND_FILTER
    granularity: str = "snippet"
    filter_above_anchor: bool = False
    max_seq_len: int = 512
    truncation_unit: str = "words"
    max_workers: int = 8


def refine_instance(
    instance: TrainingInstance, gateway: Gateway, settings: RefineSettings
) -> InstanceResult:
    """Truncate, extract, rank, and decide for one instance.

    Backend failures degrade the instance to an unrefined pass-through with
    a stage flag instead of aborting the run; injected crashes propagate
    (they emulate the process dying).
    """
    instance = truncate_instance(instance, settings.max_seq_len, settings.truncation_unit)
    flags = list(instance_flags(instance))
    try:
        snippets, stage1_flags = run_stage1(instance, gateway)
    except CrashInjected:
        raise
    except GatewayError as exc:
        logger.warning("instance %s: stage 1 failed: %s", instance.instance_id, exc)
        return InstanceResult(
            instance,
            make_refined_passthrough(
                instance, settings.mode, (*flags, FLAG_STAGE1_INCOMPLETE),
                skip_decisions(instance),
            ),
            backend_failed=True,
        )
    flags.extend(stage1_flags)
    if FLAG_POSITIVE_NO_ANSWER in stage1_flags:
        return InstanceResult(
            instance,
            make_refined_passthrough(
                instance, settings.mode, flags, skip_decisions(instance)
            ),
            snippets=snippets,
        )
    passages = None
    if settings.granularity != "snippet":
        passages = {
            sid: doc.truncated_text
            for sid, doc in enumerate(candidate_set(instance), start=1)
        }
    try:
        ranking = rank_snippets(
            instance.query, snippets, gateway,
            granularity=settings.granularity, passages=passages,
            instance_id=instance.instance_id,
        )
    except CrashInjected:
        raise
    except GatewayError as exc:
        logger.warning("instance %s: stage 2 failed: %s", instance.instance_id, exc)
        return InstanceResult(
            instance,
            make_refined_passthrough(
                instance, settings.mode, (*flags, FLAG_STAGE2_INCOMPLETE),
                skip_decisions(instance),
            ),
            snippets=snippets,
            backend_failed=True,
        )
    return InstanceResult(
        instance,
        _apply(instance, snippets, ranking, settings, flags),
        snippets=snippets,
        ranking=ranking,
    )


def _apply(
    instance: TrainingInstance,
    snippets: SnippetSet,
    ranking: RankingOutcome,
    settings: RefineSettings,
    flags: list[str],
) -> RefinedInstance:
    if FLAG_RANKING_UNPARSEABLE in ranking.repairs:
        return make_refined_passthrough(
            instance, settings.mode, (*flags, FLAG_RANKING_UNPARSEABLE),
            skip_decisions(instance),
        )
    decisions = decide(
        snippets, ranking, settings.mode,
        filter_above_anchor=settings.filter_above_anchor,
    )
    return apply_decisions(instance, decisions, settings.mode, flags)


def stage1_rows(instance_id: str, snippets: SnippetSet) -> Iterator[dict]:
    for snippet_id, snippet in snippets.entries:
        yield {
            "instance_id": instance_id,
            "snippet_id": snippet_id,
            "doc_id": snippet.doc_id,
            "snippet": NO_ANSWER if snippet.span is None else snippet.span.text,
            "offsets": None if snippet.span is None
            else [snippet.span.char_start, snippet.span.char_end],
            "attempts": snippet.attempts,
            "flags": list(snippet.flags),
        }


def stage1_error_row(instance_id: str) -> dict:
    return {"instance_id": instance_id, "error": FLAG_STAGE1_INCOMPLETE}


def snippets_from_rows(
    instance: TrainingInstance, rows: list[dict]
) -> tuple[SnippetSet, tuple[str, ...]] | None:
    """Rebuild a stage-1 result from dump rows; None marks an incomplete one.

    Produces exactly what running stage 1 would have, including the derived
    instance-level flags, so offline replay matches the live path.
    """
    if any("error" in row for row in rows):
        return None
    candidates = candidate_set(instance)
    entries: list[tuple[int, Snippet]] = []
    flags: list[str] = []
    for row in sorted(rows, key=lambda r: int(r["snippet_id"])):
        snippet_id = int(row["snippet_id"])
        if not 1 <= snippet_id <= len(candidates):
            raise ModelError(
                f"instance {instance.instance_id}: dump snippet id {snippet_id} "
                f"outside candidate range 1..{len(candidates)}"
            )
        doc = candidates[snippet_id - 1]
        if str(row["doc_id"]) != doc.doc_id:
            raise ModelError(
                f"instance {instance.instance_id}: dump row {snippet_id} names "
                f"document {row['doc_id']!r} but the corpus has {doc.doc_id!r}"
            )
        offsets = row.get("offsets")
        if offsets is None:
            span = None
        else:
            span = AnswerSpan(str(row["snippet"]), int(offsets[0]), int(offsets[1]))
            if doc.truncated_text[span.char_start:span.char_end] != span.text:
                raise ModelError(
                    f"instance {instance.instance_id}: dumped span offsets do not "
                    f"match document {doc.doc_id!r}; was the dump produced with "
                    "different truncation settings or a different corpus?"
                )
        snippet = Snippet(
            doc.doc_id, span,
            attempts=int(row.get("attempts", 1)),
            flags=tuple(row.get("flags", ())),
        )
        entries.append((snippet_id, snippet))
        for flag in snippet.flags:
            flags.append(f"{flag}:{snippet.doc_id}")
    snippet_set = SnippetSet(query=instance.query, entries=tuple(entries))
    if snippet_set.anchor.is_no_answer:
        flags.append(FLAG_POSITIVE_NO_ANSWER)
    return snippet_set, tuple(flags)


def stage2_row(instance_id: str, ranking: RankingOutcome) -> dict:
    return {
        "instance_id": instance_id,
        "order": list(ranking.order),
        "repairs": list(ranking.repairs),
        "raw_response": ranking.raw_response,
    }


def stage2_error_row(instance_id: str) -> dict:
    return {"instance_id": instance_id, "error": FLAG_STAGE2_INCOMPLETE}


def ranking_from_rows(rows: list[dict]) -> RankingOutcome | None:
    if any("error" in row for row in rows):
        return None
    if len(rows) != 1:
        raise ModelError(f"expected one ranking row per instance, got {len(rows)}")
    row = rows[0]
    return RankingOutcome(
        order=tuple(int(x) for x in row["order"]),
        repairs=tuple(str(x) for x in row.get("repairs", ())),
        raw_response=str(row.get("raw_response", "")),
    )


class GroupCursor:
    """Lockstep reader of a dump file joined against corpus order."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._groups = read_grouped(path)
        self._head: tuple[str, list[dict]] | None = None
        self._done = False

    def take(self, instance_id: str) -> list[dict] | None:
        if self._head is None and not self._done:
            self._head = next(self._groups, None)
            if self._head is None:
                self._done = True
        if self._head is not None and self._head[0] == instance_id:
            rows = self._head[1]
            self._head = None
            return rows
        return None

    def finish(self) -> None:
        if self._head is None and not self._done:
            self._head = next(self._groups, None)
        if self._head is not None:
            raise ModelError(
                f"{self.path} has rows for instance {self._head[0]!r} "
                "that do not match the corpus order"
            )


class DumpWriters:
    """Optional stage dump sinks; a run records every result through these."""

    def __init__(
        self,
        stage1_path: str | Path | None = None,
        stage2_path: str | Path | None = None,
    ):
        self.stage1_path = stage1_path
        self.stage2_path = stage2_path
        self._stage1 = None
        self._stage2 = None

    def __enter__(self) -> "DumpWriters":
        if self.stage1_path:
            Path(self.stage1_path).parent.mkdir(parents=True, exist_ok=True)
            partial_marker_path(self.stage1_path).write_text("in-progress\n", encoding="utf-8")
            self._stage1 = open(self.stage1_path, "w", encoding="utf-8")
        if self.stage2_path:
            Path(self.stage2_path).parent.mkdir(parents=True, exist_ok=True)
            partial_marker_path(self.stage2_path).write_text("in-progress\n", encoding="utf-8")
            self._stage2 = open(self.stage2_path, "w", encoding="utf-8")
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        for fh in (self._stage1, self._stage2):
            if fh is not None:
                fh.close()
        if exc_type is None:
            for path in (self.stage1_path, self.stage2_path):
                if path:
                    partial_marker_path(path).unlink(missing_ok=True)

    @staticmethod
    def _dump(row: dict) -> str:
        return json.dumps(row, ensure_ascii=False, separators=(",", ":"))

    def record(self, result: InstanceResult) -> None:
        instance_id = result.instance.instance_id
        if self._stage1 is not None:
            if result.snippets is None:
                self._stage1.write(self._dump(stage1_error_row(instance_id)) + "\n")
            else:
                for row in stage1_rows(instance_id, result.snippets):
                    self._stage1.write(self._dump(row) + "\n")
        if self._stage2 is not None and result.snippets is not None:
            if result.ranking is not None:
                self._stage2.write(self._dump(stage2_row(instance_id, result.ranking)) + "\n")
            elif FLAG_STAGE2_INCOMPLETE in result.refined.flags:
                self._stage2.write(self._dump(stage2_error_row(instance_id)) + "\n")


@dataclass
class RunOutcome:
    instances: int = 0
    backend_failures: int = 0
    summary: dict = field(default_factory=dict)


def run_refine(
    instances: Iterable[TrainingInstance],
    gateway: Gateway,
    settings: RefineSettings,
    writer: OutputWriter,
    dumps: DumpWriters,
) -> RunOutcome:
    """The monolithic pipeline: stream instances through refine_instance."""
    outcome = RunOutcome()

    def worker(instance: TrainingInstance) -> InstanceResult:
        return refine_instance(instance, gateway, settings)

    for result in ordered_parallel_map(worker, instances, settings.max_workers):
        writer.write(result.instance, result.refined)
        dumps.record(result)
        outcome.instances += 1
        if result.backend_failed:
            outcome.backend_failures += 1
    outcome.summary = writer.summary.as_dict()
    return outcome


def replay_instance(
    instance: TrainingInstance,
    stage1_group: list[dict] | None,
    stage2_group: list[dict] | None,
    settings: RefineSettings,
) -> InstanceResult:
    """Offline rule application from dump rows; no backend involved."""
    instance = truncate_instance(instance, settings.max_seq_len, settings.truncation_unit)
    flags = list(instance_flags(instance))
    if stage1_group is None:
        raise ModelError(f"instance {instance.instance_id} missing from stage 1 dump")
    rebuilt = snippets_from_rows(instance, stage1_group)
    if rebuilt is None:
        return InstanceResult(
            instance,
            make_refined_passthrough(
                instance, settings.mode, (*flags, FLAG_STAGE1_INCOMPLETE),
                skip_decisions(instance),
            ),
            backend_failed=True,
        )
    snippets, stage1_flags = rebuilt
    flags.extend(stage1_flags)
    if FLAG_POSITIVE_NO_ANSWER in stage1_flags:
        return InstanceResult(
            instance,
            make_refined_passthrough(
                instance, settings.mode, flags, skip_decisions(instance)
            ),
            snippets=snippets,
        )
    if stage2_group is None:
        raise ModelError(f"instance {instance.instance_id} missing from stage 2 dump")
    ranking = ranking_from_rows(stage2_group)
    if ranking is None:
        return InstanceResult(
            instance,
            make_refined_passthrough(
                instance, settings.mode, (*flags, FLAG_STAGE2_INCOMPLETE),
                skip_decisions(instance),
            ),
            snippets=snippets,
            backend_failed=True,
        )
    return InstanceResult(
        instance,
        _apply(instance, snippets, ranking, settings, flags),
        snippets=snippets,
        ranking=ranking,
    )


def run_apply_rules(
    instances: Iterable[TrainingInstance],
    stage1_dump: str | Path,
    stage2_dump: str | Path,
    settings: RefineSettings,
    writer: OutputWriter,
) -> RunOutcome:
    """apply-rules: corpus + two dumps in, refined labels out, no backend."""
    outcome = RunOutcome()
    stage1_cursor = GroupCursor(stage1_dump)
    stage2_cursor = GroupCursor(stage2_dump)
    for instance in instances:
        result = replay_instance(
            instance,
            stage1_cursor.take(instance.instance_id),
            stage2_cursor.take(instance.instance_id),
            settings,
        )
        writer.write(result.instance, result.refined)
        outcome.instances += 1
        if result.backend_failed:
            outcome.backend_failures += 1
    stage1_cursor.finish()
    stage2_cursor.finish()
    outcome.summary = writer.summary.as_dict()
    return outcome


def run_stage1_only(
    instances: Iterable[TrainingInstance],
    gateway: Gateway,
    settings: RefineSettings,
    dumps: DumpWriters,
) -> RunOutcome:
    """stage1 command: extract snippets for the whole corpus into a dump."""
    outcome = RunOutcome()

    def worker(instance: TrainingInstance) -> InstanceResult:
        instance = truncate_instance(
            instance, settings.max_seq_len, settings.truncation_unit
        )
        try:
            snippets, _flags = run_stage1(instance, gateway)
        except CrashInjected:
            raise
        except GatewayError as exc:
            logger.warning("instance %s: stage 1 failed: %s", instance.instance_id, exc)
            return InstanceResult(
                instance,
                make_refined_passthrough(
                    instance, settings.mode, (FLAG_STAGE1_INCOMPLETE,),
                    skip_decisions(instance),
                ),
                backend_failed=True,
            )
        return InstanceResult(
            instance,
            make_refined_passthrough(instance, settings.mode, (), skip_decisions(instance)),
            snippets=snippets,
        )

    for result in ordered_parallel_map(worker, instances, settings.max_workers):
        dumps.record(result)
        outcome.instances += 1
        if result.backend_failed:
            outcome.backend_failures += 1
    return outcome


def run_stage2_only(
    instances: Iterable[TrainingInstance],
    stage1_dump: str | Path,
    gateway: Gateway,
    settings: RefineSettings,
    dumps: DumpWriters,
) -> RunOutcome:
    """stage2 command: rank each instance's dumped snippets into a dump."""
    outcome = RunOutcome()
    cursor = GroupCursor(stage1_dump)

    def worker(
        pair: tuple[TrainingInstance, list[dict] | None],
    ) -> InstanceResult | None:
        instance, group = pair
        instance = truncate_instance(
            instance, settings.max_seq_len, settings.truncation_unit
        )
        if group is None:
            raise ModelError(f"instance {instance.instance_id} missing from stage 1 dump")
        rebuilt = snippets_from_rows(instance, group)
        if rebuilt is None:
            return None
        snippets, stage1_flags = rebuilt
        if FLAG_POSITIVE_NO_ANSWER in stage1_flags:
            return InstanceResult(
                instance,
                make_refined_passthrough(
                    instance, settings.mode, stage1_flags, skip_decisions(instance)
                ),
                snippets=snippets,
            )
        passages = None
        if settings.granularity != "snippet":
            passages = {
                sid: doc.truncated_text
                for sid, doc in enumerate(candidate_set(instance), start=1)
            }
        try:
            ranking = rank_snippets(
                instance.query, snippets, gateway,
                granularity=settings.granularity, passages=passages,
                instance_id=instance.instance_id,
            )
        except CrashInjected:
            raise
        except GatewayError as exc:
            logger.warning("instance %s: stage 2 failed: %s", instance.instance_id, exc)
            return InstanceResult(
                instance,
                make_refined_passthrough(
                    instance, settings.mode, (FLAG_STAGE2_INCOMPLETE,),
                    skip_decisions(instance),
                ),
                snippets=snippets,
                backend_failed=True,
            )
        return InstanceResult(
            instance,
            make_refined_passthrough(instance, settings.mode, (), skip_decisions(instance)),
            snippets=snippets,
            ranking=ranking,
        )

    def paired() -> Iterator[tuple[TrainingInstance, list[dict] | None]]:
        for instance in instances:
            yield instance, cursor.take(instance.instance_id)

    for result in ordered_parallel_map(worker, paired(), settings.max_workers):
        outcome.instances += 1
        if result is None:
            continue
        if result.backend_failed:
            outcome.backend_failures += 1
        dumps.record(result)
    cursor.finish()
    return outcome
