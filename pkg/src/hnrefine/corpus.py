"""Reading and writing training-triplet corpora and their sidecar files.

Everything is line-delimited UTF-8 JSON. Field names for the triplet schema
are configurable so corpora with different key conventions can be ingested
without rewriting them. Readers are streaming: no file is ever loaded whole.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .model import (
    Action,
    Document,
    ModelError,
    RefinedInstance,
    Reason,
    TrainingInstance,
)
from .textkernels import word_prefix_end

logger = logging.getLogger(__name__)


class IngestError(ValueError):
    """A malformed corpus record, with its line number."""

    def __init__(self, reason: str, line_no: int, detail: str = ""):
        self.reason = reason
        self.line_no = line_no
        message = f"line {line_no}: {reason}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


@dataclass(frozen=True)
class TripletSchema:
    """Field-name mapping for triplet records."""

    query_field: str = "query"
    pos_field: str = "pos"
    neg_field: str = "neg"
    id_field: str | None = None
    doc_id_key: str = "id"
    doc_text_key: str = "text"

    @classmethod
    def from_dict(cls, raw: dict | None) -> "TripletSchema":
        raw = raw or {}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**raw)


def _parse_documents(
    raw: object,
    *,
    schema: TripletSchema,
    instance_id: str,
    role: str,
    line_no: int,
) -> list[Document]:
    if not isinstance(raw, list):
        raise IngestError(f"{role}-field-not-a-list", line_no)
    docs: list[Document] = []
    for k, entry in enumerate(raw):
        if isinstance(entry, str):
            text, doc_id, synthesized = entry, f"{instance_id}#{role}{k}", True
        elif isinstance(entry, dict):
            text = entry.get(schema.doc_text_key)
            doc_id = entry.get(schema.doc_id_key)
            synthesized = doc_id is None
            if doc_id is None:
                doc_id = f"{instance_id}#{role}{k}"
        else:
            raise IngestError(f"bad-{role}-entry", line_no, f"index {k}")
        if not isinstance(text, str) or not text:
            raise IngestError(f"empty-{role}-document", line_no, f"index {k}")
        docs.append(Document.raw(str(doc_id), text, id_synthesized=synthesized))
    return docs


def parse_instance(
    record: dict, *, schema: TripletSchema, line_no: int, dataset_tag: str = ""
) -> TrainingInstance:
    query = record.get(schema.query_field)
    if not isinstance(query, str) or not query.strip():
        raise IngestError("missing-query", line_no)
    if schema.id_field and schema.id_field in record:
        instance_id = str(record[schema.id_field])
    else:
        instance_id = str(line_no)
    positives = _parse_documents(
        record.get(schema.pos_field, []),
        schema=schema, instance_id=instance_id, role="pos", line_no=line_no,
    )
    if not positives:
        raise IngestError("missing-positive", line_no)
    negatives = _parse_documents(
        record.get(schema.neg_field, []),
        schema=schema, instance_id=instance_id, role="neg", line_no=line_no,
    )
    try:
        return TrainingInstance(
            instance_id=instance_id,
            query=query,
            positives=tuple(positives),
            negatives=tuple(negatives),
            source_dataset=dataset_tag or str(record.get("dataset", "")),
        )
    except ModelError as exc:
        raise IngestError("invalid-instance", line_no, str(exc)) from exc


def read_instances(
    path: str | Path,
    schema: TripletSchema | None = None,
    *,
    dataset_tag: str = "",
    on_error: str = "abort",
) -> Iterator[TrainingInstance]:
    """Stream instances from a JSONL triplet file in file order.

    ``on_error="skip"`` logs malformed records and keeps going; the default
    aborts on the first bad record (silent data loss is worse than failure
    in a data-cleaning tool).
    """
    schema = schema or TripletSchema()
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestError("invalid-json", line_no, exc.msg) from exc
                if not isinstance(record, dict):
                    raise IngestError("record-not-an-object", line_no)
                yield parse_instance(
                    record, schema=schema, line_no=line_no, dataset_tag=dataset_tag
                )
            except IngestError as exc:
                if on_error == "abort":
                    raise
                logger.warning("skipping record: %s", exc)


def truncate(doc: Document, max_seq_len: int, unit: str = "words") -> Document:
    """Truncate a document to at most ``max_seq_len`` units, never splitting one.

    The cut lands at the end of the last kept word (word mode); documents
    already within the limit come back unchanged with
    ``truncation_applied=False``. Idempotent for a fixed limit.
    """
    if max_seq_len < 1:
        raise ValueError(f"max_seq_len must be >= 1, got {max_seq_len}")
    if unit not in ("words", "characters"):
        raise ValueError(f"unit must be 'words' or 'characters', got {unit!r}")
    text = doc.text
    if unit == "characters":
        end = -1 if len(text) <= max_seq_len else max_seq_len
    else:
        end = word_prefix_end(text, max_seq_len)
    if end < 0:
        if not doc.truncation_applied and doc.truncated_text == text:
            return doc
        return Document(doc.doc_id, text, text, False, doc.id_synthesized)
    return Document(doc.doc_id, text, text[:end], True, doc.id_synthesized)


def truncate_instance(
    instance: TrainingInstance, max_seq_len: int, unit: str = "words"
) -> TrainingInstance:
    """Truncate every candidate document (positives and negatives) uniformly."""
    return TrainingInstance(
        instance_id=instance.instance_id,
        query=instance.query,
        positives=tuple(truncate(d, max_seq_len, unit) for d in instance.positives),
        negatives=tuple(truncate(d, max_seq_len, unit) for d in instance.negatives),
        source_dataset=instance.source_dataset,
    )


def _doc_to_json(doc: Document, schema: TripletSchema) -> object:
    if doc.id_synthesized:
        return doc.text
    return {schema.doc_id_key: doc.doc_id, schema.doc_text_key: doc.text}


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def refined_record(
    refined: RefinedInstance,
    query: str,
    schema: TripletSchema,
    *,
    record_id: str | None = None,
) -> dict:
    record: dict = {}
    if schema.id_field and record_id is not None:
        record[schema.id_field] = record_id
    record[schema.query_field] = query
    record[schema.pos_field] = [_doc_to_json(d, schema) for d in refined.new_positives]
    record[schema.neg_field] = [_doc_to_json(d, schema) for d in refined.new_negatives]
    return record


class PartialOutputError(RuntimeError):
    """Raised when a run left a partial-output marker behind."""


def partial_marker_path(out_path: str | Path) -> Path:
    return Path(str(out_path) + ".partial")


class OutputWriter:
    """Writes the refined triplet file plus the provenance sidecar.

    Creates a ``<out>.partial`` marker while writing; the marker survives any
    abort so interrupted runs are detectable (and is removed on success).
    """

    def __init__(
        self,
        out_path: str | Path,
        provenance_path: str | Path | None,
        schema: TripletSchema,
        *,
        judge_tag: str = "",
    ):
        self.out_path = Path(out_path)
        self.provenance_path = Path(provenance_path) if provenance_path else None
        self.schema = schema
        self.judge_tag = judge_tag
        self.summary = WriteSummary()
        self._out = None
        self._prov = None

    def __enter__(self) -> "OutputWriter":
        self.out_path.parent.mkdir(parents=True, exist_ok=True)
        partial_marker_path(self.out_path).write_text("in-progress\n", encoding="utf-8")
        self._out = open(self.out_path, "w", encoding="utf-8")
        if self.provenance_path:
            self.provenance_path.parent.mkdir(parents=True, exist_ok=True)
            self._prov = open(self.provenance_path, "w", encoding="utf-8")
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._out:
            self._out.close()
        if self._prov:
            self._prov.close()
        if exc_type is None:
            partial_marker_path(self.out_path).unlink(missing_ok=True)

    def write(self, instance: TrainingInstance, refined: RefinedInstance) -> None:
        assert self._out is not None, "writer not entered"
        record_id = None
        if self.schema.id_field:
            record_id = instance.instance_id
        line = _dump(refined_record(refined, instance.query, self.schema, record_id=record_id))
        self._out.write(line + "\n")
        self.summary.add(instance, refined)
        if self._prov:
            for row in provenance_rows(instance, refined, judge_tag=self.judge_tag):
                self._prov.write(_dump(row) + "\n")


@dataclass
class WriteSummary:
    """Exact counts reconciling inputs to outputs."""

    instances: int = 0
    promoted: int = 0
    filtered: int = 0
    retained: int = 0
    skipped_unrefined: int = 0
    flag_counts: dict = field(default_factory=dict)

    def add(self, instance: TrainingInstance, refined: RefinedInstance) -> None:
        self.instances += 1
        self.promoted += len(refined.decided(Action.PROMOTE))
        self.filtered += len(refined.decided(Action.FILTER))
        self.retained += len(refined.decided(Action.RETAIN))
        if any(d.reason is Reason.INSTANCE_SKIPPED for d in refined.decisions):
            self.skipped_unrefined += 1
        for flag in refined.flags:
            self.flag_counts[flag] = self.flag_counts.get(flag, 0) + 1
        for decision in refined.decisions:
            for flag in decision.flags:
                self.flag_counts[flag] = self.flag_counts.get(flag, 0) + 1

    @property
    def negatives(self) -> int:
        return self.promoted + self.filtered + self.retained

    def as_dict(self) -> dict:
        return {
            "instances": self.instances,
            "negatives": self.negatives,
            "promoted": self.promoted,
            "filtered": self.filtered,
            "retained": self.retained,
            "skipped_unrefined": self.skipped_unrefined,
            "flag_counts": dict(sorted(self.flag_counts.items())),
        }


def provenance_rows(
    instance: TrainingInstance, refined: RefinedInstance, *, judge_tag: str = ""
) -> Iterator[dict]:
    """One instance row, then one decision row per input negative."""
    yield {
        "type": "instance",
        "instance_id": instance.instance_id,
        "dataset": instance.source_dataset,
        "n_negatives": len(instance.negatives),
        "flags": list(refined.flags),
        "judge": judge_tag,
    }
    for decision in refined.decisions:
        yield {
            "type": "decision",
            "instance_id": instance.instance_id,
            "dataset": instance.source_dataset,
            "doc_id": decision.doc_id,
            "action": decision.action.value,
            "reason": decision.reason.value,
            "rank": decision.rank,
            "snippet": decision.snippet_text,
            "flags": list(decision.flags),
        }


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError("invalid-json", line_no, exc.msg) from exc


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(_dump(row) + "\n")
            count += 1
    return count


def read_grouped(path: str | Path, key: str = "instance_id") -> Iterator[tuple[str, list[dict]]]:
    """Group consecutive dump rows by ``key``, streaming, in file order.

    Dump files are written in corpus order, so joining a dump back to its
    corpus is a lockstep zip over this iterator; memory holds one group.
    """
    current_id: str | None = None
    group: list[dict] = []
    for row in read_jsonl(path):
        row_id = str(row.get(key))
        if row_id != current_id:
            if current_id is not None:
                yield current_id, group
            current_id, group = row_id, []
        group.append(row)
    if current_id is not None:
        yield current_id, group
