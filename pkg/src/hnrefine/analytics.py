"""Aggregate reporting: refinement statistics, agreement, study sampling.

All aggregation is a single streaming pass over provenance rows; counts are
integer-exact and divisions happen last, so means are reproducible to the
bit across runs and shards.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import read_grouped, read_instances, TripletSchema
from .model import Action

OVERALL_SCOPE = "overall"


def cohen_kappa(labels_a: Sequence[bool], labels_b: Sequence[bool]) -> float:
    """Cohen's kappa for two binary label vectors.

    kappa = (p_o - p_e) / (1 - p_e), with chance agreement p_e from the two
    raters' marginal rates. Two identical constant vectors have p_e = 1 and
    perfect agreement; that degenerate case returns 1.0.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError(
            f"label vectors differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    if not labels_a:
        raise ValueError("label vectors must be non-empty")
    n = len(labels_a)
    a = [bool(x) for x in labels_a]
    b = [bool(x) for x in labels_b]
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    pa = sum(a) / n
    pb = sum(b) / n
    p_e = pa * pb + (1 - pa) * (1 - pb)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1 - p_e)


@dataclass
class ScopeStats:
    """Integer tallies for one dataset scope."""

    n_queries: int = 0
    promoted: int = 0
    filtered: int = 0
    retained: int = 0
    flag_counts: dict = field(default_factory=dict)

    def mean(self, total: int) -> float:
        return total / self.n_queries if self.n_queries else 0.0

    def as_row(self, scope: str) -> dict:
        return {
            "scope": scope,
            "relabeled_pos_mean": self.mean(self.promoted),
            "filtered_neg_mean": self.mean(self.filtered),
            "retained_mean": self.mean(self.retained),
            "n_queries": self.n_queries,
        }


def refinement_stats(rows: Iterable[dict]) -> dict[str, ScopeStats]:
    """Per-dataset and overall means per query from provenance rows.

    Every instance row counts in its scope's denominator, including
    instances that were passed through unrefined.
    """
    scopes: dict[str, ScopeStats] = {OVERALL_SCOPE: ScopeStats()}
    for row in rows:
        dataset = str(row.get("dataset") or "") or "unlabeled"
        targets = [scopes[OVERALL_SCOPE], scopes.setdefault(dataset, ScopeStats())]
        if row.get("type") == "instance":
            for stats in targets:
                stats.n_queries += 1
                for flag in row.get("flags", ()):
                    stats.flag_counts[flag] = stats.flag_counts.get(flag, 0) + 1
        elif row.get("type") == "decision":
            action = row.get("action")
            for stats in targets:
                if action == Action.PROMOTE.value:
                    stats.promoted += 1
                elif action == Action.FILTER.value:
                    stats.filtered += 1
                elif action == Action.RETAIN.value:
                    stats.retained += 1
                for flag in row.get("flags", ()):
                    stats.flag_counts[flag] = stats.flag_counts.get(flag, 0) + 1
    return scopes


def stats_rows(scopes: dict[str, ScopeStats]) -> list[dict]:
    """Machine-readable rows, overall last, datasets alphabetical."""
    names = sorted(name for name in scopes if name != OVERALL_SCOPE)
    return [scopes[name].as_row(name) for name in names] + [
        scopes[OVERALL_SCOPE].as_row(OVERALL_SCOPE)
    ]


def render_stats_table(scopes: dict[str, ScopeStats]) -> str:
    """Aligned text table: one row per scope, means to one decimal."""
    rows = stats_rows(scopes)
    headers = ("Scope", "Relabeled Pos.", "Filtered Neg.", "Retained", "Queries")
    cells = [
        (
            row["scope"],
            f"{row['relabeled_pos_mean']:.1f}",
            f"{row['filtered_neg_mean']:.1f}",
            f"{row['retained_mean']:.1f}",
            str(row["n_queries"]),
        )
        for row in rows
    ]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row_cells in cells:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row_cells)))
    return "\n".join(lines)


def pair_id(instance_id: str, doc_id: str) -> str:
    return f"{instance_id}::{doc_id}"


def split_pair_id(pid: str) -> tuple[str, str]:
    instance_id, sep, doc_id = pid.partition("::")
    if not sep:
        raise ValueError(f"malformed pair id {pid!r}")
    return instance_id, doc_id


def sample_validation_set(
    provenance_path: str | Path,
    corpus_path: str | Path,
    size: int,
    seed: int,
    *,
    schema: TripletSchema | None = None,
) -> list[dict]:
    """Sample query/hard-negative pairs for blinded human validation.

    The pool is every decided pair from queries with at least one promotion;
    the hidden label marks promoted pairs as predicted false negatives.
    Sampling is a seeded uniform reservoir over the pool, then joined back
    to the corpus for query and passage text, emitted in corpus order.
    """
    if size < 0:
        raise ValueError("size must be >= 0")
    if size == 0:
        return []
    rng = random.Random(seed)
    reservoir: list[dict] = []
    pool_size = 0
    for _, rows in read_grouped(provenance_path):
        decisions = [r for r in rows if r.get("type") == "decision"]
        if not any(r.get("action") == Action.PROMOTE.value for r in decisions):
            continue
        judge = next(
            (str(r.get("judge") or "") for r in rows if r.get("type") == "instance"), ""
        )
        for row in decisions:
            pool_size += 1
            entry = {
                "pair_id": pair_id(str(row["instance_id"]), str(row["doc_id"])),
                "llm_label": row.get("action") == Action.PROMOTE.value,
                "judge_tag": judge,
            }
            if pool_size <= size:
                reservoir.append(entry)
            else:
                j = rng.randrange(pool_size)
                if j < size:
                    reservoir[j] = entry
    if pool_size < size:
        raise ValueError(
            f"need {size} qualifying pairs but only {pool_size} are available"
        )
    selected = {entry["pair_id"]: entry for entry in reservoir}
    wanted_instances: dict[str, list[str]] = {}
    for pid in selected:
        instance_id, doc_id = split_pair_id(pid)
        wanted_instances.setdefault(instance_id, []).append(doc_id)
    items: list[dict] = []
    for instance in read_instances(corpus_path, schema):
        doc_ids = wanted_instances.get(instance.instance_id)
        if not doc_ids:
            continue
        texts = {doc.doc_id: doc.text for doc in instance.negatives}
        for doc_id in sorted(doc_ids):
            entry = selected[pair_id(instance.instance_id, doc_id)]
            if doc_id not in texts:
                raise ValueError(
                    f"provenance references unknown negative {doc_id} "
                    f"in instance {instance.instance_id}"
                )
            items.append({
                "pair_id": entry["pair_id"],
                "query": instance.query,
                "negative_text": texts[doc_id],
                "llm_label": entry["llm_label"],
                "judge_tag": entry["judge_tag"],
            })
    if len(items) != size:
        missing = set(selected) - {item["pair_id"] for item in items}
        raise ValueError(f"corpus is missing sampled instances: {sorted(missing)[:5]}")
    return items


def kappa_by_judge(
    export_rows: Iterable[dict],
    provenance_path: str | Path | None = None,
) -> dict[str, dict]:
    """Agreement between adjudicated human labels and the hidden labels.

    Export rows carry both labels; when a provenance file is given, hidden
    labels and judge tags are re-joined from it instead (and a mismatch with
    the export is an error).
    """
    overrides: dict[str, tuple[bool, str]] = {}
    if provenance_path is not None:
        for _instance_id, rows in read_grouped(provenance_path):
            judge = next(
                (str(r.get("judge") or "") for r in rows if r.get("type") == "instance"),
                "",
            )
            for r in rows:
                if r.get("type") == "decision":
                    pid = pair_id(str(r["instance_id"]), str(r["doc_id"]))
                    overrides[pid] = (r.get("action") == Action.PROMOTE.value, judge)
    grouped: dict[str, tuple[list[bool], list[bool]]] = {}
    for row in export_rows:
        pid = str(row["pair_id"])
        human = row.get("final_label")
        if human is None:
            raise ValueError(f"item {pid} has no final label; session incomplete")
        if provenance_path is not None:
            if pid not in overrides:
                raise ValueError(f"item {pid} not found in provenance")
            llm, judge = overrides[pid]
            if "llm_label" in row and bool(row["llm_label"]) != llm:
                raise ValueError(f"item {pid}: export and provenance labels disagree")
        else:
            llm = bool(row["llm_label"])
            judge = str(row.get("judge_tag") or "")
        judge = judge or "unlabeled"
        humans, llms = grouped.setdefault(judge, ([], []))
        humans.append(bool(human))
        llms.append(llm)
    report: dict[str, dict] = {}
    all_humans: list[bool] = []
    all_llms: list[bool] = []
    for judge in sorted(grouped):
        humans, llms = grouped[judge]
        report[judge] = {"kappa": cohen_kappa(humans, llms), "n_items": len(humans)}
        all_humans.extend(humans)
        all_llms.extend(llms)
    if len(grouped) > 1:
        report[OVERALL_SCOPE] = {
            "kappa": cohen_kappa(all_humans, all_llms),
            "n_items": len(all_humans),
        }
    return report
