"""Command-line entry point.

Exit codes: 0 success, 2 validation error (bad config, bad input, refused
overwrite), 3 backend failure (run finished but some instances degraded),
4 partial output (the run aborted mid-write; a .partial marker remains).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .analytics import (
    kappa_by_judge,
    refinement_stats,
    render_stats_table,
    sample_validation_set,
    stats_rows,
)
from .config import (
    AppConfig,
    ConfigError,
    load_config,
    override_backend,
    override_mock_faults,
    override_refinement,
)
from .corpus import (
    IngestError,
    OutputWriter,
    partial_marker_path,
    read_instances,
    read_jsonl,
    write_jsonl,
)
from .gateway import Gateway, GatewayError, HttpBackend
from .model import ModelError
from .pipeline import (
    DumpWriters,
    run_apply_rules,
    run_refine,
    run_stage1_only,
    run_stage2_only,
)
from .synth import OracleBackend, SynthSpec, generate_synthetic_corpus, load_plan

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_PARTIAL = 4

logger = logging.getLogger(__name__)


def _fail(message: str, code: int) -> SystemExit:
    click.echo(f"error: {message}", err=True)
    return SystemExit(code)


def build_gateway(config: AppConfig) -> Gateway:
    if config.backend_kind == "mock":
        if not config.mock.plan_path:
            raise ConfigError("mock backend requires backend.mock.plan_path")
        backend = OracleBackend(load_plan(config.mock.plan_path), config.mock.faults)
    else:
        backend = HttpBackend(config.backend)
    return Gateway(backend, config.backend)


def _check_resumable(paths: list, resume: bool) -> None:
    markers = [
        partial_marker_path(p) for p in paths if p and partial_marker_path(p).exists()
    ]
    if markers and not resume:
        raise ConfigError(
            f"partial output from an interrupted run exists ({markers[0]}); "
            "pass --resume to redo the run (cached responses replay for free) "
            "or delete the marker"
        )


def _print_summary(outcome, gateway: Gateway | None = None) -> None:
    click.echo(f"instances: {outcome.instances}")
    for key in ("promoted", "filtered", "retained", "skipped_unrefined"):
        if key in outcome.summary:
            click.echo(f"{key}: {outcome.summary[key]}")
    flag_counts = outcome.summary.get("flag_counts") or {}
    for flag, count in flag_counts.items():
        click.echo(f"flag {flag}: {count}")
    if outcome.backend_failures:
        click.echo(f"backend failures: {outcome.backend_failures}")
    if gateway is not None:
        stats = gateway.stats
        click.echo(
            f"backend requests: {stats.requests} "
            f"(cache hits: {stats.cache_hits}, retries: {stats.retries})"
        )


_CONFIG = click.option(
    "--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="YAML config file (sections: backend, refinement, io, review).",
)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug.")
def main(verbose: int) -> None:
    """Two-stage refinement of hard-negative retrieval training data."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load(config_path, **refinement_overrides) -> AppConfig:
    config = load_config(config_path)
    return override_refinement(config, **refinement_overrides)


def _refinement_options(fn):
    fn = click.option("--mode", type=str, default=None,
                      help="filter, relabel, or r+f (overrides config).")(fn)
    fn = click.option("--prhn", is_flag=True, default=False,
                      help="Rank full passages instead of extracted snippets.")(fn)
    fn = click.option("--filter-above-anchor", is_flag=True, default=None,
                      help="In filter mode, also drop answer-bearing negatives "
                           "ranked above the anchor.")(fn)
    fn = click.option("--max-seq-len", type=int, default=None,
                      help="Truncation limit per document (overrides config).")(fn)
    fn = click.option("--workers", type=int, default=None,
                      help="Worker threads (overrides config).")(fn)
    return fn


def _mock_fault_options(fn):
    fn = click.option("--crash-after", type=int, default=None,
                      help="Mock backend: abort the run after N responses.")(fn)
    fn = click.option("--fail-first", type=int, default=None,
                      help="Mock backend: fail the first N requests (retryable).")(fn)
    return fn


@main.command("refine")
@_CONFIG
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--provenance", "provenance_path", type=click.Path(dir_okay=False), default=None)
@click.option("--stage1-dump", type=click.Path(dir_okay=False), default=None)
@click.option("--stage2-dump", type=click.Path(dir_okay=False), default=None)
@click.option("--resume", is_flag=True, default=False,
              help="Proceed over a .partial marker; cached responses replay.")
@click.option("--dataset-tag", type=str, default=None)
@_refinement_options
@_mock_fault_options
def cmd_refine(
    config_path, in_path, out_path, provenance_path, stage1_dump, stage2_dump,
    resume, dataset_tag, mode, prhn, filter_above_anchor, max_seq_len, workers,
    crash_after, fail_first,
) -> None:
    """Run the full pipeline: extract, rank, decide, and write refined labels."""
    gateway = None
    try:
        config = _load(
            config_path, mode=mode, granularity="passage" if prhn else None,
            filter_above_anchor=filter_above_anchor, max_seq_len=max_seq_len,
            max_workers=workers,
        )
        config = override_mock_faults(
            config, crash_after=crash_after, fail_first_requests=fail_first
        )
        _check_resumable([out_path, provenance_path, stage1_dump, stage2_dump], resume)
        gateway = build_gateway(config)
        tag = dataset_tag if dataset_tag is not None else config.io.dataset_tag
        instances = read_instances(
            in_path, config.io.schema, dataset_tag=tag, on_error=config.io.on_error
        )
        with OutputWriter(
            out_path, provenance_path, config.io.schema,
            judge_tag=config.backend.model_name,
        ) as writer, DumpWriters(stage1_dump, stage2_dump) as dumps:
            outcome = run_refine(instances, gateway, config.refinement, writer, dumps)
    except (ConfigError, IngestError, ModelError, ValueError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)
    except GatewayError as exc:
        raise _fail(f"aborted: {exc} (partial output marked)", EXIT_PARTIAL)
    _print_summary(outcome, gateway)
    if outcome.backend_failures:
        raise SystemExit(EXIT_BACKEND)


@main.command("stage1")
@_CONFIG
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dump", "dump_path", required=True, type=click.Path(dir_okay=False))
@click.option("--resume", is_flag=True, default=False)
@click.option("--dataset-tag", type=str, default=None)
@click.option("--max-seq-len", type=int, default=None)
@click.option("--workers", type=int, default=None)
@_mock_fault_options
def cmd_stage1(
    config_path, in_path, dump_path, resume, dataset_tag, max_seq_len, workers,
    crash_after, fail_first,
) -> None:
    """Extract answer snippets for a whole corpus into a dump file."""
    gateway = None
    try:
        config = _load(config_path, max_seq_len=max_seq_len, max_workers=workers)
        config = override_mock_faults(
            config, crash_after=crash_after, fail_first_requests=fail_first
        )
        _check_resumable([dump_path], resume)
        gateway = build_gateway(config)
        tag = dataset_tag if dataset_tag is not None else config.io.dataset_tag
        instances = read_instances(
            in_path, config.io.schema, dataset_tag=tag, on_error=config.io.on_error
        )
        with DumpWriters(stage1_path=dump_path) as dumps:
            outcome = run_stage1_only(instances, gateway, config.refinement, dumps)
    except (ConfigError, IngestError, ModelError, ValueError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)
    except GatewayError as exc:
        raise _fail(f"aborted: {exc} (partial output marked)", EXIT_PARTIAL)
    click.echo(f"instances: {outcome.instances}")
    if gateway is not None:
        click.echo(
            f"backend requests: {gateway.stats.requests} "
            f"(cache hits: {gateway.stats.cache_hits})"
        )
    if outcome.backend_failures:
        click.echo(f"backend failures: {outcome.backend_failures}")
        raise SystemExit(EXIT_BACKEND)


@main.command("stage2")
@_CONFIG
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--stage1-dump", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dump", "dump_path", required=True, type=click.Path(dir_okay=False))
@click.option("--prhn", is_flag=True, default=False)
@click.option("--resume", is_flag=True, default=False)
@click.option("--max-seq-len", type=int, default=None)
@click.option("--workers", type=int, default=None)
@_mock_fault_options
def cmd_stage2(
    config_path, in_path, stage1_dump, dump_path, prhn, resume, max_seq_len,
    workers, crash_after, fail_first,
) -> None:
    """Rank dumped snippets per instance into a stage-2 dump file."""
    gateway = None
    try:
        config = _load(
            config_path, granularity="passage" if prhn else None,
            max_seq_len=max_seq_len, max_workers=workers,
        )
        config = override_mock_faults(
            config, crash_after=crash_after, fail_first_requests=fail_first
        )
        _check_resumable([dump_path], resume)
        gateway = build_gateway(config)
        instances = read_instances(
            in_path, config.io.schema, on_error=config.io.on_error
        )
        with DumpWriters(stage2_path=dump_path) as dumps:
            outcome = run_stage2_only(
                instances, stage1_dump, gateway, config.refinement, dumps
            )
    except (ConfigError, IngestError, ModelError, ValueError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)
    except GatewayError as exc:
        raise _fail(f"aborted: {exc} (partial output marked)", EXIT_PARTIAL)
    click.echo(f"instances: {outcome.instances}")
    if gateway is not None:
        click.echo(
            f"backend requests: {gateway.stats.requests} "
            f"(cache hits: {gateway.stats.cache_hits})"
        )
    if outcome.backend_failures:
        click.echo(f"backend failures: {outcome.backend_failures}")
        raise SystemExit(EXIT_BACKEND)


@main.command("apply-rules")
@_CONFIG
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--stage1-dump", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--stage2-dump", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--provenance", "provenance_path", type=click.Path(dir_okay=False), default=None)
@click.option("--dataset-tag", type=str, default=None)
@click.option("--judge-tag", type=str, default=None,
              help="Judge label recorded in provenance (defaults to the "
                   "configured model name).")
@click.option("--mode", type=str, default=None)
@click.option("--filter-above-anchor", is_flag=True, default=None)
@click.option("--max-seq-len", type=int, default=None)
def cmd_apply_rules(
    config_path, in_path, stage1_dump, stage2_dump, out_path, provenance_path,
    dataset_tag, judge_tag, mode, filter_above_anchor, max_seq_len,
) -> None:
    """Reconstruct labels offline from stage dumps; no model calls."""
    try:
        config = _load(
            config_path, mode=mode, filter_above_anchor=filter_above_anchor,
            max_seq_len=max_seq_len,
        )
        tag = dataset_tag if dataset_tag is not None else config.io.dataset_tag
        judge = judge_tag if judge_tag is not None else config.backend.model_name
        instances = read_instances(
            in_path, config.io.schema, dataset_tag=tag, on_error=config.io.on_error
        )
        with OutputWriter(
            out_path, provenance_path, config.io.schema, judge_tag=judge
        ) as writer:
            outcome = run_apply_rules(
                instances, stage1_dump, stage2_dump, config.refinement, writer
            )
    except (ConfigError, IngestError, ModelError, ValueError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)
    _print_summary(outcome)


@main.command("stats")
@click.option("--provenance", "provenance_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Also write machine-readable rows (JSONL).")
def cmd_stats(provenance_path, out_path) -> None:
    """Per-dataset refinement statistics from a provenance file."""
    try:
        scopes = refinement_stats(read_jsonl(provenance_path))
        if not any(s.n_queries for s in scopes.values()):
            raise ValueError("provenance file contains no instance rows")
        click.echo(render_stats_table(scopes))
        if out_path:
            write_jsonl(out_path, stats_rows(scopes))
    except (IngestError, ValueError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)


@main.command("kappa")
@click.option("--export", "export_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Review-session export: JSONL rows or the server's JSON object.")
@click.option("--provenance", "provenance_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Re-join hidden labels and judge tags from provenance.")
def cmd_kappa(export_path, provenance_path) -> None:
    """Agreement (Cohen's kappa) between adjudicated human and hidden labels."""
    try:
        rows = _read_export(export_path)
        report = kappa_by_judge(rows, provenance_path)
        for judge, entry in report.items():
            click.echo(f"{judge}: kappa={entry['kappa']:.3f} (n={entry['n_items']})")
    except (IngestError, ValueError, KeyError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)


def _read_export(path: str) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        return list(read_jsonl(path))
    if isinstance(obj, dict) and isinstance(obj.get("items"), list):
        return obj["items"]
    if isinstance(obj, list):
        return obj
    if isinstance(obj, dict):
        return [obj]
    raise ValueError("export file is neither JSONL rows nor an items object")


@main.command("sample")
@_CONFIG
@click.option("--provenance", "provenance_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--size", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_sample(config_path, provenance_path, corpus_path, size, seed, out_path) -> None:
    """Sample query-negative pairs for blinded human validation."""
    try:
        config = load_config(config_path)
        items = sample_validation_set(
            provenance_path, corpus_path, size, seed, schema=config.io.schema
        )
        write_jsonl(out_path, items)
        click.echo(f"wrote {len(items)} items to {out_path}")
    except (ConfigError, IngestError, ValueError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)


@main.command("synth")
@click.option("--queries", type=int, required=True)
@click.option("--negatives", type=int, required=True)
@click.option("--plant-rate", type=float, required=True)
@click.option("--above-fraction", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--corpus", "corpus_path", required=True, type=click.Path(dir_okay=False))
@click.option("--plan", "plan_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dataset-tag", type=str, default="synthetic", show_default=True)
def cmd_synth(
    queries, negatives, plant_rate, above_fraction, seed, corpus_path, plan_path,
    dataset_tag,
) -> None:
    """Generate a synthetic corpus whose correct refinement is known."""
    try:
        spec = SynthSpec(
            n_queries=queries, n_negatives=negatives, plant_rate=plant_rate,
            above_fraction=above_fraction, seed=seed, dataset_tag=dataset_tag,
        )
        generate_synthetic_corpus(spec, corpus_path, plan_path)
    except ValueError as exc:
        raise _fail(str(exc), EXIT_VALIDATION)
    click.echo(f"wrote {queries} queries to {corpus_path} (plan: {plan_path})")


@main.command("serve-review")
@_CONFIG
@click.option("--items", "items_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Annotation items (JSONL) to open a session from.")
@click.option("--journal", "journal_path", type=click.Path(dir_okay=False), default=None)
@click.option("--host", type=str, default=None)
@click.option("--port", type=int, default=None)
@click.option("--session-name", type=str, default="default")
def cmd_serve_review(config_path, items_path, journal_path, host, port, session_name) -> None:
    """Serve the blinded annotation API (and persist a crash-safe journal)."""
    import uvicorn

    from .review import SessionStore, create_app, item_from_dict

    try:
        config = load_config(config_path)
        journal = journal_path or config.review.journal
        store = SessionStore(journal)
        if items_path and not store.list_sessions():
            items = [item_from_dict(row) for row in read_jsonl(items_path)]
            session_id = store.create_session(items, name=session_name)
            click.echo(f"created session {session_id} with {len(items)} items")
        for session in store.list_sessions():
            click.echo(
                f"session {session['session_id']} ({session['name']}): "
                f"{session['n_items']} items, complete={session['complete']}"
            )
        app = create_app(store, config.review.cors_origins)
    except (ConfigError, IngestError, ValueError) as exc:
        raise _fail(str(exc), EXIT_VALIDATION)
    uvicorn.run(
        app,
        host=host or config.review.host,
        port=port if port is not None else config.review.port,
        log_level="warning",
    )


if __name__ == "__main__":
    main()
