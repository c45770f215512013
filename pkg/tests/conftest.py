"""Shared fixtures: a scripted four-candidate instance, oracle-backed
gateways with zero backoff, and config/corpus writers for CLI runs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from hnrefine.gateway import BackendConfig, Gateway
from hnrefine.model import Document, TrainingInstance
from hnrefine.synth import FaultSpec, OracleBackend


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    # These env vars override config (auth token, cache dir); a value left
    # over from the host environment would silently redirect test runs.
    monkeypatch.delenv("HNREFINE_AUTH_TOKEN", raising=False)
    monkeypatch.delenv("HNREFINE_CACHE_DIR", raising=False)


def backend_config(**overrides) -> BackendConfig:
    base = dict(
        model_name="oracle-v1",
        max_parallel_requests=4,
        max_retries=2,
        backoff_s=(0.0,),
        cache_dir=None,
    )
    base.update(overrides)
    return BackendConfig(**base)


def make_gateway(backend, sleep=None, **overrides) -> Gateway:
    return Gateway(
        backend, backend_config(**overrides), sleep=sleep or (lambda s: None)
    )


def oracle_gateway(plan: dict, faults: FaultSpec | None = None, **overrides):
    backend = OracleBackend(plan, faults)
    return make_gateway(backend, **overrides), backend


class StubGateway:
    """Replays a scripted list of responses; records every prompt."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.prompts: list[str] = []

    def complete(self, prompt: str, *, instance_id: str = "") -> str:
        self.prompts.append(prompt)
        if not self.responses:
            raise AssertionError("stub gateway ran out of scripted responses")
        return self.responses.pop(0)


@dataclass(frozen=True)
class WorkedExample:
    """One query with anchor positive A and negatives B, C, D.

    The oracle plan ranks B above the anchor, C below it, and leaves D
    without any answer span, so the scripted stage-2 ordering is
    [2, 1, 3, 4] (B > A > C > D with A=1, B=2, C=3, D=4).
    """

    query: str
    spans: dict[str, str]
    texts: dict[str, str]
    instance: TrainingInstance
    plan: dict
    record: dict


WE_DOC_IDS = {"A": "doc-a", "B": "doc-b", "C": "doc-c", "D": "doc-d"}


def build_worked_example() -> WorkedExample:
    query = "which ledger entry certifies the block nine audit result?"
    spans = {
        "A": "The block nine audit result is certified in ledger entry 47.",
        "B": "Ledger entry 47 certifies the audit result for block nine.",
        "C": "An appendix of ledger entry 47 repeats the block nine audit result.",
    }
    texts = {
        "A": f"Opening filler sentence. {spans['A']} Trailing filler sentence.",
        "B": f"Context about the registry. {spans['B']} More registry notes.",
        "C": f"Archive preamble text. {spans['C']} Archive closing text.",
        "D": "These notes cover staffing rotas and say nothing about audits.",
    }
    instance = TrainingInstance(
        instance_id="we-1",
        query=query,
        positives=(Document.raw(WE_DOC_IDS["A"], texts["A"]),),
        negatives=tuple(
            Document.raw(WE_DOC_IDS[k], texts[k]) for k in ("B", "C", "D")
        ),
        source_dataset="worked",
    )
    plan = {
        "spec": {},
        "queries": {
            query: {
                "positive_id": WE_DOC_IDS["A"],
                "positive_span": spans["A"],
                "span_scores": {spans["B"]: 0.9, spans["A"]: 0.5, spans["C"]: 0.3},
                "planted": {WE_DOC_IDS["B"]: spans["B"], WE_DOC_IDS["C"]: spans["C"]},
                "gold": {
                    WE_DOC_IDS["B"]: "promote",
                    WE_DOC_IDS["C"]: "filter",
                    WE_DOC_IDS["D"]: "retain",
                },
            }
        },
    }
    record = {
        "id": "we-1",
        "query": query,
        "pos": [{"id": WE_DOC_IDS["A"], "text": texts["A"]}],
        "neg": [{"id": WE_DOC_IDS[k], "text": texts[k]} for k in ("B", "C", "D")],
    }
    return WorkedExample(
        query=query, spans=spans, texts=texts,
        instance=instance, plan=plan, record=record,
    )


@pytest.fixture()
def worked() -> WorkedExample:
    return build_worked_example()


def write_worked_example_files(tmp_path: Path) -> tuple[Path, Path]:
    """Corpus JSONL plus oracle plan for the worked example, on disk."""
    we = build_worked_example()
    corpus = tmp_path / "we-corpus.jsonl"
    corpus.write_text(
        json.dumps(we.record, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    plan = tmp_path / "we-plan.json"
    plan.write_text(json.dumps(we.plan, ensure_ascii=False), encoding="utf-8")
    return corpus, plan


def write_config(
    tmp_path: Path,
    plan_path: Path | str,
    *,
    name: str = "cfg.yaml",
    cache_dir: Path | str | None = None,
    mode: str = "r+f",
    workers: int = 2,
    max_retries: int = 2,
    id_field: str | None = "id",
    extra_backend: dict | None = None,
) -> Path:
    """A mock-backend YAML config for CLI runs."""
    backend: dict = {
        "kind": "mock",
        "model_name": "oracle-v1",
        "max_retries": max_retries,
        "backoff_s": [0.0],
        "mock": {"plan_path": str(plan_path)},
    }
    if cache_dir is not None:
        backend["cache_dir"] = str(cache_dir)
    backend.update(extra_backend or {})
    config = {
        "backend": backend,
        "refinement": {"mode": mode, "max_workers": workers},
        "io": {"schema": ({"id_field": id_field} if id_field else {})},
    }
    path = tmp_path / name
    import yaml

    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return path
