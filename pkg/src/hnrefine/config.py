"""Declarative run configuration.

One YAML file with four sections (backend, refinement, io, review) defines a
reproducible run; every knob is also a CLI flag, and the CLI wins wherever
both are given. Unknown keys are rejected so typos fail loudly instead of
silently running with defaults.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .corpus import TripletSchema
from .gateway import BackendConfig
from .model import Mode
from .pipeline import RefineSettings
from .synth import FaultSpec

ENV_AUTH_TOKEN = "HNREFINE_AUTH_TOKEN"
ENV_CACHE_DIR = "HNREFINE_CACHE_DIR"


class ConfigError(ValueError):
    """A malformed or contradictory configuration."""


@dataclass(frozen=True)
class MockSpec:
    """Mock backend selection: where its plan lives and which faults to inject."""

    plan_path: str | None = None
    faults: FaultSpec = dataclasses.field(default_factory=FaultSpec)


@dataclass(frozen=True)
class IoConfig:
    schema: TripletSchema = dataclasses.field(default_factory=TripletSchema)
    dataset_tag: str = ""
    on_error: str = "abort"


@dataclass(frozen=True)
class ReviewConfig:
    host: str = "127.0.0.1"
    port: int = 8321
    journal: str = "review-journal.jsonl"
    cors_origins: tuple[str, ...] = ("*",)


@dataclass(frozen=True)
class AppConfig:
    backend_kind: str = "http"
    backend: BackendConfig = dataclasses.field(default_factory=BackendConfig)
    mock: MockSpec = dataclasses.field(default_factory=MockSpec)
    refinement: RefineSettings = dataclasses.field(default_factory=RefineSettings)
    io: IoConfig = dataclasses.field(default_factory=IoConfig)
    review: ReviewConfig = dataclasses.field(default_factory=ReviewConfig)


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return dict(value)


def _reject_unknown(section: str, raw: dict, known: set[str]) -> None:
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(
            f"unknown keys in section {section!r}: {sorted(unknown)} "
            f"(known: {sorted(known)})"
        )


def _build(cls, section_name: str, raw: dict, **extra):
    known = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown(section_name, raw, known - set(extra))
    try:
        return cls(**raw, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section_name!r}: {exc}") from exc


def load_config(path: str | Path | None) -> AppConfig:
    """Parse a YAML config file; None loads pure defaults.

    The backend auth token and cache directory also come from environment
    variables (HNREFINE_AUTH_TOKEN, HNREFINE_CACHE_DIR); the environment
    wins over the file for those two, keeping secrets out of checked-in
    configs.
    """
    raw: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a mapping")
        raw = loaded
    _reject_unknown("<root>", raw, {"backend", "refinement", "io", "review"})

    backend_raw = _section(raw, "backend")
    kind = str(backend_raw.pop("kind", "http"))
    if kind not in ("http", "mock"):
        raise ConfigError(f"backend.kind must be 'http' or 'mock', got {kind!r}")
    mock_raw = _section(backend_raw, "mock")
    backend_raw.pop("mock", None)
    if "backoff_s" in backend_raw:
        backend_raw["backoff_s"] = tuple(backend_raw["backoff_s"])
    token = os.environ.get(ENV_AUTH_TOKEN)
    if token:
        backend_raw.setdefault("auth_header_name", "Authorization")
        backend_raw["auth_header_value"] = f"Bearer {token}"
    cache_override = os.environ.get(ENV_CACHE_DIR)
    if cache_override:
        backend_raw["cache_dir"] = cache_override
    backend = _build(BackendConfig, "backend", backend_raw)

    plan_path = mock_raw.pop("plan_path", None)
    faults = _build(FaultSpec, "backend.mock", mock_raw)
    mock = MockSpec(plan_path=plan_path, faults=faults)
    if kind == "mock" and not plan_path:
        raise ConfigError("backend.kind 'mock' requires backend.mock.plan_path")

    refinement_raw = _section(raw, "refinement")
    if "mode" in refinement_raw:
        refinement_raw["mode"] = Mode.parse(str(refinement_raw["mode"]))
    refinement_raw.setdefault("max_workers", backend.max_parallel_requests)
    refinement = _build(RefineSettings, "refinement", refinement_raw)
    if refinement.granularity not in ("snippet", "passage"):
        raise ConfigError(
            f"refinement.granularity must be 'snippet' or 'passage', "
            f"got {refinement.granularity!r}"
        )

    io_raw = _section(raw, "io")
    schema_raw = _section(io_raw, "schema")
    io_raw.pop("schema", None)
    try:
        schema = TripletSchema.from_dict(schema_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section 'io.schema': {exc}") from exc
    io_config = _build(IoConfig, "io", io_raw, schema=schema)
    if io_config.on_error not in ("abort", "skip"):
        raise ConfigError(
            f"io.on_error must be 'abort' or 'skip', got {io_config.on_error!r}"
        )

    review_raw = _section(raw, "review")
    if "cors_origins" in review_raw:
        review_raw["cors_origins"] = tuple(review_raw["cors_origins"])
    review = _build(ReviewConfig, "review", review_raw)

    return AppConfig(
        backend_kind=kind, backend=backend, mock=mock,
        refinement=refinement, io=io_config, review=review,
    )


def override_refinement(config: AppConfig, **changes) -> AppConfig:
    """Replace refinement fields from CLI flags; None values mean 'keep'."""
    actual = {k: v for k, v in changes.items() if v is not None}
    if "mode" in actual and isinstance(actual["mode"], str):
        actual["mode"] = Mode.parse(actual["mode"])
    if not actual:
        return config
    return dataclasses.replace(
        config, refinement=dataclasses.replace(config.refinement, **actual)
    )


def override_backend(config: AppConfig, **changes) -> AppConfig:
    actual = {k: v for k, v in changes.items() if v is not None}
    if not actual:
        return config
    return dataclasses.replace(
        config, backend=dataclasses.replace(config.backend, **actual)
    )


def override_mock_faults(config: AppConfig, **changes) -> AppConfig:
    actual = {k: v for k, v in changes.items() if v is not None}
    if not actual:
        return config
    mock = dataclasses.replace(
        config.mock, faults=dataclasses.replace(config.mock.faults, **actual)
    )
    return dataclasses.replace(config, mock=mock)
