"""Blinded dual-assessor review sessions over HTTP.

Assessors judge query-negative pairs without ever seeing the machine's
hidden label or each other's choices; disagreements go to an adjudication
queue, and export (the only route that reveals hidden labels) unlocks only
when every item is resolved. Every mutation is appended to a journal file
and replayed on startup, so a crash loses nothing.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .analytics import kappa_by_judge
from .model import AnnotationItem, AnnotationSession, ItemStatus

DEFAULT_ASSESSORS = ("A", "B")


class SessionNotFound(KeyError):
    pass


class ReviewConflict(RuntimeError):
    pass


class ReviewValidation(ValueError):
    pass


@dataclass
class _SessionState:
    session_id: str
    name: str
    items: list[AnnotationItem] = field(default_factory=list)
    assessors: tuple[str, ...] = DEFAULT_ASSESSORS
    judgments: dict[str, dict[str, bool]] = field(default_factory=dict)
    adjudicated: dict[str, bool] = field(default_factory=dict)

    def snapshot(self) -> AnnotationSession:
        return AnnotationSession(
            session_id=self.session_id,
            items=tuple(self.items),
            judgments={k: dict(v) for k, v in self.judgments.items()},
            adjudicated=dict(self.adjudicated),
            assessors=self.assessors,
        )


def item_from_dict(raw: dict) -> AnnotationItem:
    try:
        return AnnotationItem(
            pair_id=str(raw["pair_id"]),
            query=str(raw["query"]),
            negative_text=str(raw["negative_text"]),
            llm_label=bool(raw["llm_label"]),
            judge_tag=str(raw.get("judge_tag", "")),
        )
    except KeyError as exc:
        raise ReviewValidation(f"annotation item missing field {exc}") from exc


def item_to_dict(item: AnnotationItem) -> dict:
    return {
        "pair_id": item.pair_id,
        "query": item.query,
        "negative_text": item.negative_text,
        "llm_label": item.llm_label,
        "judge_tag": item.judge_tag,
    }


def assessor_payload(item: AnnotationItem) -> dict:
    """What an assessor may see: never the hidden label or judge tag."""
    return {
        "pair_id": item.pair_id,
        "query": item.query,
        "negative_text": item.negative_text,
    }


class SessionStore:
    """All review state, serialized under one lock, journaled to disk.

    The journal is an append-only event log ({session, judgment,
    adjudication} records); replaying it rebuilds the exact store state, and
    every write is flushed to the OS before the call returns.
    """

    def __init__(self, journal_path: str | Path | None = None):
        self._lock = threading.RLock()
        self._sessions: dict[str, _SessionState] = {}
        self._journal_path = Path(journal_path) if journal_path else None
        self._journal_file = None
        if self._journal_path is not None and self._journal_path.exists():
            self._replay()

    def _replay(self) -> None:
        assert self._journal_path is not None
        with open(self._journal_path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ReviewValidation(
                        f"journal line {line_no} is not valid JSON: {exc.msg}"
                    ) from exc
                self._apply(event, journal=False)

    def _journal(self, event: dict) -> None:
        if self._journal_path is None:
            return
        if self._journal_file is None:
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)
            self._journal_file = open(self._journal_path, "a", encoding="utf-8")
        self._journal_file.write(
            json.dumps(event, ensure_ascii=False, separators=(",", ":")) + "\n"
        )
        self._journal_file.flush()
        os.fsync(self._journal_file.fileno())

    def _apply(self, event: dict, *, journal: bool) -> None:
        kind = event.get("event")
        if kind == "session":
            state = _SessionState(
                session_id=str(event["session_id"]),
                name=str(event.get("name", "")),
                items=[item_from_dict(raw) for raw in event.get("items", [])],
                assessors=tuple(event.get("assessors", DEFAULT_ASSESSORS)),
            )
            seen = set()
            for item in state.items:
                if item.pair_id in seen:
                    raise ReviewValidation(f"duplicate pair_id {item.pair_id!r}")
                seen.add(item.pair_id)
            self._sessions[state.session_id] = state
        elif kind == "judgment":
            state = self._state(str(event["session_id"]))
            self._record_judgment(
                state, str(event["pair_id"]), str(event["assessor"]),
                bool(event["label"]),
            )
        elif kind == "adjudication":
            state = self._state(str(event["session_id"]))
            self._record_adjudication(
                state, str(event["pair_id"]), bool(event["label"])
            )
        else:
            raise ReviewValidation(f"unknown journal event {kind!r}")
        if journal:
            self._journal(event)

    def _state(self, session_id: str) -> _SessionState:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise SessionNotFound(session_id) from None

    def _item(self, state: _SessionState, pair_id: str) -> AnnotationItem:
        for item in state.items:
            if item.pair_id == pair_id:
                return item
        raise SessionNotFound(f"{state.session_id}/{pair_id}")

    # mutations

    def create_session(
        self,
        items: Iterable[AnnotationItem],
        *,
        name: str = "",
        assessors: tuple[str, ...] = DEFAULT_ASSESSORS,
    ) -> str:
        with self._lock:
            items = list(items)
            if not items:
                raise ReviewValidation("a session needs at least one item")
            if len(assessors) < 2:
                raise ReviewValidation("a session needs at least two assessors")
            session_id = f"s{len(self._sessions) + 1:04d}"
            self._apply(
                {
                    "event": "session",
                    "session_id": session_id,
                    "name": name,
                    "assessors": list(assessors),
                    "items": [item_to_dict(item) for item in items],
                },
                journal=True,
            )
            return session_id

    def _record_judgment(
        self, state: _SessionState, pair_id: str, assessor: str, label: bool
    ) -> None:
        if assessor not in state.assessors:
            raise ReviewValidation(
                f"unknown assessor {assessor!r} (session has {list(state.assessors)})"
            )
        self._item(state, pair_id)
        judged = state.judgments.setdefault(pair_id, {})
        if assessor in judged:
            raise ReviewConflict(
                f"assessor {assessor!r} already judged item {pair_id!r}"
            )
        judged[assessor] = label

    def record_judgment(
        self, session_id: str, pair_id: str, assessor: str, label: bool
    ) -> ItemStatus:
        with self._lock:
            self._apply(
                {
                    "event": "judgment",
                    "session_id": session_id,
                    "pair_id": pair_id,
                    "assessor": assessor,
                    "label": bool(label),
                },
                journal=True,
            )
            return self._state(session_id).snapshot().status(pair_id)

    def _record_adjudication(
        self, state: _SessionState, pair_id: str, label: bool
    ) -> None:
        status = state.snapshot().status(pair_id)
        if status is not ItemStatus.DISAGREED:
            raise ReviewConflict(
                f"item {pair_id!r} is {status.value}, only disagreed items "
                "can be adjudicated"
            )
        state.adjudicated[pair_id] = label

    def record_adjudication(
        self, session_id: str, pair_id: str, label: bool
    ) -> ItemStatus:
        with self._lock:
            self._apply(
                {
                    "event": "adjudication",
                    "session_id": session_id,
                    "pair_id": pair_id,
                    "label": bool(label),
                },
                journal=True,
            )
            return self._state(session_id).snapshot().status(pair_id)

    # queries

    def list_sessions(self) -> list[dict]:
        with self._lock:
            out = []
            for state in self._sessions.values():
                snap = state.snapshot()
                out.append(
                    {
                        "session_id": state.session_id,
                        "name": state.name,
                        "n_items": len(state.items),
                        "assessors": list(state.assessors),
                        "complete": snap.complete,
                    }
                )
            return out

    def next_item(
        self, session_id: str, assessor: str
    ) -> tuple[AnnotationItem | None, int]:
        """First item this assessor can still judge, plus how many remain."""
        with self._lock:
            state = self._state(session_id)
            if assessor not in state.assessors:
                raise ReviewValidation(
                    f"unknown assessor {assessor!r} (session has {list(state.assessors)})"
                )
            eligible = [
                item
                for item in state.items
                if assessor not in state.judgments.get(item.pair_id, {})
                and len(state.judgments.get(item.pair_id, {})) < len(state.assessors)
            ]
            if not eligible:
                return None, 0
            return eligible[0], len(eligible)

    def disagreements(self, session_id: str) -> list[dict]:
        """Adjudicator view: both judgments revealed, hidden label still not."""
        with self._lock:
            state = self._state(session_id)
            snap = state.snapshot()
            out = []
            for item in state.items:
                if snap.status(item.pair_id) is ItemStatus.DISAGREED:
                    payload = assessor_payload(item)
                    payload["judgments"] = dict(state.judgments[item.pair_id])
                    out.append(payload)
            return out

    def progress(self, session_id: str) -> dict:
        with self._lock:
            state = self._state(session_id)
            snap = state.snapshot()
            counts = {status.value: 0 for status in ItemStatus}
            for item in state.items:
                counts[snap.status(item.pair_id).value] += 1
            judged_by = {
                assessor: sum(
                    1
                    for judged in state.judgments.values()
                    if assessor in judged
                )
                for assessor in state.assessors
            }
            return {
                "session_id": session_id,
                "total": len(state.items),
                "counts": counts,
                "judged_by": judged_by,
                "complete": snap.complete,
            }

    def export(self, session_id: str) -> list[dict]:
        """Full rows with hidden labels; refused until the session completes."""
        with self._lock:
            state = self._state(session_id)
            snap = state.snapshot()
            if not snap.complete:
                raise ReviewConflict(
                    "export refused: session has unresolved items"
                )
            rows = []
            for item in state.items:
                rows.append(
                    {
                        **item_to_dict(item),
                        "judgments": dict(state.judgments.get(item.pair_id, {})),
                        "final_label": snap.final_label(item.pair_id),
                        "status": snap.status(item.pair_id).value,
                    }
                )
            return rows

    def kappa(self, session_id: str) -> dict:
        return kappa_by_judge(self.export(session_id))

    def close(self) -> None:
        with self._lock:
            if self._journal_file is not None:
                self._journal_file.close()
                self._journal_file = None


class ItemIn(BaseModel):
    pair_id: str
    query: str
    negative_text: str
    llm_label: bool
    judge_tag: str = ""


class CreateSessionIn(BaseModel):
    name: str = ""
    items: list[ItemIn] = Field(min_length=1)
    assessors: list[str] = list(DEFAULT_ASSESSORS)


class JudgmentIn(BaseModel):
    pair_id: str
    assessor: str
    label: bool


class AdjudicationIn(BaseModel):
    pair_id: str
    label: bool


def create_app(store: SessionStore, cors_origins: tuple[str, ...] = ("*",)):
    """The review HTTP API; all state lives in the given store."""
    app = FastAPI(title="annotation review server")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def run(fn):
        try:
            return fn()
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ReviewConflict as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ReviewValidation as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/sessions")
    def create_session(body: CreateSessionIn):
        session_id = run(
            lambda: store.create_session(
                (item_from_dict(item.model_dump()) for item in body.items),
                name=body.name,
                assessors=tuple(body.assessors),
            )
        )
        return {"session_id": session_id, "n_items": len(body.items)}

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": store.list_sessions()}

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str, assessor: str = Query(...)):
        item, remaining = run(lambda: store.next_item(session_id, assessor))
        return {
            "item": None if item is None else assessor_payload(item),
            "remaining": remaining,
        }

    @app.post("/sessions/{session_id}/judgments")
    def post_judgment(session_id: str, body: JudgmentIn):
        status = run(
            lambda: store.record_judgment(
                session_id, body.pair_id, body.assessor, body.label
            )
        )
        return {"pair_id": body.pair_id, "status": status.value}

    @app.get("/sessions/{session_id}/disagreements")
    def get_disagreements(session_id: str):
        return {"items": run(lambda: store.disagreements(session_id))}

    @app.post("/sessions/{session_id}/adjudications")
    def post_adjudication(session_id: str, body: AdjudicationIn):
        status = run(
            lambda: store.record_adjudication(session_id, body.pair_id, body.label)
        )
        return {"pair_id": body.pair_id, "status": status.value}

    @app.get("/sessions/{session_id}/progress")
    def get_progress(session_id: str):
        return run(lambda: store.progress(session_id))

    @app.get("/sessions/{session_id}/export")
    def get_export(session_id: str):
        return {"items": run(lambda: store.export(session_id))}

    @app.get("/sessions/{session_id}/kappa")
    def get_kappa(session_id: str):
        return {"report": run(lambda: store.kappa(session_id))}

    return app
