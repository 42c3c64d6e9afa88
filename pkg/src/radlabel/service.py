"""Annotation service: feeds sampled reports to human annotators, persists
tri-state annotations in an append-only log, and derives the two reference
views (actionable vs mention) from the same log.

Durability model: one JSONL event log per data directory plus a sessions
log; the in-memory index is rebuilt by replaying the logs on start, so any
acknowledged submission survives a restart. A single lock serializes writes.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import HTMLResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .io import truth_csv_text, write_truth_csv
from .schema import (
    DataContractError,
    LabelSchema,
    PredictionSet,
    TriStateAnnotation,
    DEFAULT_SCHEMA,
    NEGATIVE,
    POSITIVE,
    SUBJECTIVE,
)

ACTIONABLE = "actionable"
MENTION = "mention"
VIEW_KINDS = (ACTIONABLE, MENTION)

PENDING = "pending"
DONE = "done"
SKIPPED = "skipped"


@dataclass
class AnnotationSession:
    session_id: str
    annotator_id: str
    queue: list[str]
    status: dict[str, str] = field(default_factory=dict)

    @property
    def cursor(self) -> int:
        for position, rid in enumerate(self.queue):
            if self.status.get(rid, PENDING) == PENDING:
                return position
        return len(self.queue)

    def counts(self) -> dict[str, int]:
        values = [self.status.get(rid, PENDING) for rid in self.queue]
        return {
            DONE: values.count(DONE),
            SKIPPED: values.count(SKIPPED),
            PENDING: values.count(PENDING),
        }

    def next_pending(self) -> str | None:
        position = self.cursor
        return self.queue[position] if position < len(self.queue) else None


class AnnotationStore:
    """Replayable annotation state over a data directory."""

    def __init__(self, data_dir: str | Path, schema: LabelSchema | None = None):
        self.schema = schema or DEFAULT_SCHEMA
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.data_dir / "annotations.jsonl"
        self.sessions_path = self.data_dir / "sessions.jsonl"
        self._lock = threading.Lock()
        self.annotations: list[TriStateAnnotation] = []
        self.sessions: dict[str, AnnotationSession] = {}
        self._seq = 0
        self._replay()

    def _replay(self) -> None:
        if self.sessions_path.exists():
            for line in self.sessions_path.read_text().splitlines():
                if not line.strip():
                    continue
                row = json.loads(line)
                self.sessions[row["session_id"]] = AnnotationSession(
                    session_id=row["session_id"],
                    annotator_id=row["annotator_id"],
                    queue=list(row["queue"]),
                )
        if self.events_path.exists():
            for line in self.events_path.read_text().splitlines():
                if not line.strip():
                    continue
                event = json.loads(line)
                self._seq = max(self._seq, event.get("seq", 0))
                if event["kind"] == "annotation":
                    self._index_annotation(
                        TriStateAnnotation(
                            report_id=event["report_id"],
                            annotator_id=event["annotator_id"],
                            labels=event["labels"],
                            notes=event.get("notes", {}),
                            timestamp=event["seq"],
                        )
                    )
                elif event["kind"] == "skip":
                    self._index_skip(event["session_id"], event["report_id"])

    def _index_annotation(self, annotation: TriStateAnnotation) -> None:
        self.annotations.append(annotation)
        for session in self.sessions.values():
            if (
                session.annotator_id == annotation.annotator_id
                and annotation.report_id in session.queue
            ):
                session.status[annotation.report_id] = DONE

    def _index_skip(self, session_id: str, report_id: str) -> None:
        session = self.sessions.get(session_id)
        if session and report_id in session.queue:
            if session.status.get(report_id) != DONE:
                session.status[report_id] = SKIPPED

    def _append(self, path: Path, event: dict) -> None:
        with path.open("a") as handle:
            handle.write(json.dumps(event) + "\n")
            handle.flush()

    def start_session(self, annotator_id: str, report_ids: list[str], known_ids: set[str]) -> AnnotationSession:
        if not annotator_id:
            raise DataContractError("annotator_id must be non-empty")
        if not report_ids:
            raise DataContractError("session queue must be non-empty")
        unknown = sorted(set(report_ids) - known_ids)
        if unknown:
            raise DataContractError(f"unknown report ids: {unknown[:5]}")
        with self._lock:
            session_id = f"s{len(self.sessions) + 1:04d}"
            session = AnnotationSession(
                session_id=session_id, annotator_id=annotator_id, queue=list(report_ids)
            )
            self.sessions[session_id] = session
            self._append(
                self.sessions_path,
                {
                    "session_id": session_id,
                    "annotator_id": annotator_id,
                    "queue": list(report_ids),
                },
            )
        return session

    def submit(self, session_id: str, report_id: str, labels: Mapping[str, str],
               notes: Mapping[str, str] | None = None) -> TriStateAnnotation:
        session = self.sessions.get(session_id)
        if session is None:
            raise DataContractError(f"unknown session {session_id!r}")
        if report_id not in session.queue:
            raise DataContractError(f"report {report_id!r} not in session queue")
        with self._lock:
            self._seq += 1
            annotation = TriStateAnnotation(
                report_id=report_id,
                annotator_id=session.annotator_id,
                labels=dict(labels),
                notes=dict(notes or {}),
                timestamp=self._seq,
            )
            annotation.validate(self.schema)
            self._append(
                self.events_path,
                {
                    "kind": "annotation",
                    "seq": self._seq,
                    "report_id": report_id,
                    "annotator_id": session.annotator_id,
                    "labels": annotation.labels,
                    "notes": annotation.notes,
                },
            )
            self._index_annotation(annotation)
        return annotation

    def skip(self, session_id: str, report_id: str) -> None:
        session = self.sessions.get(session_id)
        if session is None:
            raise DataContractError(f"unknown session {session_id!r}")
        if report_id not in session.queue:
            raise DataContractError(f"report {report_id!r} not in session queue")
        with self._lock:
            self._seq += 1
            self._append(
                self.events_path,
                {"kind": "skip", "seq": self._seq, "session_id": session_id,
                 "report_id": report_id},
            )
            self._index_skip(session_id, report_id)


def effective_annotations(
    log: list[TriStateAnnotation], annotator_id: str | None = None
) -> dict[str, TriStateAnnotation]:
    """Latest annotation per report: per (report, annotator) the newest wins,
    and across annotators (when no filter is given) the newest overall."""
    out: dict[str, TriStateAnnotation] = {}
    for annotation in sorted(log, key=lambda a: a.timestamp):
        if annotator_id is not None and annotation.annotator_id != annotator_id:
            continue
        out[annotation.report_id] = annotation
    return out


def derive_view(
    log: list[TriStateAnnotation],
    kind: str,
    schema: LabelSchema | None = None,
    annotator_id: str | None = None,
) -> dict[str, dict[str, int]]:
    """Resolve tri-state annotations into a binary reference view.

    The actionable view maps subjective_mention to 0 (present but not
    clinically actionable), the mention view maps it to 1 (textually
    present); positive and negative map to 1 and 0 in both.
    """
    if kind not in VIEW_KINDS:
        raise DataContractError(f"unknown view kind {kind!r}")
    schema = schema or DEFAULT_SCHEMA
    subjective_value = 0 if kind == ACTIONABLE else 1
    mapping = {NEGATIVE: 0, POSITIVE: 1, SUBJECTIVE: subjective_value}
    return {
        rid: {lbl: mapping[annotation.labels[lbl]] for lbl in schema.labels}
        for rid, annotation in effective_annotations(log, annotator_id).items()
    }


def export_reference(view: Mapping[str, Mapping[str, int]], path: str | Path,
                     schema: LabelSchema | None = None) -> None:
    """Write a view as the labels CSV consumed by the evaluation commands."""
    write_truth_csv(view, path, schema)


def export_reference_text(view: Mapping[str, Mapping[str, int]],
                          schema: LabelSchema | None = None) -> str:
    return truth_csv_text(view, schema)


def subjectivity_report(
    log: list[TriStateAnnotation], schema: LabelSchema | None = None
) -> dict[str, dict[str, int]]:
    """Per-label distribution of positive / negative / subjective decisions
    over the effective annotations."""
    schema = schema or DEFAULT_SCHEMA
    effective = effective_annotations(log)
    table = {
        lbl: {POSITIVE: 0, NEGATIVE: 0, SUBJECTIVE: 0} for lbl in schema.labels
    }
    for annotation in effective.values():
        for lbl in schema.labels:
            table[lbl][annotation.labels[lbl]] += 1
    return table


class StartSessionBody(BaseModel):
    annotator_id: str
    report_ids: list[str] | None = None


class AnnotationBody(BaseModel):
    report_id: str
    labels: dict[str, str]
    notes: dict[str, str] = {}


class SkipBody(BaseModel):
    report_id: str


def _session_state(session: AnnotationSession) -> dict:
    return {
        "session_id": session.session_id,
        "annotator_id": session.annotator_id,
        "queue": session.queue,
        "cursor": session.cursor,
        "status": {rid: session.status.get(rid, PENDING) for rid in session.queue},
        "counts": session.counts(),
    }


def create_app(
    corpus_findings: Mapping[str, str],
    queue_ids: list[str],
    data_dir: str | Path,
    schema: LabelSchema | None = None,
    predictions: list[PredictionSet] | None = None,
    show_predictions: bool = False,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """Assemble the annotation API over a corpus of findings texts.

    ``corpus_findings`` maps report_id to findings text; ``queue_ids`` is the
    default queue offered to new sessions. Model predictions are only exposed
    when ``show_predictions`` is set, to avoid anchoring annotators.
    """
    schema = schema or DEFAULT_SCHEMA
    store = AnnotationStore(data_dir, schema)
    unknown = sorted(set(queue_ids) - set(corpus_findings))
    if unknown:
        raise DataContractError(f"queue ids missing from corpus: {unknown[:5]}")

    app = FastAPI(title="radlabel annotation service")
    app.state.store = store

    @app.get("/api/schema")
    def get_schema() -> dict:
        return schema.to_dict()

    @app.post("/api/sessions")
    def post_session(body: StartSessionBody) -> dict:
        ids = body.report_ids if body.report_ids is not None else list(queue_ids)
        try:
            session = store.start_session(body.annotator_id, ids, set(corpus_findings))
        except DataContractError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return _session_state(session)

    @app.get("/api/session/{session_id}")
    def get_session(session_id: str) -> dict:
        session = store.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return _session_state(session)

    @app.get("/api/session/{session_id}/next")
    def get_next(session_id: str) -> dict:
        session = store.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        rid = session.next_pending()
        if rid is None:
            return {"done": True, "counts": session.counts()}
        payload: dict = {
            "done": False,
            "report_id": rid,
            "findings": corpus_findings[rid],
            "position": session.cursor,
            "total": len(session.queue),
            "counts": session.counts(),
            "predictions": None,
        }
        if show_predictions and predictions:
            payload["predictions"] = {
                p.labeler_name: (
                    p.predictions[rid].decisions if rid in p.predictions else None
                )
                for p in predictions
            }
        return payload

    @app.post("/api/session/{session_id}/annotations")
    def post_annotation(session_id: str, body: AnnotationBody) -> dict:
        try:
            annotation = store.submit(session_id, body.report_id, body.labels, body.notes)
        except DataContractError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"ok": True, "timestamp": annotation.timestamp}

    @app.post("/api/session/{session_id}/skip")
    def post_skip(session_id: str, body: SkipBody) -> dict:
        try:
            store.skip(session_id, body.report_id)
        except DataContractError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"ok": True}

    @app.get("/api/export")
    def get_export(
        view: str = Query(...), annotator: str | None = Query(default=None)
    ) -> PlainTextResponse:
        try:
            resolved = derive_view(store.annotations, view, schema, annotator)
        except DataContractError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return PlainTextResponse(
            export_reference_text(resolved, schema), media_type="text/csv"
        )

    @app.get("/api/subjectivity")
    def get_subjectivity() -> dict:
        return subjectivity_report(store.annotations, schema)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index() -> str:
            return (
                "<html><body><h1>radlabel annotation service</h1>"
                "<p>No UI assets found. Build the frontend and pass --ui, "
                "or use the JSON API under /api/.</p></body></html>"
            )

    return app
