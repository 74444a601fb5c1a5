"""Preference-collection HTTP service.

Serves query batteries to the browser UI, ingests per-criterion answers into
an append-only JSON Lines log (fsync on write), aggregates answer
distributions, and runs metric learning on a requested split. Restarting the
service replays the log, reconstructing sessions and distributions exactly.
"""
from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone

from fastapi import FastAPI, Request, Response
from fastapi.staticfiles import StaticFiles

from .learning import (
    Criterion,
    LearnOptions,
    PreferenceDataset,
    aggregate,
    learn,
    learn_report,
)
from .manifold import TaskType
from .queries import Battery

CRITERION_NAMES = tuple(c.value for c in Criterion)


def _canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n"


def _json_response(data, status_code: int = 200) -> Response:
    return Response(
        content=_canonical_json(data),
        status_code=status_code,
        media_type="application/json",
    )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class ServiceConfig:
    battery_path: str | None = None
    battery: Battery | None = None
    log_path: str = "answers.jsonl"
    static_dir: str | None = None
    learn_seed: int = 0


class AnswerLog:
    """Append-only JSONL log of answer records, replayed on startup.

    Appends are serialized by a writer lock and fsynced so a crash never
    loses an acknowledged answer.
    """

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        self.records: list[dict] = []
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self.records.append(json.loads(line))
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, records: list[dict]) -> None:
        with self._lock:
            for record in records:
                self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self.records.extend(records)


class _State:
    def __init__(self, config: ServiceConfig):
        self.battery = config.battery
        if self.battery is None and config.battery_path:
            self.battery = Battery.load(config.battery_path)
        self.log = AnswerLog(config.log_path)
        self.learn_seed = config.learn_seed
        self.sessions: dict[str, int] = {}
        self.answered: set[tuple[str, str, str]] = set()
        self.sessions_lock = threading.Lock()
        self.learn_lock = threading.Lock()
        for record in self.log.records:
            key = (record["session_id"], record["query_id"], record["criterion"])
            self.answered.add(key)
        if self.battery is not None:
            counts: dict[str, set[str]] = {}
            for session_id, query_id, _ in self.answered:
                counts.setdefault(session_id, set()).add(query_id)
            for session_id, query_ids in counts.items():
                self.sessions[session_id] = len(query_ids)


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="cspace-metrics preference service")
    state = _State(config)
    app.state.cspace = state

    @app.get("/api/session")
    def new_session():
        if state.battery is None:
            return _json_response({"error": "no battery loaded"}, 503)
        session_id = uuid.uuid4().hex
        with state.sessions_lock:
            state.sessions[session_id] = 0
        return _json_response(
            {
                "session_id": session_id,
                "battery_len": len(state.battery),
                "cursor": 0,
                "created_at": _now(),
            }
        )

    @app.get("/api/queries/{session_id}")
    def next_query(session_id: str):
        if state.battery is None:
            return _json_response({"error": "no battery loaded"}, 503)
        if session_id not in state.sessions:
            return _json_response({"error": "unknown session"}, 404)
        cursor = state.sessions[session_id]
        if cursor >= len(state.battery):
            return Response(status_code=204)
        query = state.battery.queries[cursor]
        arm = state.battery.arm
        view = {
            "query_id": query.id,
            "index": cursor,
            "total": len(state.battery),
            "m": query.m,
            "links": list(getattr(arm, "link_lengths", ())),
            "start": [float(v) for v in query.start],
            "target": query.target.to_dict(),
            "candidates": [[float(v) for v in row] for row in query.presented],
            "criteria": list(CRITERION_NAMES),
        }
        return _json_response(view)

    @app.post("/api/answers")
    async def post_answers(request: Request):
        if state.battery is None:
            return _json_response({"error": "no battery loaded"}, 503)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _json_response({"error": "malformed JSON body"}, 400)
        if not isinstance(body, dict):
            return _json_response({"error": "body must be an object"}, 400)
        session_id = body.get("session_id")
        query_id = body.get("query_id")
        choices = body.get("choices")
        if not isinstance(session_id, str) or not isinstance(query_id, str):
            return _json_response({"error": "session_id and query_id required"}, 400)
        if session_id not in state.sessions:
            return _json_response({"error": "unknown session"}, 404)
        if not isinstance(choices, dict) or set(choices) != set(CRITERION_NAMES):
            return _json_response(
                {"error": f"choices must cover all criteria {CRITERION_NAMES}"}, 400
            )
        try:
            query = state.battery.by_id(query_id)
        except KeyError:
            return _json_response({"error": f"unknown query {query_id!r}"}, 400)
        for name, idx in choices.items():
            if not isinstance(idx, int) or not 0 <= idx < query.m:
                return _json_response(
                    {"error": f"choice for {name} must be an int below {query.m}"}, 400
                )
        if any((session_id, query_id, c) in state.answered for c in CRITERION_NAMES):
            return _json_response({"error": "query already answered"}, 409)
        cursor = state.sessions[session_id]
        if cursor >= len(state.battery) or state.battery.queries[cursor].id != query_id:
            return _json_response(
                {"error": f"expected answer for query index {cursor}"}, 400
            )
        received = _now()
        records = [
            {
                "type": "answer",
                "session_id": session_id,
                "query_id": query_id,
                "criterion": name,
                "choice_index": choices[name],
                "received_at": received,
            }
            for name in CRITERION_NAMES
        ]
        state.log.append(records)
        for name in CRITERION_NAMES:
            state.answered.add((session_id, query_id, name))
        with state.sessions_lock:
            state.sessions[session_id] = cursor + 1
        return _json_response({"ok": True, "cursor": cursor + 1})

    def _distributions(criterion: Criterion, task_type: TaskType | None):
        responses = [
            (r["session_id"], r["query_id"], r["criterion"], r["choice_index"])
            for r in state.log.records
        ]
        wanted_ids = {
            q.id
            for q in state.battery.queries
            if task_type is None or q.task_type is task_type
        }
        filtered = [
            (query_id, crit, choice)
            for _, query_id, crit, choice in responses
            if crit == criterion.value and query_id in wanted_ids
        ]
        return aggregate(filtered, state.battery.queries)

    @app.get("/api/distributions")
    def distributions(criterion: str, task_type: str | None = None):
        if state.battery is None:
            return _json_response({"error": "no battery loaded"}, 503)
        try:
            crit = Criterion(criterion)
            split = TaskType(task_type) if task_type else None
        except ValueError as exc:
            return _json_response({"error": str(exc)}, 400)
        dists = _distributions(crit, split)
        return _json_response([d.to_dict() for d in dists])

    @app.post("/api/learn")
    async def learn_endpoint(request: Request):
        if state.battery is None:
            return _json_response({"error": "no battery loaded"}, 503)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _json_response({"error": "malformed JSON body"}, 400)
        try:
            crit = Criterion(body.get("criterion", "naturalness"))
            split = TaskType(body["task_type"]) if body.get("task_type") else None
        except (ValueError, KeyError) as exc:
            return _json_response({"error": str(exc)}, 400)
        parameterization = body.get("parameterization", "full")
        if parameterization not in ("full", "diagonal"):
            return _json_response({"error": "parameterization must be full|diagonal"}, 400)
        if not state.learn_lock.acquire(blocking=False):
            return _json_response({"error": "a learn job is already running"}, 409)
        try:
            dists = _distributions(crit, split)
            if not dists:
                return _json_response({"error": "no distributions for this split"}, 422)
            pairs = tuple((state.battery.by_id(d.query_id), d) for d in dists)
            dataset = PreferenceDataset(pairs=pairs)
            opts = LearnOptions(
                parameterization=parameterization,
                seed=int(body.get("seed", state.learn_seed)),
            )
            result = learn(dataset, opts)
            report = learn_report(dataset, result)
            report["criterion"] = crit.value
            report["task_type"] = split.value if split else None
            return _json_response(report)
        finally:
            state.learn_lock.release()

    if config.static_dir:
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app
