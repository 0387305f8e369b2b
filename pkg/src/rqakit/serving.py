"""HTTP serving: a controller that load-balances chat requests over registered
pipeline workers, plus feedback and static-evaluation endpoints.

Topology: N worker processes each wrap one pipeline behind ``POST
/worker/generate``; the controller tracks them through register/heartbeat,
routes each chat request to the live worker with the fewest outstanding
requests (round-robin on ties), and persists chat sessions and ratings as
JSONL under its data directory.
"""

import asyncio
import itertools
import json
import socket
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import httpx
import uvicorn
from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .pipeline import DialogueSession, RQAPipeline

DEFAULT_HEARTBEAT_TTL = 30.0
DEFAULT_WORKER_TIMEOUT = 120.0

SESSIONS_FILE = "sessions.jsonl"
FEEDBACK_FILE = "feedback.jsonl"

CORRECTNESS_VALUES = {"correct", "incorrect", "unrated"}


@dataclass
class WorkerInfo:
    worker_id: str
    base_url: str
    pipeline_identity: str
    max_concurrency: int = 1
    last_heartbeat: float = field(default_factory=time.monotonic)
    outstanding: int = 0
    alive: bool = True
    last_picked: int = 0


class ControllerState:
    """Worker registry, session store, and JSONL persistence."""

    def __init__(
        self,
        data_dir: str | Path,
        expected_pipeline: str | None = None,
        heartbeat_ttl: float = DEFAULT_HEARTBEAT_TTL,
        worker_timeout: float = DEFAULT_WORKER_TIMEOUT,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.expected_pipeline = expected_pipeline
        self.heartbeat_ttl = heartbeat_ttl
        self.worker_timeout = worker_timeout
        self.workers: dict[str, WorkerInfo] = {}
        self.sessions: dict[str, DialogueSession] = {}
        self._session_locks: dict[str, asyncio.Lock] = {}
        self._registry_lock = asyncio.Lock()
        self._sessions_file_lock = asyncio.Lock()
        self._feedback_file_lock = asyncio.Lock()
        self._annotation_locks: dict[str, asyncio.Lock] = {}
        self._pick_counter = itertools.count(1)
        self._load_sessions()

    # -- persistence ------------------------------------------------------
    @property
    def sessions_path(self) -> Path:
        return self.data_dir / SESSIONS_FILE

    @property
    def feedback_path(self) -> Path:
        return self.data_dir / FEEDBACK_FILE

    def _load_sessions(self) -> None:
        if not self.sessions_path.exists():
            return
        with self.sessions_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    session = DialogueSession.from_dict(json.loads(line))
                    self.sessions[session.session_id] = session

    async def persist_sessions(self) -> None:
        # one session per line; the whole file is rewritten on update
        async with self._sessions_file_lock:
            blob = "".join(
                json.dumps(s.to_dict(), ensure_ascii=False) + "\n" for s in self.sessions.values()
            )
            self.sessions_path.write_text(blob, encoding="utf-8")

    async def append_feedback(self, record: dict[str, Any]) -> None:
        async with self._feedback_file_lock:
            with self.feedback_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def read_feedback(self) -> list[dict[str, Any]]:
        if not self.feedback_path.exists():
            return []
        with self.feedback_path.open("r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    # -- scheduling -------------------------------------------------------
    def session_lock(self, session_id: str) -> asyncio.Lock:
        return self._session_locks.setdefault(session_id, asyncio.Lock())

    def annotation_lock(self, name: str) -> asyncio.Lock:
        return self._annotation_locks.setdefault(name, asyncio.Lock())

    def live_workers(self) -> list[WorkerInfo]:
        now = time.monotonic()
        return [
            w
            for w in self.workers.values()
            if w.alive and now - w.last_heartbeat <= self.heartbeat_ttl
        ]

    def pick_worker(self) -> WorkerInfo | None:
        candidates = self.live_workers()
        if not candidates:
            return None
        worker = min(candidates, key=lambda w: (w.outstanding, w.last_picked))
        worker.last_picked = next(self._pick_counter)
        return worker


def create_controller_app(
    data_dir: str | Path,
    expected_pipeline: str | None = None,
    heartbeat_ttl: float = DEFAULT_HEARTBEAT_TTL,
    worker_timeout: float = DEFAULT_WORKER_TIMEOUT,
    static_dir: str | Path | None = None,
) -> FastAPI:
    state = ControllerState(data_dir, expected_pipeline, heartbeat_ttl, worker_timeout)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.http = httpx.AsyncClient(timeout=state.worker_timeout)
        yield
        await app.state.http.aclose()

    app = FastAPI(title="rqakit controller", lifespan=lifespan)
    app.state.controller = state

    # -- worker lifecycle -------------------------------------------------
    @app.post("/api/worker/register")
    async def register_worker(body: dict = Body(...)):
        worker_id = body.get("worker_id")
        base_url = str(body.get("base_url", "")).rstrip("/")
        if not worker_id or not base_url:
            raise HTTPException(400, "worker_id and base_url are required")
        pipeline_identity = str(body.get("pipeline", ""))
        if state.expected_pipeline and pipeline_identity != state.expected_pipeline:
            raise HTTPException(
                409, f"controller expects pipeline {state.expected_pipeline!r}"
            )
        async with state._registry_lock:
            for other in state.workers.values():
                if other.base_url == base_url and other.worker_id != worker_id:
                    raise HTTPException(409, f"base_url already registered by {other.worker_id!r}")
            existing = state.workers.get(worker_id)
            if existing is None:
                state.workers[worker_id] = WorkerInfo(
                    worker_id=worker_id,
                    base_url=base_url,
                    pipeline_identity=pipeline_identity,
                    max_concurrency=int(body.get("max_concurrency", 1)),
                )
            else:
                existing.base_url = base_url
                existing.pipeline_identity = pipeline_identity
                existing.alive = True
                existing.last_heartbeat = time.monotonic()
        return {"ok": True}

    @app.post("/api/worker/heartbeat")
    async def heartbeat(body: dict = Body(...)):
        worker = state.workers.get(body.get("worker_id"))
        if worker is None:
            raise HTTPException(404, "unknown worker")
        worker.last_heartbeat = time.monotonic()
        worker.alive = True
        return {"ok": True}

    @app.get("/api/workers")
    async def list_workers():
        now = time.monotonic()
        return {
            "workers": [
                {
                    "worker_id": w.worker_id,
                    "base_url": w.base_url,
                    "pipeline": w.pipeline_identity,
                    "outstanding": w.outstanding,
                    "alive": w.alive,
                    "heartbeat_age_s": now - w.last_heartbeat,
                }
                for w in state.workers.values()
            ]
        }

    # -- chat ---------------------------------------------------------------
    @app.post("/api/chat")
    async def chat(body: dict = Body(...)):
        question = (body.get("question") or "").strip()
        if not question:
            raise HTTPException(400, "question must be non-empty")
        session_id = body.get("session_id") or None
        session_key = session_id or "anonymous"
        async with state.session_lock(session_key):
            session = state.sessions.get(session_id) if session_id else None
            if session is None:
                session = DialogueSession(session_id)
            worker = state.pick_worker()
            if worker is None:
                return JSONResponse(
                    {"detail": "no live workers"}, status_code=503, headers={"Retry-After": "1"}
                )
            worker.outstanding += 1
            try:
                response = await app.state.http.post(
                    f"{worker.base_url}/worker/generate",
                    json={"question": question, "session": session.to_dict()},
                    timeout=state.worker_timeout,
                )
            except httpx.TimeoutException:
                worker.alive = False
                raise HTTPException(504, f"worker {worker.worker_id} timed out")
            except httpx.HTTPError as exc:
                worker.alive = False
                raise HTTPException(504, f"worker {worker.worker_id} unreachable: {exc}")
            finally:
                worker.outstanding -= 1
            if response.status_code != 200:
                raise HTTPException(502, f"worker error: {response.text[:200]}")
            data = response.json()
            session = DialogueSession.from_dict(data["session"])
            state.sessions[session.session_id] = session
            await state.persist_sessions()
            return {
                "session_id": session.session_id,
                "answer": data["answer"],
                "sources": data["sources"],
                "turn_index": len(session.turns) - 1,
                "worker_id": worker.worker_id,
            }

    @app.get("/api/session")
    async def get_session(session_id: str = Query(...)):
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, "unknown session")
        feedback: dict[int, dict[str, Any]] = {}
        for record in state.read_feedback():
            if record.get("session_id") == session_id:
                feedback[int(record["turn_index"])] = record
        return {"session": session.to_dict(), "feedback": feedback}

    # -- feedback -----------------------------------------------------------
    @app.post("/api/feedback")
    async def post_feedback(body: dict = Body(...)):
        session_id = body.get("session_id")
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(400, "unknown session")
        try:
            turn_index = int(body["turn_index"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(400, "turn_index must be an integer")
        if not 0 <= turn_index < len(session.turns):
            raise HTTPException(400, "turn_index out of range")
        if session.turns[turn_index].role != "assistant":
            raise HTTPException(400, "feedback must target an assistant turn")
        correctness = body.get("correctness", "unrated")
        if correctness not in CORRECTNESS_VALUES:
            raise HTTPException(400, f"correctness must be one of {sorted(CORRECTNESS_VALUES)}")
        helpfulness = body.get("helpfulness", "unrated")
        if helpfulness != "unrated":
            try:
                helpfulness = int(helpfulness)
            except (TypeError, ValueError):
                raise HTTPException(400, "helpfulness must be 1-5 or 'unrated'")
            if not 1 <= helpfulness <= 5:
                raise HTTPException(400, "helpfulness must be 1-5 or 'unrated'")
        await state.append_feedback(
            {
                "session_id": session_id,
                "turn_index": turn_index,
                "correctness": correctness,
                "helpfulness": helpfulness,
                "ts": time.time(),
            }
        )
        return {"ok": True}

    @app.get("/api/feedback")
    async def get_feedback(session_id: str = Query(...), turn_index: int = Query(...)):
        latest = None
        for record in state.read_feedback():
            if record.get("session_id") == session_id and int(record.get("turn_index", -1)) == turn_index:
                latest = record
        if latest is None:
            raise HTTPException(404, "no feedback for that turn")
        return latest

    # -- static evaluation ---------------------------------------------------
    def _predictions_path(name: str) -> Path:
        path = state.data_dir / Path(name).name
        if not path.exists():
            raise HTTPException(404, f"no predictions file {path.name!r} in data dir")
        return path

    def _load_records(path: Path) -> list[dict[str, Any]]:
        with path.open("r", encoding="utf-8") as fh:
            try:
                return [json.loads(line) for line in fh if line.strip()]
            except json.JSONDecodeError as exc:
                raise HTTPException(400, f"predictions file does not parse: {exc}")

    def _annotations(path: Path) -> dict[int, dict[str, Any]]:
        ann_path = path.with_name(path.name + ".annotations.jsonl")
        latest: dict[int, dict[str, Any]] = {}
        if ann_path.exists():
            with ann_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        record = json.loads(line)
                        latest[int(record["record_index"])] = record
        return latest

    @app.get("/api/eval/items")
    async def eval_items(file: str = Query(...), cursor: int | None = Query(None)):
        path = _predictions_path(file)
        records = _load_records(path)
        annotations = _annotations(path)
        total = len(records)
        if cursor is None:
            cursor = next((i for i in range(total) if i not in annotations), total)
        if cursor < 0 or cursor > total:
            raise HTTPException(400, f"cursor {cursor} out of range 0..{total}")
        progress = {
            "cursor": cursor,
            "total": total,
            "annotated": len(annotations),
            "complete": len(annotations) >= total,
        }
        if cursor == total:
            return {"record": None, **progress}
        return {"record": records[cursor], **progress}

    @app.post("/api/eval/annotate")
    async def eval_annotate(body: dict = Body(...)):
        name = body.get("file")
        if not name:
            raise HTTPException(400, "file is required")
        path = _predictions_path(name)
        records = _load_records(path)
        try:
            record_index = int(body["record_index"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(400, "record_index must be an integer")
        if not 0 <= record_index < len(records):
            raise HTTPException(400, f"record_index {record_index} out of range")
        accuracy = body.get("accuracy")
        if accuracy not in ("correct", "incorrect"):
            raise HTTPException(400, "accuracy must be 'correct' or 'incorrect'")
        annotation = {
            "record_index": record_index,
            "accuracy": accuracy,
            "notes": str(body.get("notes", "")),
            "ts": time.time(),
        }
        async with state.annotation_lock(path.name):
            ann_path = path.with_name(path.name + ".annotations.jsonl")
            with ann_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(annotation, ensure_ascii=False) + "\n")
        annotations = _annotations(path)
        complete = len(annotations) >= len(records)
        result: dict[str, Any] = {"ok": True, "complete": complete, "annotated": len(annotations)}
        if complete:
            correct = sum(1 for a in annotations.values() if a["accuracy"] == "correct")
            result["accuracy_fraction"] = correct / len(records)
        return result

    if static_dir is not None and Path(static_dir).exists():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")

    return app


def create_worker_app(pipeline: RQAPipeline, worker_id: str = "worker") -> FastAPI:
    """Worker wrapping one pipeline: ``POST /worker/generate`` for one batch element."""
    app = FastAPI(title=f"rqakit worker {worker_id}")
    app.state.pipeline = pipeline
    pipeline_lock = threading.Lock()

    @app.post("/worker/generate")
    def generate(body: dict = Body(...)):
        question = body.get("question", "")
        session = DialogueSession.from_dict(body.get("session") or {})
        with pipeline_lock:
            output = pipeline.qa([question], [session])
        session = output.batch_dialogue_session[0]
        return {
            "answer": output.batch_answers[0],
            "sources": [
                {"passage_id": p.passage_id, "content": p.content, "source": p.source}
                for p in output.batch_source_documents[0]
            ],
            "session": session.to_dict(),
        }

    @app.get("/worker/health")
    def health():
        return {"ok": True, "worker_id": worker_id}

    return app


def register_with_controller(
    controller_url: str,
    worker_id: str,
    base_url: str,
    pipeline_identity: str,
    max_concurrency: int = 1,
) -> None:
    response = httpx.post(
        f"{controller_url.rstrip('/')}/api/worker/register",
        json={
            "worker_id": worker_id,
            "base_url": base_url,
            "pipeline": pipeline_identity,
            "max_concurrency": max_concurrency,
        },
        timeout=10.0,
    )
    response.raise_for_status()


def heartbeat_forever(controller_url: str, worker_id: str, interval: float = 5.0) -> None:
    """Blocking heartbeat loop; run on a daemon thread."""
    while True:
        try:
            httpx.post(
                f"{controller_url.rstrip('/')}/api/worker/heartbeat",
                json={"worker_id": worker_id},
                timeout=5.0,
            )
        except httpx.HTTPError:
            pass
        time.sleep(interval)


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ServerHandle:
    """Runs a FastAPI app on a background uvicorn thread (tests and demos)."""

    def __init__(self, app: FastAPI, port: int | None = None, host: str = "127.0.0.1"):
        self.port = port or free_port()
        self.host = host
        config = uvicorn.Config(app, host=host, port=self.port, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self, timeout: float = 10.0) -> "ServerHandle":
        self.thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server failed to start in time")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10.0)
