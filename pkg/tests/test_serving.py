"""Controller/worker serving tests over real localhost HTTP."""

import asyncio
import json
import time

import httpx
import pytest
from fastapi import Body, FastAPI

from rqakit.pipeline import MockQAComponent, RQAPipeline
from rqakit.serving import (
    ServerHandle,
    create_controller_app,
    create_worker_app,
    register_with_controller,
)


def mock_pipeline():
    sources = [{"passage_id": "m0", "content": "mock passage", "source": "mock"}]
    return RQAPipeline([MockQAComponent(answer_prefix="echo: ", sources=sources)])


@pytest.fixture
def cluster(tmp_path):
    """Controller plus two live mock workers; yields (controller_url, handles)."""
    controller = ServerHandle(
        create_controller_app(tmp_path / "runs", heartbeat_ttl=30.0, worker_timeout=5.0)
    ).start()
    workers = []
    for i in range(2):
        worker = ServerHandle(create_worker_app(mock_pipeline(), f"w{i}")).start()
        register_with_controller(controller.url, f"w{i}", worker.url, "mock-pipeline")
        workers.append(worker)
    yield controller, workers, tmp_path / "runs"
    for handle in [controller, *workers]:
        handle.stop()


def chat(url, session_id, question):
    response = httpx.post(
        f"{url}/api/chat", json={"session_id": session_id, "question": question}, timeout=30.0
    )
    return response


def test_chat_round_trip_and_new_session(cluster):
    controller, _, data_dir = cluster
    response = chat(controller.url, "sess-1", "hello there?")
    assert response.status_code == 200
    body = response.json()
    assert body["answer"] == "echo: hello there?"
    assert body["sources"][0]["passage_id"] == "m0"
    assert body["turn_index"] == 1
    # session persisted as one JSONL line
    lines = (data_dir / "sessions.jsonl").read_text().splitlines()
    stored = [json.loads(line) for line in lines]
    assert any(s["session_id"] == "sess-1" and len(s["turns"]) == 2 for s in stored)


def test_sequential_requests_alternate_workers(cluster):
    controller, _, _ = cluster
    served = [chat(controller.url, f"s{i}", "q?").json()["worker_id"] for i in range(4)]
    assert sorted(served.count(w) for w in set(served)) == [2, 2]


def test_session_grows_across_requests(cluster):
    controller, _, _ = cluster
    chat(controller.url, "multi", "first?")
    body = chat(controller.url, "multi", "second?").json()
    assert body["turn_index"] == 3
    session = httpx.get(
        f"{controller.url}/api/session", params={"session_id": "multi"}, timeout=10.0
    ).json()["session"]
    assert [t["role"] for t in session["turns"]] == ["user", "assistant"] * 2


def test_no_workers_gives_503(tmp_path):
    controller = ServerHandle(create_controller_app(tmp_path / "runs")).start()
    try:
        response = chat(controller.url, "s", "q?")
        assert response.status_code == 503
        assert "retry-after" in {k.lower() for k in response.headers}
    finally:
        controller.stop()


def test_empty_question_rejected(cluster):
    controller, _, _ = cluster
    assert chat(controller.url, "s", "   ").status_code == 400


def test_feedback_latest_wins_and_append_only(cluster):
    controller, _, data_dir = cluster
    chat(controller.url, "fb", "rate me?")
    feedback_path = data_dir / "feedback.jsonl"

    first = httpx.post(
        f"{controller.url}/api/feedback",
        json={"session_id": "fb", "turn_index": 1, "correctness": "correct", "helpfulness": 5},
        timeout=10.0,
    )
    assert first.status_code == 200
    assert len(feedback_path.read_text().splitlines()) == 1

    second = httpx.post(
        f"{controller.url}/api/feedback",
        json={"session_id": "fb", "turn_index": 1, "correctness": "incorrect"},
        timeout=10.0,
    )
    assert second.status_code == 200
    assert len(feedback_path.read_text().splitlines()) == 2

    latest = httpx.get(
        f"{controller.url}/api/feedback",
        params={"session_id": "fb", "turn_index": 1},
        timeout=10.0,
    ).json()
    assert latest["correctness"] == "incorrect"


def test_feedback_on_user_turn_rejected(cluster):
    controller, _, _ = cluster
    chat(controller.url, "fb2", "q?")
    response = httpx.post(
        f"{controller.url}/api/feedback",
        json={"session_id": "fb2", "turn_index": 0, "correctness": "correct"},
        timeout=10.0,
    )
    assert response.status_code == 400


def test_worker_registration_guards(cluster):
    controller, workers, _ = cluster
    # idempotent re-registration
    register_with_controller(controller.url, "w0", workers[0].url, "mock-pipeline")
    # same base_url under a different worker_id -> 409
    response = httpx.post(
        f"{controller.url}/api/worker/register",
        json={"worker_id": "intruder", "base_url": workers[0].url, "pipeline": "mock-pipeline"},
        timeout=10.0,
    )
    assert response.status_code == 409


def test_expected_pipeline_identity_enforced(tmp_path):
    controller = ServerHandle(
        create_controller_app(tmp_path / "runs", expected_pipeline="the-right-one")
    ).start()
    try:
        response = httpx.post(
            f"{controller.url}/api/worker/register",
            json={"worker_id": "w", "base_url": "http://127.0.0.1:1", "pipeline": "other"},
            timeout=10.0,
        )
        assert response.status_code == 409
    finally:
        controller.stop()


def test_heartbeat_ttl_evicts_and_reregistration_restores(tmp_path):
    controller = ServerHandle(
        create_controller_app(tmp_path / "runs", heartbeat_ttl=0.3, worker_timeout=5.0)
    ).start()
    worker = ServerHandle(create_worker_app(mock_pipeline(), "w0")).start()
    try:
        register_with_controller(controller.url, "w0", worker.url, "p")
        assert chat(controller.url, "s", "q?").status_code == 200
        time.sleep(0.5)  # heartbeat goes stale
        assert chat(controller.url, "s", "q2?").status_code == 503
        httpx.post(
            f"{controller.url}/api/worker/heartbeat", json={"worker_id": "w0"}, timeout=10.0
        )
        assert chat(controller.url, "s", "q3?").status_code == 200
    finally:
        controller.stop()
        worker.stop()


def test_scheduler_never_picks_evicted_or_stale_workers(tmp_path):
    # scripted scheduler: drive pick_worker directly through a sequence of
    # registrations, heartbeats, strikes, and load changes
    from rqakit.serving import ControllerState, WorkerInfo

    state = ControllerState(tmp_path / "runs", heartbeat_ttl=10.0)
    now = time.monotonic()
    state.workers["a"] = WorkerInfo("a", "http://a", "p", last_heartbeat=now)
    state.workers["b"] = WorkerInfo("b", "http://b", "p", last_heartbeat=now)
    state.workers["stale"] = WorkerInfo("stale", "http://s", "p", last_heartbeat=now - 60.0)
    state.workers["dead"] = WorkerInfo("dead", "http://d", "p", last_heartbeat=now, alive=False)

    picks = []
    for step in range(50):
        worker = state.pick_worker()
        picks.append(worker.worker_id)
        worker.outstanding += 1
        if step % 3 == 0:  # some requests complete
            for live in ("a", "b"):
                state.workers[live].outstanding = max(0, state.workers[live].outstanding - 1)
    assert set(picks) == {"a", "b"}
    # ties broke round-robin: neither worker starves
    assert abs(picks.count("a") - picks.count("b")) <= 2

    # eviction mid-stream: a struck-out worker is never chosen again
    state.workers["a"].alive = False
    assert all(state.pick_worker().worker_id == "b" for _ in range(10))
    # and a fresh heartbeat restores it
    state.workers["a"].alive = True
    state.workers["a"].last_heartbeat = time.monotonic()
    state.workers["a"].outstanding = 0
    state.workers["b"].outstanding = 5
    assert state.pick_worker().worker_id == "a"


def hanging_worker_app():
    app = FastAPI()

    @app.post("/worker/generate")
    async def generate(body: dict = Body(...)):
        await asyncio.sleep(60)

    return app


def test_dead_worker_times_out_then_other_serves(tmp_path):
    controller = ServerHandle(
        create_controller_app(tmp_path / "runs", worker_timeout=1.0)
    ).start()
    hanging = ServerHandle(hanging_worker_app()).start()
    healthy = ServerHandle(create_worker_app(mock_pipeline(), "alive")).start()
    try:
        register_with_controller(controller.url, "dead", hanging.url, "p")
        register_with_controller(controller.url, "alive", healthy.url, "p")
        # drive requests until one lands on the hanging worker and times out
        saw_504 = False
        for i in range(4):
            response = chat(controller.url, f"s{i}", "q?")
            if response.status_code == 504:
                saw_504 = True
                retry = chat(controller.url, f"s{i}", "q?")
                assert retry.status_code == 200
                assert retry.json()["worker_id"] == "alive"
        assert saw_504
        # dead worker is out of rotation: everything now lands on the live one
        for i in range(3):
            assert chat(controller.url, f"post{i}", "q?").json()["worker_id"] == "alive"
        # session untouched by the timed-out request
        session = httpx.get(
            f"{controller.url}/api/session", params={"session_id": "post0"}, timeout=10.0
        ).json()["session"]
        assert len(session["turns"]) == 2
    finally:
        for handle in (controller, hanging, healthy):
            handle.stop()


def test_concurrent_chat_balanced_and_persisted(cluster):
    controller, _, data_dir = cluster

    async def drive():
        async with httpx.AsyncClient(timeout=60.0) as client:
            tasks = [
                client.post(
                    f"{controller.url}/api/chat",
                    json={"session_id": f"bulk{i}", "question": f"q {i}?"},
                )
                for i in range(40)
            ]
            return await asyncio.gather(*tasks)

    responses = asyncio.run(drive())
    assert all(r.status_code == 200 for r in responses)
    counts = {}
    for r in responses:
        counts[r.json()["worker_id"]] = counts.get(r.json()["worker_id"], 0) + 1
    assert len(counts) == 2
    assert abs(counts["w0"] - counts["w1"]) <= 10
    sessions = [json.loads(l) for l in (data_dir / "sessions.jsonl").read_text().splitlines()]
    assert len([s for s in sessions if s["session_id"].startswith("bulk")]) == 40


# ---- static evaluation endpoints ------------------------------------------------
@pytest.fixture
def eval_run(tmp_path):
    controller = ServerHandle(create_controller_app(tmp_path / "runs")).start()
    records = [
        {"question": f"q{i}", "gold_answer": f"a{i}", "gold_passage_id": f"p{i}",
         "retrieved_passage_ids": [f"p{i}"], "generated_answer": f"g{i}",
         "retrieval_time_ms": 1.0, "generation_time_ms": 1.0}
        for i in range(4)
    ]
    path = tmp_path / "runs" / "preds.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    yield controller, path
    controller.stop()


def test_eval_items_walk_in_file_order(eval_run):
    controller, _ = eval_run
    for cursor in range(4):
        body = httpx.get(
            f"{controller.url}/api/eval/items",
            params={"file": "preds.jsonl", "cursor": cursor},
            timeout=10.0,
        ).json()
        assert body["record"]["question"] == f"q{cursor}"
        assert body["total"] == 4


def test_eval_annotate_walk_to_completion(eval_run):
    controller, path = eval_run
    verdicts = ["correct", "incorrect", "correct", "correct"]
    for i, verdict in enumerate(verdicts):
        body = httpx.post(
            f"{controller.url}/api/eval/annotate",
            json={"file": "preds.jsonl", "record_index": i, "accuracy": verdict, "notes": f"n{i}"},
            timeout=10.0,
        ).json()
    assert body["complete"] is True
    assert body["accuracy_fraction"] == pytest.approx(3 / 4)
    annotations = [
        json.loads(l)
        for l in (path.parent / "preds.jsonl.annotations.jsonl").read_text().splitlines()
    ]
    assert [a["notes"] for a in annotations] == ["n0", "n1", "n2", "n3"]


def test_eval_cursor_resumes_from_progress(eval_run):
    controller, _ = eval_run
    httpx.post(
        f"{controller.url}/api/eval/annotate",
        json={"file": "preds.jsonl", "record_index": 0, "accuracy": "correct"},
        timeout=10.0,
    )
    body = httpx.get(
        f"{controller.url}/api/eval/items", params={"file": "preds.jsonl"}, timeout=10.0
    ).json()
    assert body["cursor"] == 1
    assert body["record"]["question"] == "q1"


def test_eval_duplicate_annotation_latest_wins(eval_run):
    controller, _ = eval_run
    for verdict in ("correct", "incorrect"):
        httpx.post(
            f"{controller.url}/api/eval/annotate",
            json={"file": "preds.jsonl", "record_index": 2, "accuracy": verdict},
            timeout=10.0,
        )
    for i in (0, 1, 3):
        httpx.post(
            f"{controller.url}/api/eval/annotate",
            json={"file": "preds.jsonl", "record_index": i, "accuracy": "correct"},
            timeout=10.0,
        )
    body = httpx.get(
        f"{controller.url}/api/eval/items", params={"file": "preds.jsonl", "cursor": 4},
        timeout=10.0,
    ).json()
    assert body["complete"] is True


def test_eval_out_of_range_rejected(eval_run):
    controller, _ = eval_run
    response = httpx.post(
        f"{controller.url}/api/eval/annotate",
        json={"file": "preds.jsonl", "record_index": 99, "accuracy": "correct"},
        timeout=10.0,
    )
    assert response.status_code == 400
    response = httpx.get(
        f"{controller.url}/api/eval/items", params={"file": "preds.jsonl", "cursor": 99},
        timeout=10.0,
    )
    assert response.status_code == 400
