"""Serve a pipeline: controller + two workers, chat, rate, and read back.

This demo runs everything in one process on localhost ports. In production
you would run the same topology as three commands:

    rqakit serve  --port 8000 --data-dir ./runs --static-dir frontend/dist
    rqakit worker --controller http://localhost:8000 --port 8001 --pipeline pipeline.json
    # open http://localhost:8000/ for the chat and review pages

Run: python demos/07_serve.py
"""

import json
import tempfile
from pathlib import Path

import httpx

from rqakit.pipeline import MockQAComponent, RQAPipeline
from rqakit.serving import (
    ServerHandle,
    create_controller_app,
    create_worker_app,
    register_with_controller,
)

with tempfile.TemporaryDirectory() as tmp:
    data_dir = Path(tmp) / "runs"
    controller = ServerHandle(create_controller_app(data_dir, worker_timeout=10.0)).start()
    print(f"controller at {controller.url}")

    sources = [{"passage_id": "m0", "content": "a passage shown as a source chip", "source": "demo"}]
    workers = []
    for i in range(2):
        pipeline = RQAPipeline([MockQAComponent(answer_prefix=f"[worker {i}] ", sources=sources)])
        worker = ServerHandle(create_worker_app(pipeline, f"w{i}")).start()
        register_with_controller(controller.url, f"w{i}", worker.url, pipeline.identity)
        workers.append(worker)
        print(f"worker w{i} registered from {worker.url}")

    # chat: the controller load-balances by least outstanding requests
    for i in range(4):
        body = httpx.post(
            f"{controller.url}/api/chat",
            json={"session_id": f"demo-{i % 2}", "question": f"question number {i}?"},
        ).json()
        print(f"chat {i}: answer={body['answer']!r} served_by={body['worker_id']}")

    # rate the last assistant turn of one session
    httpx.post(
        f"{controller.url}/api/feedback",
        json={"session_id": "demo-0", "turn_index": 1, "correctness": "correct", "helpfulness": 5},
    )
    latest = httpx.get(
        f"{controller.url}/api/feedback", params={"session_id": "demo-0", "turn_index": 1}
    ).json()
    print(f"\nstored rating: correctness={latest['correctness']} helpfulness={latest['helpfulness']}")

    sessions = [json.loads(l) for l in (data_dir / "sessions.jsonl").read_text().splitlines()]
    print(f"persisted sessions: {[(s['session_id'], len(s['turns'])) for s in sessions]}")

    for handle in [controller, *workers]:
        handle.stop()
    print("\nservers stopped; chat log and feedback remain as JSONL under the data dir")
