/** End-to-end: both pages driven against the real Python controller + worker. */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { setBaseUrl } from "../src/api.js";
import { createChatPage } from "../src/chat.js";
import { createEvalPage } from "../src/evalpage.js";

const controllerPort = 20000 + Math.floor(Math.random() * 10000);
const workerPort = controllerPort + 1;
const base = `http://127.0.0.1:${controllerPort}`;
let workdir: string;
let processes: ChildProcess[] = [];

function startPython(args: string[]): ChildProcess {
  const child = spawn("python3", ["-m", "rqakit.cli", ...args], {
    cwd: join(__dirname, "..", ".."),
    stdio: ["ignore", "pipe", "pipe"],
  });
  processes.push(child);
  return child;
}

async function until(check: () => Promise<boolean>, label: string, timeoutMs = 60000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      if (await check()) return;
    } catch {
      // keep polling
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error(`timed out waiting for ${label}`);
}

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 50));
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "rqakit-e2e-"));
  const dataDir = join(workdir, "runs");
  mkdirSync(dataDir, { recursive: true });

  const manifest = {
    components: [
      {
        type: "mock_qa",
        answer_prefix: "answer to: ",
        sources: [
          { passage_id: "s0", content: "passage zero content", source: "docs/zero" },
          { passage_id: "s1", content: "passage one content", source: "docs/one" },
        ],
      },
    ],
  };
  writeFileSync(join(workdir, "pipeline.json"), JSON.stringify(manifest));

  startPython(["serve", "--port", String(controllerPort), "--data-dir", dataDir]);
  await until(async () => (await fetch(`${base}/api/workers`)).ok, "controller");
  startPython([
    "worker",
    "--controller", base,
    "--port", String(workerPort),
    "--pipeline", join(workdir, "pipeline.json"),
    "--worker-id", "e2e-worker",
  ]);
  await until(async () => {
    const body = await (await fetch(`${base}/api/workers`)).json();
    return body.workers.length === 1;
  }, "worker registration");
  setBaseUrl(base);
}, 120000);

afterAll(() => {
  for (const child of processes) child.kill("SIGTERM");
});

describe("chat page against the live serving stack", () => {
  it("round-trips a question, renders sources, and persists a rating", async () => {
    const root = document.createElement("div");
    document.body.append(root);
    const page = createChatPage(root, "e2e-session");
    await flush();

    await page.send("what is in the docs?");
    await flush();

    const bubbles = root.querySelectorAll(".bubble");
    expect(bubbles).toHaveLength(2);
    expect(bubbles[1].querySelector(".text")?.textContent).toBe("answer to: what is in the docs?");

    const toggle = root.querySelector<HTMLButtonElement>(".sources-toggle")!;
    expect(toggle.textContent).toBe("2 sources");
    toggle.click();
    const chips = root.querySelectorAll(".source-chip");
    expect(chips).toHaveLength(2);
    expect(chips[0].textContent).toContain("passage zero content");

    // rate the assistant turn and confirm the server stored it
    root.querySelector<HTMLButtonElement>(".rate-correct")!.click();
    await until(async () => {
      const response = await fetch(`${base}/api/feedback?session_id=e2e-session&turn_index=1`);
      if (!response.ok) return false;
      return (await response.json()).correctness === "correct";
    }, "feedback persisted");

    // a reload (fresh page over the same session) shows the same transcript + rating
    const root2 = document.createElement("div");
    document.body.append(root2);
    const page2 = createChatPage(root2, "e2e-session");
    await until(async () => page2.messages().length === 2, "transcript restored");
    expect(page2.messages()[1].text).toBe("answer to: what is in the docs?");
    expect(page2.messages()[1].correctness).toBe("correct");
  });
});

describe("eval page against the live serving stack", () => {
  it("walks a 10-record run; the annotations file reproduces the accuracy", async () => {
    const records = Array.from({ length: 10 }, (_, i) => ({
      question: `question ${i}?`,
      gold_answer: `gold answer ${i}`,
      gold_passage_id: `p${i}`,
      retrieved_passage_ids: [`p${i}`, "px"],
      generated_answer: `model answer ${i}`,
      retrieval_time_ms: 1.0,
      generation_time_ms: 1.0,
    }));
    const runFile = join(workdir, "runs", "preds.jsonl");
    writeFileSync(runFile, records.map((r) => JSON.stringify(r)).join("\n") + "\n");

    const root = document.createElement("div");
    document.body.append(root);
    const page = createEvalPage(root);
    await page.load("preds.jsonl");
    expect(page.state().total).toBe(10);

    // grade 7 correct / 3 incorrect
    for (let i = 0; i < 10; i++) {
      expect(root.querySelector(".question p")?.textContent).toBe(`question ${i}?`);
      page.choose(i % 3 === 0 ? "incorrect" : "correct");
      page.setNotes(`note ${i}`);
      await page.submit();
    }
    expect(page.state().complete).toBe(true);
    expect(page.state().accuracyFraction).toBeCloseTo(6 / 10, 10);

    const annotations = readFileSync(`${runFile}.annotations.jsonl`, "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    expect(annotations).toHaveLength(10);
    const latest = new Map<number, { accuracy: string; notes: string }>();
    for (const a of annotations) latest.set(a.record_index, a);
    const correct = [...latest.values()].filter((a) => a.accuracy === "correct").length;
    expect(correct / latest.size).toBeCloseTo(page.state().accuracyFraction!, 10);
    expect(latest.get(4)?.notes).toBe("note 4");
  });
});
