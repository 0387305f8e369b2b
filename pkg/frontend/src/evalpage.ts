/** Static evaluation page: walk a prediction run, grade each answer. */

import * as api from "./api.js";

export interface EvalController {
  load(file: string): Promise<void>;
  choose(verdict: "correct" | "incorrect"): void;
  setNotes(text: string): void;
  submit(): Promise<void>;
  state(): EvalState;
  root: HTMLElement;
}

export interface EvalState {
  file: string;
  cursor: number;
  total: number;
  verdict: "correct" | "incorrect" | null;
  complete: boolean;
  accuracyFraction: number | null;
  blocked: boolean;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function createEvalPage(root: HTMLElement, defaultFile = "predictions.jsonl"): EvalController {
  const state: EvalState = {
    file: defaultFile, cursor: 0, total: 0, verdict: null,
    complete: false, accuracyFraction: null, blocked: false,
  };
  let record: api.PredictionRecord | null = null;

  root.textContent = "";
  const banner = el("div", "banner");
  banner.hidden = true;

  const picker = el("form", "run-picker");
  const fileInput = el("input", "run-file");
  fileInput.type = "text";
  fileInput.value = defaultFile;
  fileInput.setAttribute("aria-label", "prediction run file");
  const loadButton = el("button", "load", "Load run");
  loadButton.type = "submit";
  picker.append(fileInput, loadButton);

  const progress = el("div", "progress");
  const card = el("div", "record-card");
  const controls = el("div", "verdict-controls");
  const correctButton = el("button", "verdict-correct", "1 · correct");
  correctButton.type = "button";
  const incorrectButton = el("button", "verdict-incorrect", "2 · incorrect");
  incorrectButton.type = "button";
  const notes = el("textarea", "notes") as HTMLTextAreaElement;
  notes.placeholder = "notes (optional)";
  notes.setAttribute("aria-label", "notes");
  const submitButton = el("button", "submit", "Submit · Enter");
  submitButton.type = "button";
  submitButton.disabled = true; // until a verdict is chosen
  controls.append(correctButton, incorrectButton, notes, submitButton);

  root.append(banner, picker, progress, card, controls);

  function showBanner(text: string): void {
    banner.hidden = false;
    banner.textContent = text;
  }

  function renderProgress(): void {
    progress.textContent = state.total
      ? `item ${Math.min(state.cursor + 1, state.total)} of ${state.total}`
      : "no run loaded";
  }

  function renderRecord(): void {
    card.textContent = "";
    if (state.complete) {
      card.append(el("h2", undefined, "Run complete"));
      if (state.accuracyFraction !== null) {
        card.append(
          el("p", "accuracy", `accuracy: ${(state.accuracyFraction * 100).toFixed(1)}% ` +
            `(${Math.round(state.accuracyFraction * state.total)}/${state.total} correct)`),
        );
      }
      controls.hidden = true;
      return;
    }
    controls.hidden = false;
    if (!record) return;
    const section = (label: string, text: string, className: string) => {
      const block = el("section", className);
      block.append(el("h3", undefined, label), el("p", undefined, text));
      return block;
    };
    card.append(
      section("Question", record.question, "question"),
      section("Reference answer", record.gold_answer, "gold-answer"),
      section("Model answer", record.generated_answer, "model-answer"),
      section("Retrieved passages", record.retrieved_passage_ids.join(", "), "retrieved"),
    );
  }

  function renderVerdict(): void {
    correctButton.classList.toggle("active", state.verdict === "correct");
    incorrectButton.classList.toggle("active", state.verdict === "incorrect");
    correctButton.setAttribute("aria-pressed", String(state.verdict === "correct"));
    incorrectButton.setAttribute("aria-pressed", String(state.verdict === "incorrect"));
    submitButton.disabled = state.verdict === null;
  }

  async function fetchItem(cursor?: number): Promise<void> {
    const item = await api.getEvalItem(state.file, cursor);
    state.cursor = item.cursor;
    state.total = item.total;
    state.complete = item.complete;
    record = item.record;
    state.verdict = null;
    notes.value = "";
    renderProgress();
    renderRecord();
    renderVerdict();
  }

  async function load(file: string): Promise<void> {
    state.file = file;
    state.accuracyFraction = null;
    banner.hidden = true;
    try {
      await fetchItem(); // no cursor: the server resumes from known progress
    } catch (error) {
      showBanner(`Could not load run: ${(error as Error).message}`);
    }
  }

  function choose(verdict: "correct" | "incorrect"): void {
    if (state.complete || !record) return;
    state.verdict = verdict;
    renderVerdict();
  }

  async function submit(): Promise<void> {
    if (state.verdict === null || state.complete || state.blocked) return;
    state.blocked = true;
    submitButton.disabled = true;
    try {
      const result = await api.annotate(state.file, state.cursor, state.verdict, notes.value);
      state.blocked = false;
      banner.hidden = true;
      if (result.complete) {
        state.complete = true;
        state.accuracyFraction = result.accuracy_fraction ?? null;
        state.cursor = state.total;
        renderProgress();
        renderRecord();
      } else {
        await fetchItem(state.cursor + 1);
      }
    } catch (error) {
      // navigation stays blocked on this item until the retry succeeds
      state.blocked = false;
      submitButton.disabled = false;
      showBanner(`Saving the verdict failed — retry. (${(error as Error).message})`);
    }
  }

  picker.onsubmit = (event) => {
    event.preventDefault();
    void load(fileInput.value.trim());
  };
  correctButton.onclick = () => choose("correct");
  incorrectButton.onclick = () => choose("incorrect");
  submitButton.onclick = () => void submit();
  root.addEventListener("keydown", (event) => {
    if (event.target === notes || event.target === fileInput) return;
    if (event.key === "1") choose("correct");
    else if (event.key === "2") choose("incorrect");
    else if (event.key === "Enter") void submit();
  });

  renderProgress();
  renderVerdict();
  return {
    load,
    choose,
    setNotes: (text) => {
      notes.value = text;
    },
    submit,
    state: () => ({ ...state }),
    root,
  };
}
