/** Interactive chat page: ask, read sources, rate each answer. */

import * as api from "./api.js";

export interface MessageState {
  role: "user" | "assistant";
  text: string;
  turnIndex: number;
  sources: api.Source[];
  correctness: "correct" | "incorrect" | "unrated";
  helpfulness: number | "unrated";
}

export interface ChatController {
  send(question: string): Promise<void>;
  messages(): MessageState[];
  pending(): boolean;
  root: HTMLElement;
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

export function createChatPage(root: HTMLElement, sessionId: string): ChatController {
  const messages: MessageState[] = [];
  let inFlight = false;

  root.textContent = "";
  const banner = el("div", "banner");
  banner.hidden = true;
  const list = el("div", "messages");
  list.setAttribute("role", "log");
  const form = el("form", "composer");
  const input = el("input", "question-input");
  input.type = "text";
  input.placeholder = "Ask a question…";
  input.setAttribute("aria-label", "question");
  const sendButton = el("button", "send", "Send");
  sendButton.type = "submit";
  form.append(input, sendButton);
  root.append(banner, list, form);

  function showBanner(text: string, retry?: () => void): void {
    banner.textContent = "";
    banner.hidden = false;
    banner.append(el("span", "banner-text", text));
    if (retry) {
      const button = el("button", "retry", "Retry");
      button.type = "button";
      button.onclick = () => {
        banner.hidden = true;
        retry();
      };
      banner.append(button);
    }
  }

  function renderRating(bubble: HTMLElement, message: MessageState): void {
    let controls = bubble.querySelector<HTMLElement>(".rating");
    if (!controls) {
      controls = el("div", "rating");
      bubble.append(controls);
    }
    controls.textContent = "";

    const mark = (value: "correct" | "incorrect") => {
      const button = el(
        "button",
        `rate-${value}${message.correctness === value ? " active" : ""}`,
        value === "correct" ? "✓ correct" : "✗ incorrect",
      );
      button.type = "button";
      button.setAttribute("aria-pressed", String(message.correctness === value));
      button.onclick = () => {
        const previous = message.correctness;
        message.correctness = value; // optimistic
        renderRating(bubble, message);
        api
          .sendFeedback(sessionId, message.turnIndex, {
            correctness: value,
            ...(message.helpfulness !== "unrated" ? { helpfulness: message.helpfulness } : {}),
          })
          .catch((error) => {
            message.correctness = previous; // rollback
            renderRating(bubble, message);
            showBanner(`Rating failed: ${error.message}`);
          });
      };
      return button;
    };
    controls.append(mark("correct"), mark("incorrect"));

    const help = el("select", "helpfulness") as HTMLSelectElement;
    help.setAttribute("aria-label", "helpfulness 1-5");
    const blank = el("option", undefined, "helpfulness…");
    blank.setAttribute("value", "");
    help.append(blank);
    for (let score = 1; score <= 5; score++) {
      const option = el("option", undefined, `${score}`);
      option.setAttribute("value", String(score));
      help.append(option);
    }
    if (message.helpfulness !== "unrated") help.value = String(message.helpfulness);
    help.onchange = () => {
      const previous = message.helpfulness;
      const value = Number(help.value);
      if (!value) return;
      message.helpfulness = value; // optimistic
      api
        .sendFeedback(sessionId, message.turnIndex, {
          helpfulness: value,
          ...(message.correctness !== "unrated" ? { correctness: message.correctness } : {}),
        })
        .catch((error) => {
          message.helpfulness = previous;
          help.value = previous === "unrated" ? "" : String(previous);
          showBanner(`Rating failed: ${error.message}`);
        });
    };
    controls.append(help);
  }

  function renderMessage(message: MessageState): void {
    const bubble = el("div", `bubble ${message.role}`);
    bubble.append(el("p", "text", message.text));
    if (message.role === "assistant") {
      if (message.sources.length) {
        const toggle = el("button", "sources-toggle", `${message.sources.length} sources`);
        toggle.type = "button";
        toggle.setAttribute("aria-expanded", "false");
        const panel = el("div", "sources");
        panel.hidden = true; // collapsed by default
        for (const source of message.sources) {
          const chip = el("div", "source-chip");
          chip.append(el("strong", undefined, source.passage_id));
          chip.append(el("span", "source-origin", ` ${source.source}`));
          chip.append(el("p", "source-content", source.content));
          panel.append(chip);
        }
        toggle.onclick = () => {
          panel.hidden = !panel.hidden;
          toggle.setAttribute("aria-expanded", String(!panel.hidden));
        };
        bubble.append(toggle, panel);
      }
      renderRating(bubble, message);
    }
    list.append(bubble);
  }

  async function send(question: string): Promise<void> {
    question = question.trim();
    if (!question || inFlight) return; // one in-flight request per session
    inFlight = true;
    sendButton.disabled = true;
    input.disabled = true;
    banner.hidden = true;
    try {
      const response = await api.chat(sessionId, question);
      const user: MessageState = {
        role: "user", text: question, turnIndex: response.turn_index - 1,
        sources: [], correctness: "unrated", helpfulness: "unrated",
      };
      const assistant: MessageState = {
        role: "assistant", text: response.answer, turnIndex: response.turn_index,
        sources: response.sources, correctness: "unrated", helpfulness: "unrated",
      };
      messages.push(user, assistant);
      renderMessage(user);
      renderMessage(assistant);
      input.value = ""; // only cleared on success
    } catch (error) {
      const status = error instanceof api.ApiError ? error.status : 0;
      const note = status === 503 || status === 504
        ? "The backend is busy or a worker timed out."
        : "Request failed.";
      showBanner(`${note} Your question was kept in the input box.`, () => void send(question));
    } finally {
      inFlight = false;
      sendButton.disabled = false;
      input.disabled = false;
    }
  }

  form.onsubmit = (event) => {
    event.preventDefault();
    void send(input.value);
  };

  // restore an existing transcript (and latest ratings) after a reload
  void api
    .getSession(sessionId)
    .then((view) => {
      const turns = view.session.turns;
      for (let i = 0; i < turns.length; i++) {
        const turn = turns[i];
        const message: MessageState = {
          role: turn.role, text: turn.text, turnIndex: i, sources: [],
          correctness: "unrated", helpfulness: "unrated",
        };
        const feedback = view.feedback[String(i)];
        if (feedback) {
          message.correctness = feedback.correctness;
          message.helpfulness = feedback.helpfulness;
        }
        messages.push(message);
        renderMessage(message);
      }
    })
    .catch(() => undefined); // a fresh session does not exist server-side yet

  return { send, messages: () => messages, pending: () => inFlight, root };
}
