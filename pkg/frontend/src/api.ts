/** Typed client for the controller's JSON API. */

let baseUrl = "";

/** Point the client at a server (tests); empty string = same origin. */
export function setBaseUrl(url: string): void {
  baseUrl = url.replace(/\/$/, "");
}

export interface Source {
  passage_id: string;
  content: string;
  source: string;
}

export interface ChatResponse {
  session_id: string;
  answer: string;
  sources: Source[];
  turn_index: number;
  worker_id?: string;
}

export interface Turn {
  role: "user" | "assistant";
  text: string;
  ts: number;
}

export interface SessionView {
  session: { session_id: string; turns: Turn[] };
  feedback: Record<string, FeedbackRecord>;
}

export interface FeedbackRecord {
  session_id: string;
  turn_index: number;
  correctness: "correct" | "incorrect" | "unrated";
  helpfulness: number | "unrated";
}

export interface PredictionRecord {
  question: string;
  gold_answer: string;
  gold_passage_id: string;
  retrieved_passage_ids: string[];
  generated_answer: string;
}

export interface EvalItem {
  record: PredictionRecord | null;
  cursor: number;
  total: number;
  annotated: number;
  complete: boolean;
}

export interface AnnotateResponse {
  ok: boolean;
  complete: boolean;
  annotated: number;
  accuracy_fraction?: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(`${baseUrl}${path}`, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  if (!response.ok) {
    const body = await response.text().catch(() => "");
    throw new ApiError(response.status, body || response.statusText);
  }
  return (await response.json()) as T;
}

export function chat(sessionId: string, question: string): Promise<ChatResponse> {
  return request<ChatResponse>("/api/chat", {
    method: "POST",
    body: JSON.stringify({ session_id: sessionId, question }),
  });
}

export function getSession(sessionId: string): Promise<SessionView> {
  return request<SessionView>(`/api/session?session_id=${encodeURIComponent(sessionId)}`);
}

export function sendFeedback(
  sessionId: string,
  turnIndex: number,
  rating: { correctness?: string; helpfulness?: number },
): Promise<{ ok: boolean }> {
  return request<{ ok: boolean }>("/api/feedback", {
    method: "POST",
    body: JSON.stringify({ session_id: sessionId, turn_index: turnIndex, ...rating }),
  });
}

export function getEvalItem(file: string, cursor?: number): Promise<EvalItem> {
  const query = cursor === undefined ? "" : `&cursor=${cursor}`;
  return request<EvalItem>(`/api/eval/items?file=${encodeURIComponent(file)}${query}`);
}

export function annotate(
  file: string,
  recordIndex: number,
  accuracy: "correct" | "incorrect",
  notes: string,
): Promise<AnnotateResponse> {
  return request<AnnotateResponse>("/api/eval/annotate", {
    method: "POST",
    body: JSON.stringify({ file, record_index: recordIndex, accuracy, notes }),
  });
}
