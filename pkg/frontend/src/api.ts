/** Typed client for the preference-collection service. */

export interface SessionInfo {
  session_id: string;
  battery_len: number;
  cursor: number;
}

export interface QueryView {
  query_id: string;
  index: number;
  total: number;
  m: number;
  links: number[];
  start: number[];
  target: { kind: string; value: number[] };
  candidates: number[][];
  criteria: string[];
}

export type Choices = Record<string, number>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private url(path: string): string {
    return this.baseUrl + path;
  }

  async newSession(): Promise<SessionInfo> {
    const response = await fetch(this.url("/api/session"));
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return response.json();
  }

  /** Next unanswered query, or null once the battery is exhausted. */
  async nextQuery(sessionId: string): Promise<QueryView | null> {
    const response = await fetch(this.url(`/api/queries/${sessionId}`));
    if (response.status === 204) return null;
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return response.json();
  }

  async submitAnswers(
    sessionId: string,
    queryId: string,
    choices: Choices,
  ): Promise<{ ok: boolean; cursor: number }> {
    const response = await fetch(this.url("/api/answers"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, query_id: queryId, choices }),
    });
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return response.json();
  }
}
