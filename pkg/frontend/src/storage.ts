/** Local persistence so a refresh mid-query keeps session and selections. */

const SESSION_KEY = "cspace-session";

export function savedSession(): string | null {
  return localStorage.getItem(SESSION_KEY);
}

export function rememberSession(sessionId: string): void {
  localStorage.setItem(SESSION_KEY, sessionId);
}

export function forgetSession(): void {
  localStorage.removeItem(SESSION_KEY);
}

function selectionKey(sessionId: string, queryId: string): string {
  return `cspace-selection:${sessionId}:${queryId}`;
}

export function saveSelections(
  sessionId: string,
  queryId: string,
  choices: Record<string, number>,
): void {
  localStorage.setItem(selectionKey(sessionId, queryId), JSON.stringify(choices));
}

export function loadSelections(
  sessionId: string,
  queryId: string,
): Record<string, number> {
  const raw = localStorage.getItem(selectionKey(sessionId, queryId));
  if (!raw) return {};
  try {
    return JSON.parse(raw);
  } catch {
    return {};
  }
}

export function clearSelections(sessionId: string, queryId: string): void {
  localStorage.removeItem(selectionKey(sessionId, queryId));
}
