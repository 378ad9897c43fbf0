/** Typed client for the Turing test service. Same-origin by default; an
 * explicit base URL is injected in tests. Network failures retry with
 * backoff; HTTP errors carry the status so the app can resync on 409. */

export interface NextActive {
  status: "active";
  item_id: string;
  index: number;
  total: number;
  answered: number;
  overlay: boolean;
  image_url: string;
}

export interface NextComplete {
  status: "complete";
  answered: number;
  total: number;
}

export type NextItem = NextActive | NextComplete;

export interface SubmitAck {
  accepted: boolean;
  answered: number;
  total: number;
  status: "active" | "complete";
}

export interface RocData {
  points: [number, number][];
  auc: number;
}

export interface StratumAccuracy {
  n: number;
  correct: number;
  accuracy: number | null;
}

export interface StudyResult {
  session_id: string;
  n_items: number;
  n_answered: number;
  accuracy: number;
  radius_threshold_mm: number;
  stratified_accuracy: { small: StratumAccuracy; large: StratumAccuracy };
  roc: RocData | null;
}

export class HttpError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

const RETRIES = 3;

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  let lastNetworkError: unknown = null;
  for (let attempt = 0; attempt < RETRIES; attempt++) {
    let response: Response;
    try {
      response = await fetch(base + path, init);
    } catch (err) {
      lastNetworkError = err; // offline or connection reset: retry
      await new Promise((r) => setTimeout(r, 150 * (attempt + 1)));
      continue;
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      } catch {
        /* non-JSON error body */
      }
      throw new HttpError(response.status, detail);
    }
    return (await response.json()) as T;
  }
  throw lastNetworkError instanceof Error ? lastNetworkError : new Error("network failure");
}

export class ApiClient {
  constructor(public readonly base: string = "") {}

  createSession(body: {
    real_manifest: string;
    synth_manifest: string;
    n_per_class: number;
    seed: number;
    overlay?: boolean;
  }): Promise<{ session_id: string; total: number }> {
    return request(this.base, "/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  nextItem(sessionId: string): Promise<NextItem> {
    return request(this.base, `/sessions/${sessionId}/next`);
  }

  submitResponse(
    sessionId: string,
    body: { item_id: string; judgment: string; confidence: number; elapsed_ms: number },
  ): Promise<SubmitAck> {
    return request(this.base, `/sessions/${sessionId}/responses`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  results(sessionId: string): Promise<StudyResult> {
    return request(this.base, `/sessions/${sessionId}/results`);
  }

  imageUrl(imagePath: string, overlay: boolean | null): string {
    const suffix = overlay === null ? "" : `?overlay=${overlay}`;
    return this.base + imagePath + suffix;
  }
}
