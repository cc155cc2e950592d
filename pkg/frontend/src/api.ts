// Thin fetch wrapper around the annotation service.
//
// Server-side rejections arrive as {error, message} JSON with a 4xx/5xx
// status and surface as ApiError; anything else a fetch can throw (refused
// connection, DNS, abort) propagates untouched so callers can treat it as
// a transport failure rather than a verdict.

import type {
  HintRequestBody,
  HintResponse,
  PatchPayload,
  SessionInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function toApiError(res: Response): Promise<ApiError> {
  let code = "internal-error";
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (typeof body.error === "string") {
      code = body.error;
      message = typeof body.message === "string" ? body.message : message;
    } else if (body.detail !== undefined) {
      // Request-shape validation speaks a different dialect (422 + detail).
      code = "invalid-argument";
      message = JSON.stringify(body.detail);
    }
  } catch {
    // Non-JSON error body; keep the status line.
  }
  return new ApiError(code, res.status, message);
}

export class ApiClient {
  constructor(
    private readonly base = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const f = this.fetchFn;
    const res = await f(this.base + path, init);
    if (!res.ok) throw await toApiError(res);
    return (await res.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  listMirrors(): Promise<{ mirrors: string[] }> {
    return this.request("/v1/mirrors");
  }

  createSession(mirrorId: string): Promise<SessionInfo> {
    return this.post("/v1/session", { mirror_id: mirrorId });
  }

  getPatch(sessionId: string, k: number): Promise<PatchPayload> {
    return this.request(`/v1/session/${sessionId}/patch/${k}`);
  }

  postHint(sessionId: string, body: HintRequestBody): Promise<HintResponse> {
    return this.post(`/v1/session/${sessionId}/hint`, body);
  }

  undo(sessionId: string): Promise<PatchPayload> {
    return this.post(`/v1/session/${sessionId}/undo`, {});
  }

  async report(sessionId: string): Promise<string> {
    const f = this.fetchFn;
    const res = await f(`${this.base}/v1/session/${sessionId}/report`);
    if (!res.ok) throw await toApiError(res);
    return res.text();
  }
}
