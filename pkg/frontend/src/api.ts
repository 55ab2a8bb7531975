/**
 * Typed client for the boxsplit inference server.
 *
 * Boxes travel as 15-float arrays (center, sides, row-major orientation).
 * The fetch implementation is injectable so tests can count requests.
 */

export interface SessionSummary {
  id: string;
  family: string;
  seed: number;
  revision: number;
  history_depth: number;
  boxes: number[][];
}

export interface PivotSuggestion {
  index: number;
  probabilities: number[];
  revision: number;
}

export type SamplerName = "conditional" | "inpaint" | "token";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

function assertSummary(body: unknown): SessionSummary {
  const s = body as SessionSummary;
  if (
    typeof s !== "object" || s === null ||
    typeof s.id !== "string" ||
    typeof s.revision !== "number" ||
    !Array.isArray(s.boxes) ||
    s.boxes.some((b) => !Array.isArray(b) || b.length !== 15 || b.some((x) => typeof x !== "number"))
  ) {
    throw new ApiError(0, "malformed-payload", "server payload is not a session summary");
  }
  return s;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await res.text();
    let parsed: unknown = undefined;
    try {
      parsed = text ? JSON.parse(text) : undefined;
    } catch {
      if (res.ok) throw new ApiError(res.status, "malformed-payload", "response is not JSON");
    }
    if (!res.ok) {
      const err = parsed as { code?: string; message?: string } | undefined;
      throw new ApiError(res.status, err?.code ?? "http-error", err?.message ?? `HTTP ${res.status}`);
    }
    return parsed;
  }

  async createSession(family: string, seed: number): Promise<SessionSummary> {
    return assertSummary(await this.request("POST", "/v1/sessions", { family, seed }));
  }

  async getSession(id: string): Promise<SessionSummary> {
    return assertSummary(await this.request("GET", `/v1/sessions/${id}`));
  }

  async suggestPivot(id: string): Promise<PivotSuggestion> {
    const body = (await this.request("POST", `/v1/sessions/${id}/suggest-pivot`)) as PivotSuggestion;
    if (typeof body.index !== "number" || !Array.isArray(body.probabilities)) {
      throw new ApiError(0, "malformed-payload", "bad suggestion payload");
    }
    return body;
  }

  async split(id: string, pivot: number, sampler: SamplerName, revision?: number): Promise<SessionSummary> {
    return assertSummary(
      await this.request("POST", `/v1/sessions/${id}/split`, { pivot, sampler, revision }),
    );
  }

  async updateBox(id: string, leaf: number, params: number[], revision?: number): Promise<SessionSummary> {
    return assertSummary(
      await this.request("PATCH", `/v1/sessions/${id}/boxes/${leaf}`, { params, revision }),
    );
  }

  async undo(id: string, revision?: number): Promise<SessionSummary> {
    return assertSummary(await this.request("POST", `/v1/sessions/${id}/undo`, { revision }));
  }

  async tree(id: string): Promise<string> {
    const res = await this.fetchImpl(`${this.baseUrl}/v1/sessions/${id}/tree`, { method: "GET" });
    if (!res.ok) throw new ApiError(res.status, "http-error", `HTTP ${res.status}`);
    return res.text();
  }
}
