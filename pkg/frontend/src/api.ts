/**
 * Typed client for the review HTTP API.
 *
 * Every assessor-facing payload is parsed through a schema that keeps only
 * the blinded fields, so a hidden label can never travel past this module
 * even if a server were to leak one. Export and kappa payloads are the only
 * schemas that know the hidden fields exist.
 */

import { z } from "zod";

// z.object strips unknown keys on parse; that default is the blinding
// boundary and must not be replaced with a passthrough/loose object.
export const blindedItemSchema = z.object({
  pair_id: z.string().min(1),
  query: z.string(),
  negative_text: z.string(),
});

export const nextItemSchema = z.object({
  item: blindedItemSchema.nullable(),
  remaining: z.number().int().nonnegative(),
});

export const judgmentResultSchema = z.object({
  pair_id: z.string(),
  status: z.enum(["pending", "disagreed", "adjudicated", "done"]),
});

export const disagreedItemSchema = blindedItemSchema.extend({
  judgments: z.record(z.string(), z.boolean()),
});

export const progressSchema = z.object({
  session_id: z.string(),
  total: z.number().int().nonnegative(),
  counts: z.object({
    pending: z.number().int().nonnegative(),
    disagreed: z.number().int().nonnegative(),
    adjudicated: z.number().int().nonnegative(),
    done: z.number().int().nonnegative(),
  }),
  judged_by: z.record(z.string(), z.number().int().nonnegative()),
  complete: z.boolean(),
});

export const sessionSummarySchema = z.object({
  session_id: z.string(),
  name: z.string(),
  n_items: z.number().int().nonnegative(),
  assessors: z.array(z.string()),
  complete: z.boolean(),
});

export const exportRowSchema = z.object({
  pair_id: z.string(),
  query: z.string(),
  negative_text: z.string(),
  llm_label: z.boolean(),
  judge_tag: z.string(),
  judgments: z.record(z.string(), z.boolean()),
  final_label: z.boolean(),
  status: z.enum(["adjudicated", "done"]),
});

export const kappaReportSchema = z.record(
  z.string(),
  z.object({ kappa: z.number(), n_items: z.number().int().nonnegative() }),
);

export type BlindedItem = z.infer<typeof blindedItemSchema>;
export type NextItem = z.infer<typeof nextItemSchema>;
export type JudgmentResult = z.infer<typeof judgmentResultSchema>;
export type DisagreedItem = z.infer<typeof disagreedItemSchema>;
export type Progress = z.infer<typeof progressSchema>;
export type SessionSummary = z.infer<typeof sessionSummarySchema>;
export type ExportRow = z.infer<typeof exportRowSchema>;
export type KappaReport = z.infer<typeof kappaReportSchema>;

export interface ItemUpload {
  pair_id: string;
  query: string;
  negative_text: string;
  llm_label: boolean;
  judge_tag?: string;
}

/** The request never reached the server or produced no HTTP response. */
export class TransportError extends Error {
  constructor(message: string, readonly cause?: unknown) {
    super(message);
    this.name = "TransportError";
  }
}

/** The server answered with an error status. */
export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

/** 409: the write raced another one (for example, a repeated judgment). */
export class ConflictError extends ApiError {
  constructor(detail: string) {
    super(409, detail);
    this.name = "ConflictError";
  }
}

export type FetchLike = (
  input: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<Response>;

export class ReviewClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (cause) {
      throw new TransportError(`request to ${path} failed`, cause);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const parsed = (await response.json()) as { detail?: unknown };
        if (typeof parsed.detail === "string") detail = parsed.detail;
      } catch {
        // non-JSON error body; the status line is all we have
      }
      if (response.status === 409) throw new ConflictError(detail);
      throw new ApiError(response.status, detail);
    }
    return response.json();
  }

  async createSession(
    items: ItemUpload[],
    name = "",
    assessors: string[] = ["A", "B"],
  ): Promise<string> {
    const raw = await this.request("POST", "/sessions", { name, items, assessors });
    return z.object({ session_id: z.string() }).parse(raw).session_id;
  }

  async listSessions(): Promise<SessionSummary[]> {
    const raw = await this.request("GET", "/sessions");
    return z.object({ sessions: z.array(sessionSummarySchema) }).parse(raw).sessions;
  }

  async nextItem(sessionId: string, assessor: string): Promise<NextItem> {
    const raw = await this.request(
      "GET",
      `/sessions/${sessionId}/next?assessor=${encodeURIComponent(assessor)}`,
    );
    return nextItemSchema.parse(raw);
  }

  async postJudgment(
    sessionId: string,
    pairId: string,
    assessor: string,
    label: boolean,
  ): Promise<JudgmentResult> {
    const raw = await this.request("POST", `/sessions/${sessionId}/judgments`, {
      pair_id: pairId,
      assessor,
      label,
    });
    return judgmentResultSchema.parse(raw);
  }

  async disagreements(sessionId: string): Promise<DisagreedItem[]> {
    const raw = await this.request("GET", `/sessions/${sessionId}/disagreements`);
    return z.object({ items: z.array(disagreedItemSchema) }).parse(raw).items;
  }

  async postAdjudication(
    sessionId: string,
    pairId: string,
    label: boolean,
  ): Promise<JudgmentResult> {
    const raw = await this.request("POST", `/sessions/${sessionId}/adjudications`, {
      pair_id: pairId,
      label,
    });
    return judgmentResultSchema.parse(raw);
  }

  async progress(sessionId: string): Promise<Progress> {
    const raw = await this.request("GET", `/sessions/${sessionId}/progress`);
    return progressSchema.parse(raw);
  }

  async exportSession(sessionId: string): Promise<ExportRow[]> {
    const raw = await this.request("GET", `/sessions/${sessionId}/export`);
    return z.object({ items: z.array(exportRowSchema) }).parse(raw).items;
  }

  async kappa(sessionId: string): Promise<KappaReport> {
    const raw = await this.request("GET", `/sessions/${sessionId}/kappa`);
    return z.object({ report: kappaReportSchema }).parse(raw).report;
  }
}
