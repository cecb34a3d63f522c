/** Typed client for the recommendation service.
 *
 * Guards re-check the form invariants so an invalid horizon or target can
 * never reach the network, and a small queue keeps at most one request in
 * flight: submitting while busy replaces any waiting query with the
 * newest one.
 */

import { TARGET_MAX, TARGET_MIN, TAU_VALUES } from "./state.js";
import type {
  HistoryWindow,
  ModelInfo,
  RecommendRequest,
  RecommendResponse,
} from "./types.js";

export class ApiFailure extends Error {
  constructor(
    readonly status: number | null,
    readonly detail: string,
  ) {
    super(detail);
  }
}

async function parseError(response: Response): Promise<ApiFailure> {
  let detail = `${response.status}`;
  try {
    const body = await response.json();
    if (typeof body.detail === "string") {
      detail = body.detail;
    }
  } catch {
    /* non-JSON error body; keep the status text */
  }
  return new ApiFailure(response.status, detail);
}

export class Client {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async get<T>(path: string): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`);
    } catch (err) {
      throw new ApiFailure(null, `network failure: ${String(err)}`);
    }
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  async models(): Promise<ModelInfo[]> {
    return this.get<ModelInfo[]>("/api/models");
  }

  async latestHistory(subjectId: string): Promise<HistoryWindow> {
    return this.get<HistoryWindow>(
      `/api/subjects/${encodeURIComponent(subjectId)}/latest-history`,
    );
  }

  async recommend(request: RecommendRequest): Promise<RecommendResponse> {
    if (!TAU_VALUES.includes(request.tau)) {
      throw new ApiFailure(null, `refusing to send invalid tau ${request.tau}`);
    }
    if (request.target_bgl < TARGET_MIN || request.target_bgl > TARGET_MAX) {
      throw new ApiFailure(
        null,
        `refusing to send out-of-range target ${request.target_bgl}`,
      );
    }
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/api/recommend`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      });
    } catch (err) {
      throw new ApiFailure(null, `network failure: ${String(err)}`);
    }
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as RecommendResponse;
  }
}

/** Serializes async work; a newer submission replaces any queued one. */
export class SingleFlight {
  private busy = false;
  private queuedRun: (() => void) | null = null;
  private queuedDisplace: (() => void) | null = null;

  /**
   * Run `task` now if idle; otherwise queue it behind the in-flight one,
   * displacing any task already waiting (the freshest query wins). The
   * returned promise resolves with the task's outcome, or `null` if a
   * newer submission displaced it before it could run.
   */
  submit<T>(task: () => Promise<T>): Promise<T | null> {
    return new Promise((resolve, reject) => {
      const run = () => {
        this.busy = true;
        task().then(
          (value) => this.finish(() => resolve(value)),
          (err) => this.finish(() => reject(err)),
        );
      };
      if (!this.busy) {
        run();
      } else {
        this.queuedDisplace?.();
        this.queuedRun = run;
        this.queuedDisplace = () => resolve(null);
      }
    });
  }

  /** Start the queued task (if any) before delivering the finished result. */
  private finish(deliver: () => void): void {
    this.busy = false;
    const next = this.queuedRun;
    this.queuedRun = null;
    this.queuedDisplace = null;
    if (next) {
      next();
    }
    deliver();
  }

  get inFlight(): boolean {
    return this.busy;
  }
}
