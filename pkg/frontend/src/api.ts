/** Typed client for the session service's JSON API. */

export interface CatalogInfo {
  id: string;
  users: number;
  items: number;
  values: number;
  types: number;
  value_ids: number[];
  value_display: string[];
}

export interface CheckpointInfo {
  id: string;
  catalog_id: string;
  dim: number;
  [extra: string]: unknown;
}

export interface ActionView {
  kind: "ask" | "rec";
  payload: number[];
  display: string[];
}

export interface StateSummary {
  turn: number;
  status: "running" | "success" | "fail";
  candidate_items: number;
  candidate_values: number;
  accepted_values: number;
  rejected_values: number;
  rejected_items: number;
}

export interface TranscriptEntry {
  turn: number;
  kind: "ask" | "rec";
  payload: number[];
  accepted: number[];
  rejected: number[];
  reward: number;
}

export interface Diagnostics {
  pi: { ask: number; rec: number };
  q_max: { ask: number; rec: number };
}

export interface CreateSessionBody {
  catalog_id: string;
  checkpoint_id: string;
  user_id: number;
  seed_value?: number | null;
  target_items?: number[];
  simulated?: boolean;
  rng_seed?: number;
}

export interface TurnResult {
  reward: number;
  state: StateSummary;
  cumulative_reward: number;
  action?: ActionView;
  outcome?: "success" | "fail";
}

export interface SessionSnapshot {
  session_id: string;
  catalog_id: string;
  checkpoint_id: string;
  simulated: boolean;
  transcript: TranscriptEntry[];
  entity_names?: Record<string, string>;
  state: StateSummary;
  cumulative_reward: number;
  pending_action?: ActionView;
  diagnostics?: Diagnostics;
  outcome?: "success" | "fail";
}

export interface RespondBody {
  accepted_value_ids?: number[];
  accepted_item_id?: number | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.base + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        detail = body.detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  listCatalogs(): Promise<{ catalogs: CatalogInfo[] }> {
    return this.request("/catalogs");
  }

  listCheckpoints(): Promise<{ checkpoints: CheckpointInfo[] }> {
    return this.request("/checkpoints");
  }

  createSession(body: CreateSessionBody): Promise<{
    session_id: string;
    action: ActionView;
    state: StateSummary;
  }> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  respond(sessionId: string, body: RespondBody): Promise<TurnResult> {
    return this.request(`/sessions/${sessionId}/response`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request(`/sessions/${sessionId}`);
  }
}
