/** Session flow wiring: fetch, re-render, await the human's choice.
 *
 * The client holds no conversation state beyond the session id; every render
 * re-fetches the server's view, so a page reload reproduces the identical
 * screen. One request is in flight per session at a time.
 */

import {
  ApiClient,
  ApiError,
  CatalogInfo,
  CheckpointInfo,
  SessionSnapshot,
} from "./api.js";
import {
  renderActionWidget,
  renderCounters,
  renderDiagnostics,
  renderError,
  renderOutcomeBanner,
  renderTranscript,
} from "./render.js";

export interface AppElements {
  setup: HTMLElement;       // catalog/checkpoint/user/seed inputs + start button
  conversation: HTMLElement;
  widget: HTMLElement;      // at most one active response widget lives here
  panels: HTMLElement;
}

export class App {
  sessionId: string | null = null;
  names = new Map<number, string>();
  private busy = false;
  private catalogs: CatalogInfo[] = [];
  private checkpoints: CheckpointInfo[] = [];

  constructor(private api: ApiClient, private ui: AppElements) {}

  async loadDirectory(): Promise<void> {
    this.catalogs = (await this.api.listCatalogs()).catalogs;
    this.checkpoints = (await this.api.listCheckpoints()).checkpoints;
    for (const cat of this.catalogs) {
      cat.value_ids.forEach((id, i) => this.names.set(id, cat.value_display[i]));
    }
    this.renderSetup();
  }

  renderSetup(): void {
    const root = this.ui.setup;
    root.replaceChildren();
    const form = document.createElement("form");
    form.className = "setup-form";
    form.append(
      select("catalog", this.catalogs.map((c) => c.id)),
      select("checkpoint", this.checkpoints.map((c) => c.id)),
      labeled("user", numberInput("user", 0)),
      select("seed", ["auto", ...this.seedOptions()]),
      labeled("targets", textInput("targets", "")),
      checkbox("simulated", false),
    );
    const start = document.createElement("button");
    start.type = "submit";
    start.textContent = "Start conversation";
    start.className = "start";
    form.append(start);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.startSession(form);
    });
    root.append(form);
  }

  private seedOptions(): string[] {
    const cat = this.catalogs[0];
    if (!cat) return [];
    return cat.value_ids.map((id, i) => `${id}:${cat.value_display[i]}`);
  }

  async startSession(form: HTMLFormElement): Promise<void> {
    const data = new FormData(form);
    const seedRaw = String(data.get("seed") ?? "auto");
    const targetsRaw = String(data.get("targets") ?? "").trim();
    const body = {
      catalog_id: String(data.get("catalog")),
      checkpoint_id: String(data.get("checkpoint")),
      user_id: Number(data.get("user") ?? 0),
      seed_value: seedRaw === "auto" ? null : Number(seedRaw.split(":")[0]),
      target_items: targetsRaw
        ? targetsRaw.split(",").map((x) => Number(x.trim()))
        : [],
      simulated: data.get("simulated") === "on",
      rng_seed: 0,
    };
    await this.guard(async () => {
      const res = await this.api.createSession(body);
      this.sessionId = res.session_id;
      await this.refresh();
    });
  }

  /** Re-fetch the authoritative view and re-render everything. */
  async refresh(): Promise<void> {
    if (!this.sessionId) return;
    const snap = await this.api.getSession(this.sessionId);
    this.renderSnapshot(snap);
  }

  renderSnapshot(snap: SessionSnapshot): void {
    for (const [id, name] of Object.entries(snap.entity_names ?? {})) {
      this.names.set(Number(id), name);
    }
    this.ui.conversation.replaceChildren(renderTranscript(snap.transcript, this.names));
    this.ui.panels.replaceChildren(renderCounters(snap.state));
    if (snap.diagnostics) {
      this.ui.panels.append(renderDiagnostics(snap.diagnostics));
    }
    this.ui.widget.replaceChildren();
    if (snap.state.status === "running" && snap.pending_action) {
      this.ui.widget.append(
        renderActionWidget(snap.pending_action, {
          onAskSubmit: (ids) => void this.submit({ accepted_value_ids: ids }),
          onRecAccept: (id) => void this.submit({ accepted_item_id: id }),
          onRecRejectAll: () => void this.submit({ accepted_item_id: null }),
        }),
      );
    } else if (snap.outcome) {
      const lastHit = [...snap.transcript]
        .reverse()
        .find((t) => t.kind === "rec" && t.accepted.length > 0);
      const name = lastHit ? this.names.get(lastHit.accepted[0]) ?? `item ${lastHit.accepted[0]}` : null;
      this.ui.widget.append(
        renderOutcomeBanner(snap.outcome, name, snap.cumulative_reward),
      );
    }
  }

  async submit(body: { accepted_value_ids?: number[]; accepted_item_id?: number | null }): Promise<void> {
    if (!this.sessionId) return;
    await this.guard(async () => {
      await this.api.respond(this.sessionId!, body);
      await this.refresh();
    });
  }

  /** Serialize requests; render a retry banner on failure. */
  private async guard(fn: () => Promise<void>): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    try {
      await fn();
    } catch (err) {
      const message =
        err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
      this.ui.widget.replaceChildren(
        renderError(message, () => void this.refresh()),
      );
    } finally {
      this.busy = false;
    }
  }
}

function select(name: string, options: string[]): HTMLElement {
  const wrap = document.createElement("label");
  wrap.textContent = name + " ";
  const sel = document.createElement("select");
  sel.name = name;
  for (const opt of options) {
    const o = document.createElement("option");
    o.value = opt;
    o.textContent = opt;
    sel.append(o);
  }
  wrap.append(sel);
  return wrap;
}

function labeled(label: string, input: HTMLElement): HTMLElement {
  const wrap = document.createElement("label");
  wrap.textContent = label + " ";
  wrap.append(input);
  return wrap;
}

function numberInput(name: string, value: number): HTMLInputElement {
  const input = document.createElement("input");
  input.type = "number";
  input.name = name;
  input.value = String(value);
  return input;
}

function textInput(name: string, value: string): HTMLInputElement {
  const input = document.createElement("input");
  input.type = "text";
  input.name = name;
  input.value = value;
  input.placeholder = "item ids, comma separated";
  return input;
}

function checkbox(name: string, checked: boolean): HTMLElement {
  const wrap = document.createElement("label");
  const input = document.createElement("input");
  input.type = "checkbox";
  input.name = name;
  input.checked = checked;
  wrap.append(input, document.createTextNode(" " + name));
  return wrap;
}
