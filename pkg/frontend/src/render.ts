/** Pure DOM builders: no fetches, no state, just data to elements. */

import type {
  ActionView,
  Diagnostics,
  StateSummary,
  TranscriptEntry,
} from "./api.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function agentUtterance(action: ActionView): string {
  if (action.kind === "ask") {
    return `Do any of these fit? ${action.display.join(", ")}`;
  }
  return `How about: ${action.display.join(", ")}`;
}

export function userUtterance(entry: TranscriptEntry, names: Map<number, string>): string {
  const name = (id: number) => names.get(id) ?? `#${id}`;
  if (entry.kind === "ask") {
    const acc = entry.accepted.map(name).join(", ") || "none of those";
    const rej = entry.rejected.map(name).join(", ");
    return rej ? `Yes to: ${acc}. No to: ${rej}.` : `Yes to: ${acc}.`;
  }
  return entry.accepted.length
    ? `I'll take ${name(entry.accepted[0])}!`
    : "None of these, sorry.";
}

export function renderTranscript(
  entries: TranscriptEntry[],
  names: Map<number, string>,
): HTMLElement {
  const list = el("ol", "transcript");
  list.dataset.turns = String(entries.length);
  for (const entry of entries) {
    const li = el("li", `entry entry-${entry.kind}`);
    li.dataset.turn = String(entry.turn);
    li.dataset.kind = entry.kind;
    li.dataset.payload = entry.payload.join(",");
    li.dataset.accepted = entry.accepted.join(",");
    li.dataset.rejected = entry.rejected.join(",");
    li.dataset.reward = entry.reward.toFixed(4);
    const agent = el("div", "agent-line");
    agent.textContent = agentUtterance({
      kind: entry.kind,
      payload: entry.payload,
      display: entry.payload.map((id) => names.get(id) ?? `#${id}`),
    });
    const user = el("div", "user-line", userUtterance(entry, names));
    const reward = el("span", "reward", `reward ${entry.reward.toFixed(2)}`);
    li.append(agent, user, reward);
    list.append(li);
  }
  return list;
}

export interface WidgetHandlers {
  onAskSubmit(acceptedValueIds: number[]): void;
  onRecAccept(itemId: number): void;
  onRecRejectAll(): void;
}

/** The single active response widget for the pending action. */
export function renderActionWidget(
  action: ActionView,
  handlers: WidgetHandlers,
): HTMLElement {
  const box = el("div", "action-widget");
  box.dataset.kind = action.kind;
  box.append(el("p", "prompt", agentUtterance(action)));

  if (action.kind === "ask") {
    const form = el("form", "ask-form");
    const boxes: HTMLInputElement[] = [];
    action.payload.forEach((id, i) => {
      const label = el("label", "choice");
      const input = el("input");
      input.type = "checkbox";
      input.value = String(id);
      input.name = "value";
      boxes.push(input);
      label.append(input, document.createTextNode(" " + action.display[i]));
      form.append(label);
    });
    const submit = el("button", "submit", "Answer");
    submit.type = "submit";
    form.append(submit);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      handlers.onAskSubmit(boxes.filter((b) => b.checked).map((b) => Number(b.value)));
    });
    box.append(form);
  } else {
    const list = el("ul", "rec-list");
    action.payload.forEach((id, i) => {
      const li = el("li", "rec-item");
      li.append(el("span", "rec-name", action.display[i]), document.createTextNode(" "));
      const accept = el("button", "accept", "That one!");
      accept.addEventListener("click", () => handlers.onRecAccept(id));
      li.append(accept);
      list.append(li);
    });
    const reject = el("button", "reject-all", "None of these");
    reject.addEventListener("click", () => handlers.onRecRejectAll());
    box.append(list, reject);
  }
  return box;
}

export function renderOutcomeBanner(
  outcome: "success" | "fail",
  acceptedName: string | null,
  cumulativeReward: number,
): HTMLElement {
  const banner = el("div", `banner banner-${outcome}`);
  banner.dataset.outcome = outcome;
  banner.textContent =
    outcome === "success"
      ? `Deal: ${acceptedName ?? "accepted"} - cumulative reward ${cumulativeReward.toFixed(3)}`
      : `No luck this time - cumulative reward ${cumulativeReward.toFixed(3)}`;
  return banner;
}

/** Percentage pair for the action-type bars; always sums to exactly 100. */
export function piPercentages(pi: { ask: number; rec: number }): [number, number] {
  const ask = Math.round(pi.ask * 100);
  return [ask, 100 - ask];
}

export function renderDiagnostics(diag: Diagnostics): HTMLElement {
  const panel = el("div", "diagnostics");
  const [askPct, recPct] = piPercentages(diag.pi);
  const bars = el("div", "pi-bars");
  const askBar = el("div", "bar bar-ask", `ask ${askPct}%`);
  askBar.style.width = `${askPct}%`;
  askBar.dataset.pct = String(askPct);
  const recBar = el("div", "bar bar-rec", `rec ${recPct}%`);
  recBar.style.width = `${recPct}%`;
  recBar.dataset.pct = String(recPct);
  bars.append(askBar, recBar);
  const q = el(
    "div",
    "q-max",
    `q(ask) ${fmt(diag.q_max.ask)}  q(rec) ${fmt(diag.q_max.rec)}`,
  );
  panel.append(el("h3", undefined, "agent head"), bars, q);
  return panel;
}

function fmt(x: number): string {
  return Number.isFinite(x) ? x.toFixed(3) : "n/a";
}

export function renderCounters(state: StateSummary): HTMLElement {
  const panel = el("div", "counters");
  panel.dataset.candidateItems = String(state.candidate_items);
  panel.dataset.turn = String(state.turn);
  const rows: [string, number][] = [
    ["turn", state.turn],
    ["candidate items", state.candidate_items],
    ["candidate values", state.candidate_values],
    ["accepted values", state.accepted_values],
    ["rejected values", state.rejected_values],
    ["rejected items", state.rejected_items],
  ];
  const dl = el("dl");
  for (const [label, value] of rows) {
    dl.append(el("dt", undefined, label), el("dd", undefined, String(value)));
  }
  panel.append(el("h3", undefined, "conversation state"), dl);
  return panel;
}

export function renderError(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "banner banner-error");
  banner.append(el("span", undefined, message), document.createTextNode(" "));
  const retry = el("button", "retry", "Retry");
  retry.addEventListener("click", onRetry);
  banner.append(retry);
  return banner;
}
