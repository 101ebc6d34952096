// DOM rendering: canvas timeline lanes, proposal cards, state panel.

import { SessionClient } from "./client";
import { downsample } from "./downsample";
import { LANES, ProposalCard, SessionStore } from "./store";

const LANE_HEIGHT = 56;
const STALE_TIMEOUT_MS = 2000;

export class ConsoleView {
  private laneCanvases = new Map<string, HTMLCanvasElement>();
  private cardsBox: HTMLElement;
  private statusBox: HTMLElement;
  private contextBox: HTMLElement;
  private windowS = 120; // visible session window

  constructor(private root: HTMLElement, private client: SessionClient) {
    root.innerHTML = "";
    this.statusBox = el("div", "status");
    root.appendChild(this.statusBox);
    const lanesBox = el("div", "lanes");
    for (const lane of LANES) {
      const row = el("div", "lane-row");
      const label = el("span", "lane-label");
      label.textContent = lane;
      const canvas = document.createElement("canvas");
      canvas.width = 800;
      canvas.height = LANE_HEIGHT;
      this.laneCanvases.set(lane, canvas);
      row.appendChild(label);
      row.appendChild(canvas);
      lanesBox.appendChild(row);
    }
    root.appendChild(lanesBox);
    this.contextBox = el("div", "context");
    root.appendChild(this.contextBox);
    this.cardsBox = el("div", "cards");
    root.appendChild(this.cardsBox);
    this.buildControls();
  }

  private buildControls(): void {
    const controls = el("div", "controls");
    const weight = document.createElement("input");
    weight.type = "number";
    weight.step = "0.1";
    weight.value = "1.0";
    const modality = document.createElement("select");
    for (const m of ["verbal", "prosody", "gesture", "arousal"]) {
      const opt = document.createElement("option");
      opt.value = m;
      opt.textContent = m;
      modality.appendChild(opt);
    }
    const apply = document.createElement("button");
    apply.textContent = "set weight";
    const note = el("span", "validation-note");
    apply.onclick = async () => {
      const reply = await this.client.setWeight(modality.value,
                                                Number(weight.value));
      note.textContent = reply.ok ? "" : reply.error ?? "rejected";
    };
    const tension = document.createElement("button");
    tension.textContent = "inject prior_tension";
    tension.onclick = () => this.client.injectContext("prior_tension", true);
    const pause = document.createElement("button");
    pause.textContent = "pause";
    pause.onclick = () => this.client.replayControl("pause");
    const resume = document.createElement("button");
    resume.textContent = "resume";
    resume.onclick = () => this.client.replayControl("resume");
    controls.append(modality, weight, apply, note, tension, pause, resume);
    this.root.appendChild(controls);
  }

  render(nowMs: number = Date.now()): void {
    const store = this.client.store;
    const stale = store.isStale(nowMs, { timeoutMs: STALE_TIMEOUT_MS });
    this.statusBox.textContent = stale
      ? "STALE — no service messages"
      : `live · t=${store.state?.t?.toFixed(1) ?? "?"} s · mode=${store.state?.mode ?? "?"}`;
    this.statusBox.className = stale ? "status stale" : "status live";

    const t1 = store.state?.t ?? this.latestTime();
    const t0 = Math.max(0, t1 - this.windowS);
    for (const lane of LANES) {
      const canvas = this.laneCanvases.get(lane)!;
      this.drawLane(canvas, lane, t0, t1);
    }
    this.renderContext();
    this.renderCards();
  }

  private latestTime(): number {
    let t = 0;
    for (const lane of this.client.store.lanes.values()) {
      const n = lane.points.length;
      if (n) t = Math.max(t, lane.points[n - 1].t);
    }
    return t;
  }

  private drawLane(canvas: HTMLCanvasElement, lane: string, t0: number,
                   t1: number): void {
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = canvas;
    ctx.clearRect(0, 0, width, height);
    const data = this.client.store.lanes.get(lane);
    if (!data || data.points.length === 0) return;
    const buckets = downsample(data.points, t0, t1, width);
    if (buckets.length === 0) return;
    let lo = Infinity;
    let hi = -Infinity;
    for (const b of buckets) {
      lo = Math.min(lo, b.min);
      hi = Math.max(hi, b.max);
    }
    if (!Number.isFinite(lo) || hi === lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    const y = (v: number) => height - ((v - lo) / (hi - lo)) * (height - 6) - 3;
    const x = (t: number) => ((t - t0) / (t1 - t0)) * width;
    ctx.strokeStyle = lane === "risk" ? "#c0392b" : "#2c6fb3";
    ctx.beginPath();
    for (const b of buckets) {
      const px = x((b.t0 + b.t1) / 2);
      ctx.moveTo(px, y(b.min));
      ctx.lineTo(px, y(b.max));
    }
    ctx.stroke();
    // marker pins
    ctx.strokeStyle = "#888";
    for (const m of this.client.store.markers) {
      if (m.t < t0 || m.t > t1) continue;
      const px = x(m.t);
      ctx.beginPath();
      ctx.moveTo(px, 0);
      ctx.lineTo(px, height);
      ctx.stroke();
    }
    // proposal highlights
    ctx.fillStyle = "rgba(192, 57, 43, 0.15)";
    for (const card of this.client.store.cards.values()) {
      const t = card.proposal.t;
      if (t < t0 || t > t1) continue;
      ctx.fillRect(x(t) - 2, 0, 4, height);
    }
  }

  private renderContext(): void {
    const state = this.client.store.state;
    this.contextBox.innerHTML = "";
    if (!state) return;
    for (const [key, value] of Object.entries(state.context_flags ?? {})) {
      const chip = el("span", "chip");
      chip.textContent = `${key}=${String(value)}`;
      this.contextBox.appendChild(chip);
    }
    for (const [m, w] of Object.entries(state.weights ?? {})) {
      const chip = el("span", "chip weight");
      chip.textContent = `w(${m})=${w}`;
      this.contextBox.appendChild(chip);
    }
  }

  private renderCards(): void {
    const store = this.client.store;
    this.cardsBox.innerHTML = "";
    const sessionT = store.state?.t ?? 0;
    const cards = [...store.cards.values()]
      .sort((a, b) => b.proposal.t - a.proposal.t);
    for (const card of cards) {
      this.cardsBox.appendChild(this.buildCard(card, sessionT));
    }
  }

  private buildCard(card: ProposalCard, sessionT: number): HTMLElement {
    const p = card.proposal;
    const box = el("div", `card ${p.status}`);
    box.dataset.proposalId = p.id;
    const title = el("div", "card-title");
    title.textContent = `${p.id} · ${p.rule} · ${p.status}`;
    box.appendChild(title);
    const actions = el("div", "card-actions-list");
    actions.textContent = p.actions
      .map((a) => `${a.action}@${a.intensity}`)
      .join(", ");
    box.appendChild(actions);
    const rationale = el("div", "card-rationale");
    rationale.textContent = p.rationale.join(" · ");
    box.appendChild(rationale);
    if (p.status === "pending") {
      const remaining = Math.max(0, card.expiresAt - sessionT);
      const countdown = el("div", "card-countdown");
      countdown.textContent = `expires in ${remaining.toFixed(0)} s`;
      box.appendChild(countdown);
      const decidable = this.client.store.decidableAt(p.id, sessionT);
      for (const decision of ["approve", "reject"] as const) {
        const button = document.createElement("button");
        button.textContent = decision;
        button.disabled = !decidable;
        button.onclick = () => this.client.decide(p.id, decision);
        box.appendChild(button);
      }
      const override = document.createElement("button");
      override.textContent = "override: step_back@0.3";
      override.disabled = !decidable;
      override.onclick = () => this.client.decide(p.id, "override",
        [{ action: "step_back", intensity: 0.3 }]);
      box.appendChild(override);
    }
    return box;
  }
}

function el(tag: string, className: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}
