// Session state assembled from service messages. The store is the single
// source of truth for rendering; cards are keyed by proposal id so
// reconnects and replays can never duplicate them.

import { Point } from "./downsample";
import { FeatureRecord, ProposalPayload, ServiceMessage,
         StatePayload } from "./protocol";

export const LANES = [
  "prosody",
  "gesture",
  "emotion",
  "alpha_power",
  "scr",
  "hrv",
  "proxemics",
  "risk",
] as const;

export type LaneName = (typeof LANES)[number];

// Which numeric field of each lane's feature record drives the timeline.
const LANE_VALUE: Record<LaneName, (data: Record<string, any>) => number | null> = {
  prosody: (d) => (typeof d.loudness_sone === "number" ? d.loudness_sone : null),
  gesture: (d) => (typeof d.escalation_index === "number" ? d.escalation_index : null),
  emotion: (d) => (typeof d.kernel_mean === "number" ? d.kernel_mean : null),
  alpha_power: (d) => (typeof d.alpha_power_z === "number" ? d.alpha_power_z : null),
  scr: (d) => (typeof d.amplitude === "number" ? d.amplitude : null),
  hrv: (d) => (typeof d.rmssd_ms === "number" ? d.rmssd_ms : null),
  proxemics: (d) => (typeof d.distance_m === "number" ? d.distance_m : null),
  risk: (d) => (typeof d.risk_score === "number" ? d.risk_score : null),
};

export interface Lane {
  name: string;
  points: Point[];
  labels: { t: number; text: string }[];
}

export interface Marker {
  t: number;
  label: string;
}

export interface ProposalCard {
  proposal: ProposalPayload;
  receivedAt: number; // session time when the card appeared
  expiresAt: number;  // pending cards expire 30 s after proposal time
}

export const PROPOSAL_EXPIRY_S = 30;

export interface StaleConfig {
  timeoutMs: number;
}

export class SessionStore {
  lanes = new Map<string, Lane>();
  markers: Marker[] = [];
  cards = new Map<string, ProposalCard>();
  state: StatePayload | null = null;
  streams: string[] = [];
  lastMessageAt = 0; // wall-clock ms of the last service message
  connected = false;

  private changed = false;

  apply(msg: ServiceMessage, nowMs: number = Date.now()): void {
    this.lastMessageAt = nowMs;
    this.changed = true;
    switch (msg.type) {
      case "hello": {
        this.streams = msg.payload.streams ?? [];
        this.state = msg.payload.state ?? null;
        for (const p of msg.payload.pending_proposals ?? []) {
          this.upsertProposal(p);
        }
        this.connected = true;
        break;
      }
      case "feature":
        this.applyFeature(msg.payload as FeatureRecord);
        break;
      case "proposal":
        this.upsertProposal(msg.payload as ProposalPayload);
        break;
      case "decision":
        this.upsertProposal(msg.payload as ProposalPayload);
        break;
      case "state":
        this.state = msg.payload as StatePayload;
        break;
      default:
        break;
    }
  }

  private applyFeature(rec: FeatureRecord): void {
    if (rec.kind === "marker") {
      this.markers.push({ t: rec.t, label: rec.data.label ?? "" });
      return;
    }
    const laneName = rec.stream as LaneName;
    const valueOf = LANE_VALUE[laneName];
    let lane = this.lanes.get(rec.stream);
    if (!lane) {
      lane = { name: rec.stream, points: [], labels: [] };
      this.lanes.set(rec.stream, lane);
    }
    const value = valueOf ? valueOf(rec.data) : null;
    if (value !== null) {
      // points arrive in session order; keep the array sorted by t
      const n = lane.points.length;
      if (n === 0 || rec.t >= lane.points[n - 1].t) {
        lane.points.push({ t: rec.t, value });
      } else {
        const at = lane.points.findIndex((p) => p.t > rec.t);
        lane.points.splice(at, 0, { t: rec.t, value });
      }
    }
    if (rec.stream === "gesture" && typeof rec.data.gesture_id === "string") {
      lane.labels.push({ t: rec.t, text: rec.data.gesture_id });
    }
    if (rec.stream === "verbal" && typeof rec.data.formality === "string") {
      lane.labels.push({ t: rec.t, text: rec.data.formality });
    }
  }

  private upsertProposal(p: ProposalPayload): void {
    const existing = this.cards.get(p.id);
    if (existing) {
      existing.proposal = p;
    } else {
      this.cards.set(p.id, {
        proposal: p,
        receivedAt: p.t,
        expiresAt: p.t + PROPOSAL_EXPIRY_S,
      });
    }
  }

  /** Optimistically mark a card while its command is in flight. */
  markPending(id: string, status: string): string | null {
    const card = this.cards.get(id);
    if (!card) return null;
    const before = card.proposal.status;
    card.proposal = { ...card.proposal, status };
    this.changed = true;
    return before;
  }

  restoreStatus(id: string, status: string): void {
    const card = this.cards.get(id);
    if (card) {
      card.proposal = { ...card.proposal, status };
      this.changed = true;
    }
  }

  populatedLaneCount(): number {
    let n = 0;
    for (const lane of LANES) {
      const l = this.lanes.get(lane);
      if (l && (l.points.length > 0 || l.labels.length > 0)) n += 1;
    }
    return n;
  }

  isStale(nowMs: number, config: StaleConfig = { timeoutMs: 2000 }): boolean {
    if (!this.connected) return true;
    return nowMs - this.lastMessageAt > config.timeoutMs;
  }

  pendingCards(): ProposalCard[] {
    return [...this.cards.values()]
      .filter((c) => c.proposal.status === "pending")
      .sort((a, b) => a.proposal.t - b.proposal.t);
  }

  decidableAt(id: string, sessionT: number): boolean {
    const card = this.cards.get(id);
    if (!card || card.proposal.status !== "pending") return false;
    return sessionT <= card.expiresAt;
  }

  consumeChange(): boolean {
    const was = this.changed;
    this.changed = false;
    return was;
  }
}
