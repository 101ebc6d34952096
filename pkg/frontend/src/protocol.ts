// Session service protocol, schema version 1.
// One WebSocket per client; every message is {"v": 1, "type", "payload"}.

export const PROTOCOL_VERSION = 1;

export type OutboundType =
  | "hello"
  | "feature"
  | "proposal"
  | "decision"
  | "state"
  | "ack"
  | "error";

export interface ServiceMessage {
  v: number;
  type: OutboundType;
  payload: any;
}

export interface FeatureRecord {
  t: number;
  kind: string; // feature | marker
  stream: string;
  data: Record<string, any>;
}

export interface ProposalPayload {
  id: string;
  t: number;
  status: string; // pending | approved | rejected | expired | auto_applied
  rule: string;
  actions: { action: string; intensity: number }[];
  rationale: string[];
}

export interface StatePayload {
  t: number;
  mode: string;
  weights: Record<string, number>;
  context_flags: Record<string, unknown>;
  paused: boolean;
  speed: number | null;
}

export interface HelloPayload {
  streams: string[];
  state: StatePayload;
  pending_proposals: ProposalPayload[];
}

export type Decision = "approve" | "reject" | "override";

export interface Command {
  v: number;
  type: "decide" | "inject_context" | "set_weight" | "set_mode" | "replay";
  req_id: string;
  payload: Record<string, any>;
}

export function parseMessage(raw: string): ServiceMessage | null {
  let doc: any;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (!doc || doc.v !== PROTOCOL_VERSION || typeof doc.type !== "string") {
    return null;
  }
  return doc as ServiceMessage;
}
