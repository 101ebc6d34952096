// Session client: one duplex socket, command/ack correlation, reconnect
// with backoff. The socket is injected so tests drive a scripted fake.

import { Command, Decision, parseMessage } from "./protocol";
import { SessionStore } from "./store";
import { validateIntensity, validateMode, validateSpeed,
         validateWeight } from "./validate";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((event: { data: string }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface Reply {
  ok: boolean;
  error?: string;
}

interface PendingCommand {
  resolve: (reply: Reply) => void;
  onError?: () => void;
}

export class SessionClient {
  store = new SessionStore();
  private socket: SocketLike | null = null;
  private pending = new Map<string, PendingCommand>();
  private seq = 0;
  private closedByUser = false;
  reconnectDelayMs = 500;
  reconnects = 0;

  constructor(
    private url: string,
    private factory: SocketFactory,
    private schedule: (fn: () => void, ms: number) => void =
      (fn, ms) => setTimeout(fn, ms),
  ) {}

  connect(): void {
    this.closedByUser = false;
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onmessage = (event) => this.handleRaw(event.data);
    socket.onclose = () => this.handleClose();
    socket.onerror = () => { /* onclose follows */ };
    socket.onopen = () => { this.store.connected = true; };
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
    this.socket = null;
  }

  private handleClose(): void {
    this.store.connected = false;
    // every in-flight command gets exactly one reply, even on disconnect
    for (const [, cmd] of this.pending) {
      cmd.onError?.();
      cmd.resolve({ ok: false, error: "connection lost" });
    }
    this.pending.clear();
    if (!this.closedByUser) {
      this.reconnects += 1;
      this.schedule(() => this.connect(), this.reconnectDelayMs);
    }
  }

  private handleRaw(raw: string): void {
    const msg = parseMessage(raw);
    if (!msg) return;
    if (msg.type === "ack" || msg.type === "error") {
      const reqId = msg.payload?.req_id;
      const cmd = reqId ? this.pending.get(reqId) : undefined;
      if (cmd) {
        this.pending.delete(reqId);
        if (msg.type === "error") cmd.onError?.();
        cmd.resolve(msg.type === "ack"
          ? { ok: true }
          : { ok: false, error: msg.payload?.message ?? "rejected" });
      }
      return;
    }
    this.store.apply(msg);
  }

  private sendCommand(type: Command["type"], payload: Record<string, any>,
                      onError?: () => void): Promise<Reply> {
    if (!this.socket) {
      onError?.();
      return Promise.resolve({ ok: false, error: "not connected" });
    }
    this.seq += 1;
    const reqId = `c${this.seq}`;
    const command: Command = { v: 1, type, req_id: reqId, payload };
    return new Promise((resolve) => {
      this.pending.set(reqId, { resolve, onError });
      this.socket!.send(JSON.stringify(command));
    });
  }

  /** Approve/reject/override with optimistic card update; a service error
   *  (or disconnect) restores the previous card status. */
  decide(proposalId: string, decision: Decision,
         actions?: { action: string; intensity: number }[]): Promise<Reply> {
    if (decision === "override") {
      for (const a of actions ?? []) {
        const err = validateIntensity(a.intensity);
        if (err) return Promise.resolve({ ok: false, error: err });
      }
      if (!actions || actions.length === 0) {
        return Promise.resolve({ ok: false, error: "override needs actions" });
      }
    }
    const sessionT = this.store.state?.t ?? Infinity;
    if (!this.store.decidableAt(proposalId, sessionT)) {
      return Promise.resolve({ ok: false, error: "proposal not decidable" });
    }
    const optimistic = decision === "reject" ? "rejected" : "approved";
    const before = this.store.markPending(proposalId, optimistic);
    const payload: Record<string, any> = {
      proposal_id: proposalId,
      decision,
      actor: "trainer",
    };
    if (actions) payload.actions = actions;
    return this.sendCommand("decide", payload, () => {
      if (before !== null) this.store.restoreStatus(proposalId, before);
    });
  }

  setWeight(modality: string, value: number): Promise<Reply> {
    const err = validateWeight(value);
    if (err) return Promise.resolve({ ok: false, error: err });
    return this.sendCommand("set_weight", { modality, value });
  }

  injectContext(key: string, value: unknown): Promise<Reply> {
    if (!key) return Promise.resolve({ ok: false, error: "key required" });
    return this.sendCommand("inject_context", { key, value });
  }

  setMode(mode: string): Promise<Reply> {
    const err = validateMode(mode);
    if (err) return Promise.resolve({ ok: false, error: err });
    return this.sendCommand("set_mode", { mode });
  }

  replayControl(action: "pause" | "resume"): Promise<Reply>;
  replayControl(action: "speed", speed: number): Promise<Reply>;
  replayControl(action: string, speed?: number): Promise<Reply> {
    if (action === "speed") {
      const err = validateSpeed(speed ?? NaN);
      if (err) return Promise.resolve({ ok: false, error: err });
      return this.sendCommand("replay", { action, speed });
    }
    return this.sendCommand("replay", { action });
  }
}
