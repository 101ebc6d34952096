import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { ServiceMessage } from "../src/protocol";
import { LANES, SessionStore } from "../src/store";

const FIXTURE: ServiceMessage[] = JSON.parse(readFileSync(
  new URL("./fixtures/session_messages.json", import.meta.url), "utf-8"));

function loadedStore(): SessionStore {
  const store = new SessionStore();
  for (const msg of FIXTURE) store.apply(msg, 1000);
  return store;
}

describe("session store over the replayed fixture", () => {
  it("populates all eight timeline lanes", () => {
    const store = loadedStore();
    expect(store.populatedLaneCount()).toBe(8);
    for (const lane of LANES) {
      const data = store.lanes.get(lane);
      expect(data, lane).toBeDefined();
      expect(data!.points.length, lane).toBeGreaterThan(0);
    }
  });

  it("keeps lane points sorted by time", () => {
    const store = loadedStore();
    for (const lane of store.lanes.values()) {
      for (let i = 1; i < lane.points.length; i++) {
        expect(lane.points[i].t).toBeGreaterThanOrEqual(lane.points[i - 1].t);
      }
    }
  });

  it("captures markers separately from lanes", () => {
    const store = loadedStore();
    expect(store.markers.length).toBeGreaterThanOrEqual(7);
    expect(store.markers.some((m) => m.label === "escalation_start")).toBe(true);
  });

  it("creates exactly one card per proposal id", () => {
    const store = loadedStore();
    const proposalMessages = FIXTURE.filter((m) => m.type === "proposal");
    expect(proposalMessages.length).toBeGreaterThanOrEqual(1);
    // apply the same proposals again: reconnect/replay must not duplicate
    for (const msg of proposalMessages) store.apply(msg, 2000);
    const ids = new Set(proposalMessages.map((m) => m.payload.id));
    expect(store.cards.size).toBe(ids.size);
  });

  it("decision reconciliation overwrites card status", () => {
    const store = loadedStore();
    const [id] = [...store.cards.keys()];
    const card = store.cards.get(id)!;
    store.apply({
      v: 1, type: "decision",
      payload: { ...card.proposal, status: "approved" },
    }, 3000);
    expect(store.cards.get(id)!.proposal.status).toBe("approved");
    expect(store.cards.size).toBe(1);
  });

  it("optimistic update and restore round-trip", () => {
    const store = loadedStore();
    const [id] = [...store.cards.keys()];
    const before = store.markPending(id, "approved");
    expect(before).toBe("pending");
    expect(store.cards.get(id)!.proposal.status).toBe("approved");
    store.restoreStatus(id, before!);
    expect(store.cards.get(id)!.proposal.status).toBe("pending");
  });

  it("pending cards expire for decisions after 30 s of session time", () => {
    const store = loadedStore();
    const [id] = [...store.cards.keys()];
    const t = store.cards.get(id)!.proposal.t;
    expect(store.decidableAt(id, t + 5)).toBe(true);
    expect(store.decidableAt(id, t + 31)).toBe(false);
  });

  it("flags staleness 2 s after the last message", () => {
    const store = loadedStore();
    expect(store.isStale(1000 + 1500)).toBe(false);
    expect(store.isStale(1000 + 2500)).toBe(true);
  });

  it("state messages update weights and context flags", () => {
    const store = loadedStore();
    store.apply({
      v: 1, type: "state",
      payload: { t: 50, mode: "supervised", weights: { gesture: 0.5 },
                 context_flags: { prior_tension: true }, paused: false,
                 speed: null },
    }, 4000);
    expect(store.state!.weights.gesture).toBe(0.5);
    expect(store.state!.context_flags.prior_tension).toBe(true);
  });
});
