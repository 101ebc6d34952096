"""Duplex session service: feature fan-out and trainer commands over one
WebSocket per client, JSON messages, schema version 1.

Outbound: hello, feature (throttled to <= 10 Hz per stream), proposal,
decision, state, ack, error. Inbound commands (each answered exactly once
with ack or error): decide, inject_context, set_weight, set_mode, replay.

The service re-fuses cue snapshots live at 1 Hz from the replayed feature
lanes, so weight and context changes take effect immediately.
"""

from __future__ import annotations

import asyncio
import json
import logging
from dataclasses import dataclass, field

from .. import interpret
from .recording import load_session

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
THROTTLE_HZ = 10.0
FUSION_PERIOD_S = 1.0

CUE_MAX_AGE_S = {"verbal": 12.0, "prosody": 3.0, "gesture": 2.0, "arousal": 8.0}


def message(msg_type: str, payload: dict) -> str:
    return json.dumps({"v": PROTOCOL_VERSION, "type": msg_type,
                       "payload": payload})


@dataclass
class _CueState:
    """Latest per-modality cue inputs derived from replayed feature lanes."""

    encodings: dict
    index_table: interpret.EscalationIndexTable
    context: interpret.ContextState
    latest: dict[str, tuple[float, interpret.CueInput]] = field(default_factory=dict)

    def update_from(self, record: dict):
        stream, data, t = record["stream"], record["data"], record["t"]
        if stream == "verbal":
            if data.get("insults"):
                cue = interpret.encode_insult(len(data["insults"]), self.encodings)
            else:
                cue = interpret.encode_formality(data.get("formality", "neutral"),
                                                 self.encodings)
            self.latest["verbal"] = (t, cue)
            if data.get("loudness_high") is not None:
                self.latest["prosody"] = (t, interpret.encode_loudness(
                    bool(data["loudness_high"]), self.encodings))
        elif stream == "prosody":
            sone = data.get("loudness_sone")
            if sone is not None:
                self.latest["prosody"] = (t, interpret.encode_loudness(
                    sone > 8.0, self.encodings))
        elif stream == "gesture":
            idx = data.get("escalation_index")
            if idx is None:
                idx = interpret.lookup_index(self.index_table,
                                             data["gesture_id"], self.context)
            self.latest["gesture"] = (t, interpret.encode_gesture(idx))
        elif stream in ("scr", "hrv"):
            flag = data.get("flag")
            if flag:
                self.latest["arousal"] = (t, interpret.encode_arousal(
                    flag, self.encodings))

    def snapshot_cues(self, now: float) -> dict[str, interpret.CueInput]:
        cues = {}
        for name, (t, cue) in self.latest.items():
            if now - t <= CUE_MAX_AGE_S.get(name, 5.0):
                cues[name] = cue
        return cues


class SessionService:
    """Replays an analyzed session to connected consoles and applies their
    commands through the interpretation engine."""

    def __init__(self, features_path, speed: float | None = 20.0,
                 engine: interpret.InterpretEngine | None = None):
        self.records = load_session(features_path)
        self.engine = engine or interpret.InterpretEngine()
        self.speed = speed
        self.paused = asyncio.Event()
        self.paused.set()  # set = running
        self.clients: set = set()
        self.weights: dict[str, float] = {}
        self.cue_state = _CueState(
            encodings=interpret.load_cue_encodings(),
            index_table=interpret.EscalationIndexTable.load_default(),
            context=self._context_from_records(),
        )
        self._throttle_last: dict[str, float] = {}
        self.session_t = 0.0
        self._replay_done = asyncio.Event()

    def _context_from_records(self) -> interpret.ContextState:
        for rec in self.records:
            if rec["kind"] == "context" and rec["stream"] == "session":
                return interpret.ContextState(
                    scenario_id=rec["data"].get("scenario_id", "s01"),
                    officer_gender=rec["data"].get("officer_gender", "female"),
                    citizen_demographics=rec["data"].get(
                        "citizen_demographics", "adult_native"),
                )
        return interpret.ContextState(scenario_id="s01")

    # --- outbound ---------------------------------------------------------

    async def _send(self, ws, text: str):
        try:
            await ws.send(text)
        except Exception:  # connection already closing
            pass

    async def broadcast(self, msg_type: str, payload: dict):
        text = message(msg_type, payload)
        await asyncio.gather(*(self._send(ws, text) for ws in set(self.clients)),
                             return_exceptions=True)

    def _throttled(self, stream: str, t: float) -> bool:
        last = self._throttle_last.get(stream)
        if last is not None and t - last < 1.0 / THROTTLE_HZ:
            return True
        self._throttle_last[stream] = t
        return False

    def state_payload(self) -> dict:
        return {
            "t": self.session_t,
            "mode": self.engine.mode,
            "weights": self.weights,
            "context_flags": self.cue_state.context.flags,
            "paused": not self.paused.is_set(),
            "speed": self.speed,
        }

    def pending_proposals(self) -> list[dict]:
        return [interpret._proposal_dict(p)
                for p in self.engine.proposals.values() if p.status == "pending"]

    # --- replay + fusion loop ----------------------------------------------

    async def replay_loop(self):
        next_fusion = FUSION_PERIOD_S
        for rec in self.records:
            t = rec["t"]
            while next_fusion < t:
                await self._fuse_tick(next_fusion)
                next_fusion += FUSION_PERIOD_S
            if self.speed is not None:
                delta = max(t - self.session_t, 0.0) / self.speed
                if delta > 0:
                    await asyncio.sleep(delta)
                await self.paused.wait()
            self.session_t = max(self.session_t, t)
            if rec["kind"] == "feature":
                self.cue_state.update_from(rec)
                if rec["stream"] == "risk":
                    continue  # the service computes its own risk lane
                if not self._throttled(rec["stream"], t):
                    await self.broadcast("feature", rec)
            elif rec["kind"] == "marker":
                await self.broadcast("feature", rec)
        self._replay_done.set()

    async def _fuse_tick(self, t: float):
        cues = self.cue_state.snapshot_cues(t)
        if not cues:
            return
        usable = {n: c for n, c in cues.items() if self.weights.get(n, 1.0) > 0}
        if not usable:
            return
        snapshot = interpret.fuse(t, usable, self.weights)
        await self.broadcast("feature", {
            "t": t, "kind": "feature", "stream": "risk",
            "data": {"risk_score": round(snapshot.risk_score, 4),
                     "uncertain": snapshot.uncertain,
                     "cues": {k: round(v.value, 3) for k, v in usable.items()}},
        })
        outcome = self.engine.consume(snapshot)
        if isinstance(outcome, interpret.AdaptationProposal):
            await self.broadcast("proposal", interpret._proposal_dict(outcome))

    # --- inbound commands ---------------------------------------------------

    async def handle_command(self, ws, raw: str):
        req_id = None
        try:
            doc = json.loads(raw)
            req_id = doc.get("req_id")
            msg_type = doc.get("type")
            payload = doc.get("payload", {})
            if msg_type == "decide":
                proposal = self.engine.record_decision(
                    payload["proposal_id"], payload["decision"],
                    payload.get("actor", "trainer"), self.session_t,
                    override_actions=[
                        interpret.AdaptationAction(a["action"],
                                                   float(a.get("intensity", 0.5)))
                        for a in payload.get("actions", [])
                    ] or None,
                )
                await self.broadcast("decision", interpret._proposal_dict(proposal))
            elif msg_type == "inject_context":
                self.cue_state.context.flags[str(payload["key"])] = payload["value"]
                await self.broadcast("state", self.state_payload())
            elif msg_type == "set_weight":
                value = float(payload["value"])
                if not 0.0 <= value <= 1.0:
                    raise interpret.InterpretError(
                        f"weight {value} outside [0, 1]")
                self.weights[str(payload["modality"])] = value
                await self.broadcast("state", self.state_payload())
            elif msg_type == "set_mode":
                self.engine.set_mode(payload["mode"], self.session_t)
                await self.broadcast("state", self.state_payload())
            elif msg_type == "replay":
                action = payload.get("action")
                if action == "pause":
                    self.paused.clear()
                elif action == "resume":
                    self.paused.set()
                elif action == "speed":
                    speed = float(payload["speed"])
                    if speed <= 0:
                        raise ValueError("speed must be positive")
                    self.speed = speed
                else:
                    raise ValueError(f"unknown replay action {action!r}")
                await self.broadcast("state", self.state_payload())
            else:
                raise ValueError(f"unknown command type {msg_type!r}")
            await self._send(ws, message("ack", {"req_id": req_id}))
        except Exception as exc:
            await self._send(ws, message("error", {
                "req_id": req_id, "code": "bad_request", "message": str(exc)}))

    async def handler(self, ws):
        self.clients.add(ws)
        streams = sorted({r["stream"] for r in self.records
                          if r["kind"] == "feature"} | {"risk"})
        await self._send(ws, message("hello", {
            "streams": streams,
            "state": self.state_payload(),
            "pending_proposals": self.pending_proposals(),
        }))
        try:
            async for raw in ws:
                await self.handle_command(ws, raw)
        finally:
            self.clients.discard(ws)

    async def serve(self, host: str = "127.0.0.1", port: int = 8765):
        import websockets

        async with websockets.serve(self.handler, host, port) as server:
            sockets = server.sockets or []
            actual = sockets[0].getsockname()[1] if sockets else port
            log.info("session service listening on ws://%s:%d", host, actual)
            replay_task = asyncio.create_task(self.replay_loop())
            try:
                await replay_task
                # keep serving after replay ends until cancelled
                await asyncio.Future()
            except asyncio.CancelledError:
                replay_task.cancel()
                raise
