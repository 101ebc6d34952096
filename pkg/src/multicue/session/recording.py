"""Session recording format: UTF-8 JSONL, one object per line.

Each record is {"t": seconds, "kind": ..., "stream": ..., "data": {...}}
with kind in {sample, marker, feature, proposal, decision, context}.
Files are not required to be sorted by t; readers sort.

Numeric streams use kind "sample" with either a single vector
(data.values) or a regular block (data.rate + data.block, one vector per
sample starting at t). External model outputs (transcripts, embeddings)
travel as kind "feature" with a provenance field.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from ..bus import EventMarker, Modality, StreamBus, StreamSpec

log = logging.getLogger(__name__)

KINDS = ("sample", "marker", "feature", "proposal", "decision", "context")


class RecordingError(ValueError):
    pass


def make_record(t: float, kind: str, stream: str, data: dict) -> dict:
    if kind not in KINDS:
        raise RecordingError(f"unknown record kind {kind!r}")
    return {"t": float(t), "kind": kind, "stream": stream, "data": data}


def _format_float(x: float) -> str:
    return format(float(x), ".6g")


def format_record(record: dict) -> str:
    """Compact JSON for one record; numeric blocks use short float forms."""
    data = record["data"]
    if record["kind"] == "sample" and ("block" in data or "values" in data):
        parts = [f'{{"t": {record["t"]!r}, "kind": "sample", '
                 f'"stream": {json.dumps(record["stream"])}, "data": {{']
        inner = []
        if "rate" in data:
            inner.append(f'"rate": {data["rate"]!r}')
        if "values" in data:
            vec = ", ".join(_format_float(v) for v in data["values"])
            inner.append(f'"values": [{vec}]')
        if "block" in data:
            rows = ", ".join(
                "[" + ", ".join(_format_float(v) for v in row) + "]"
                for row in data["block"])
            inner.append(f'"block": [{rows}]')
        parts.append(", ".join(inner))
        parts.append("}}")
        return "".join(parts)
    return json.dumps(record, separators=(", ", ": "), sort_keys=False)


class SessionWriter:
    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8")

    def write(self, record: dict):
        self._fh.write(format_record(record))
        self._fh.write("\n")

    def write_all(self, records):
        for record in records:
            self.write(record)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_records(path, on_error=None):
    """Yield records in file order; malformed lines are reported (with their
    line number) to `on_error` and skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                if record.get("kind") not in KINDS:
                    raise RecordingError(f"bad kind {record.get('kind')!r}")
                float(record["t"])
            except (ValueError, KeyError, TypeError) as exc:
                message = f"line {lineno}: skipping malformed record ({exc})"
                log.warning("%s", message)
                if on_error is not None:
                    on_error(lineno, message)
                continue
            yield record


def load_session(path, on_error=None) -> list[dict]:
    """All records sorted by t (stable within equal timestamps)."""
    records = list(iter_records(path, on_error))
    records.sort(key=lambda r: r["t"])
    return records


def spec_to_dict(spec: StreamSpec) -> dict:
    return {
        "stream_id": spec.stream_id,
        "modality": spec.modality.value,
        "channel_count": spec.channel_count,
        "nominal_rate": spec.nominal_rate,
        "channel_units": list(spec.channel_units),
    }


def spec_from_dict(doc: dict) -> StreamSpec:
    return StreamSpec(
        stream_id=doc["stream_id"],
        modality=Modality(doc["modality"]),
        channel_count=int(doc["channel_count"]),
        nominal_rate=float(doc["nominal_rate"]),
        channel_units=tuple(doc.get("channel_units", ())),
    )


def session_header(t: float, specs: list[StreamSpec], context: dict) -> dict:
    """Session-level context record carrying the stream registry."""
    return make_record(t, "context", "session", {
        "stream_specs": [spec_to_dict(s) for s in specs],
        **context,
    })


@dataclass
class LoadedSession:
    records: list[dict]
    specs: dict[str, StreamSpec]
    context: dict
    markers: list[EventMarker]

    def samples_for(self, stream_id: str) -> tuple[np.ndarray, np.ndarray]:
        """(timestamps, values) for one numeric stream, expanded from blocks."""
        ts_parts, val_parts = [], []
        for rec in self.records:
            if rec["kind"] != "sample" or rec["stream"] != stream_id:
                continue
            data = rec["data"]
            if "block" in data:
                block = np.asarray(data["block"], dtype=float)
                ts_parts.append(rec["t"] + np.arange(block.shape[0]) / data["rate"])
                val_parts.append(block)
            else:
                ts_parts.append(np.array([rec["t"]]))
                val_parts.append(np.asarray([data["values"]], dtype=float))
        if not ts_parts:
            return np.empty(0), np.empty((0, 0))
        ts = np.concatenate(ts_parts)
        vals = np.vstack(val_parts)
        order = np.argsort(ts, kind="stable")
        return ts[order], vals[order]

    def features_for(self, stream_id: str) -> list[dict]:
        return [r for r in self.records
                if r["kind"] == "feature" and r["stream"] == stream_id]


def read_session(path, on_error=None) -> LoadedSession:
    records = load_session(path, on_error)
    specs: dict[str, StreamSpec] = {}
    context: dict = {}
    markers: list[EventMarker] = []
    for rec in records:
        if rec["kind"] == "context" and rec["stream"] == "session":
            for doc in rec["data"].get("stream_specs", []):
                spec = spec_from_dict(doc)
                specs[spec.stream_id] = spec
            context.update({k: v for k, v in rec["data"].items()
                            if k != "stream_specs"})
        elif rec["kind"] == "marker":
            markers.append(EventMarker(
                t=rec["t"], label=rec["data"]["label"],
                payload=rec["data"].get("payload", {})))
    return LoadedSession(records=records, specs=specs, context=context,
                         markers=markers)


def feed_bus(session: LoadedSession, bus: StreamBus) -> dict[str, int]:
    """Register every stream and push all samples; returns accepted counts."""
    counts = {}
    handles = {}
    for sid, spec in session.specs.items():
        handles[sid] = bus.register_stream(spec)
        counts[sid] = 0
    for rec in session.records:
        if rec["kind"] == "marker":
            bus.add_marker(EventMarker(t=rec["t"], label=rec["data"]["label"],
                                       payload=rec["data"].get("payload", {})))
        elif rec["kind"] == "sample":
            sid = rec["stream"]
            if sid not in handles:
                continue
            data = rec["data"]
            if "block" in data:
                block = np.asarray(data["block"], dtype=float)
                counts[sid] += bus.push_block(handles[sid], rec["t"],
                                              data["rate"], block)
            else:
                counts[sid] += bus.push_block(
                    handles[sid], rec["t"], 1.0,
                    np.asarray([data["values"]], dtype=float))
    return counts
