"""Replay recorded sessions into a stream bus as if they were live."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..bus import EventMarker, StreamBus
from .recording import iter_records, spec_from_dict

log = logging.getLogger(__name__)


@dataclass
class ReplayClock:
    """Scaled, pausable session clock. speed=None means batch (no waiting)."""

    speed: float | None = 1.0
    paused: bool = False
    current_t: float = 0.0

    def __post_init__(self):
        if self.speed is not None and self.speed <= 0:
            raise ValueError("speed must be positive (or None for batch)")

    def advance_to(self, t: float, sleep=time.sleep):
        """Block until session time t according to the speed multiplier."""
        if t < self.current_t:
            return
        if self.speed is not None:
            while self.paused:
                sleep(0.05)
            sleep(max(t - self.current_t, 0.0) / self.speed)
        self.current_t = t


@dataclass
class ReplayStats:
    records: int = 0
    samples: int = 0
    markers: int = 0
    skipped_lines: list[tuple[int, str]] = field(default_factory=list)


def replay(path, bus: StreamBus, clock: ReplayClock | None = None,
           on_record=None) -> ReplayStats:
    """Feed a session file into the bus in timestamp order.

    Samples and markers land in the bus; every record (including features,
    proposals, context) is also passed to `on_record` for downstream
    consumers. Malformed lines are skipped with a warning carrying the line
    number; replay continues.
    """
    clock = clock or ReplayClock(speed=None)
    stats = ReplayStats()
    handles = {}

    records = []
    iterator = iter_records(
        path, on_error=lambda lineno, msg: stats.skipped_lines.append((lineno, msg)))
    records = sorted(iterator, key=lambda r: r["t"])

    for rec in records:
        clock.advance_to(rec["t"])
        stats.records += 1
        kind = rec["kind"]
        if kind == "context" and rec["stream"] == "session":
            for doc in rec["data"].get("stream_specs", []):
                spec = spec_from_dict(doc)
                if spec.stream_id not in handles:
                    handles[spec.stream_id] = bus.register_stream(spec)
        elif kind == "marker":
            bus.add_marker(EventMarker(t=rec["t"], label=rec["data"]["label"],
                                       payload=rec["data"].get("payload", {})))
            stats.markers += 1
        elif kind == "sample":
            handle = handles.get(rec["stream"])
            if handle is None:
                continue
            data = rec["data"]
            if "block" in data:
                block = np.asarray(data["block"], dtype=float)
                stats.samples += bus.push_block(handle, rec["t"], data["rate"],
                                                block)
            else:
                stats.samples += bus.push_block(
                    handle, rec["t"], 1.0,
                    np.asarray([data["values"]], dtype=float))
        if on_record is not None:
            on_record(rec)
    return stats
