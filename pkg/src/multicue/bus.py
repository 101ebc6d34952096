"""Timestamped multi-stream registry with clock correction and window alignment.

All samples live on one shared monotonic clock (seconds, float64). Remote
producers estimate their offset once via `estimate_clock_offset` and shift
timestamps at ingestion, so everything downstream is offset-free.
"""

from __future__ import annotations

import bisect
import enum
import logging
import statistics
import threading
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class Modality(enum.Enum):
    AUDIO = "audio"
    VIDEO_LANDMARKS = "video_landmarks"
    EMG = "emg"
    EEG = "eeg"
    EDA = "eda"
    ECG = "ecg"
    PROXEMICS = "proxemics"
    TRANSCRIPT = "transcript"


# Per-modality hardware floor: (min sample rate Hz, min channel count).
# Streams below these get a warning attached to their handle, not a refusal;
# desk-scale simulators legitimately run below the floors.
MIN_REQUIREMENTS: dict[Modality, tuple[float, int]] = {
    Modality.AUDIO: (48_000.0, 1),
    Modality.VIDEO_LANDMARKS: (30.0, 1),
    Modality.ECG: (250.0, 1),
    Modality.EDA: (250.0, 1),
    Modality.EMG: (800.0, 1),
    Modality.EEG: (250.0, 32),
}

DEFAULT_RETENTION_S = 120.0


class StreamError(ValueError):
    pass


class DuplicateStreamError(StreamError):
    pass


class ArityError(StreamError):
    pass


class GapError(StreamError):
    """Requested window not fully covered by a stream's buffer."""

    def __init__(self, stream_id: str, message: str):
        super().__init__(message)
        self.stream_id = stream_id


@dataclass(frozen=True)
class StreamSpec:
    stream_id: str
    modality: Modality
    channel_count: int
    nominal_rate: float  # Hz; 0 for irregular streams (transcripts)
    channel_units: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.stream_id:
            raise StreamError("stream_id must be non-empty")
        if self.channel_count < 1:
            raise StreamError("channel_count must be >= 1")
        if self.nominal_rate < 0:
            raise StreamError("nominal_rate must be >= 0")

    def requirement_warnings(self) -> list[str]:
        warnings = []
        floor = MIN_REQUIREMENTS.get(self.modality)
        if floor is None:
            return warnings
        min_rate, min_channels = floor
        if 0 < self.nominal_rate < min_rate:
            warnings.append(
                f"{self.stream_id}: {self.modality.value} rate {self.nominal_rate:g} Hz "
                f"below the {min_rate:g} Hz minimum"
            )
        if self.channel_count < min_channels:
            warnings.append(
                f"{self.stream_id}: {self.modality.value} has {self.channel_count} "
                f"channels, minimum is {min_channels}"
            )
        return warnings


@dataclass(frozen=True)
class TimedSample:
    stream_id: str
    t: float
    values: tuple[float, ...]


@dataclass(frozen=True)
class EventMarker:
    t: float
    label: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.label:
            raise StreamError("marker label must be non-empty")


@dataclass
class AlignedWindow:
    t0: float
    t1: float
    grid_rate: float
    grid: np.ndarray                  # common time grid, shape (n,)
    data: dict[str, np.ndarray]       # stream_id -> (channels, n)
    markers: list[EventMarker]


def estimate_clock_offset(probe_pairs) -> float:
    """NTP-style offset of a remote clock relative to the local clock.

    Each probe is (local_send, remote_recv, remote_send, local_recv); the
    estimate is the median over probes of the midpoint offset
    ((remote_recv - local_send) + (remote_send - local_recv)) / 2.
    """
    pairs = list(probe_pairs)
    if not pairs:
        raise ValueError("need at least one probe pair")
    offsets = [
        ((remote_recv - local_send) + (remote_send - local_recv)) / 2.0
        for local_send, remote_recv, remote_send, local_recv in pairs
    ]
    return float(statistics.median(offsets))


class _StreamBuffer:
    """Single-producer sample buffer with time-based ring retention."""

    def __init__(self, spec: StreamSpec, retention_s: float):
        self.spec = spec
        self.retention_s = retention_s
        self.clock_offset = 0.0  # remote minus local clock, subtracted on push
        self._ts: list[float] = []
        self._values: list[np.ndarray] = []  # one (channels,) vector per sample
        self.lock = threading.Lock()

    @property
    def last_t(self) -> float | None:
        return self._ts[-1] if self._ts else None

    @property
    def first_t(self) -> float | None:
        return self._ts[0] if self._ts else None

    def push(self, ts: np.ndarray, values: np.ndarray) -> int:
        """Append in-order samples; returns how many were accepted."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None] if self.spec.channel_count == 1 else values[None, :]
        if values.shape[1] != self.spec.channel_count:
            raise ArityError(
                f"{self.spec.stream_id}: got {values.shape[1]} channels, "
                f"expected {self.spec.channel_count}"
            )
        if values.shape[0] != len(ts):
            raise ArityError(f"{self.spec.stream_id}: {len(ts)} timestamps for "
                             f"{values.shape[0]} sample vectors")
        accepted = 0
        with self.lock:
            offset = self.clock_offset
            last = self._ts[-1] if self._ts else -np.inf
            for t, vec in zip(ts, values):
                t = float(t) - offset
                if t <= last:
                    continue
                self._ts.append(t)
                self._values.append(vec)
                last = t
                accepted += 1
            self._prune_locked()
        return accepted

    def _prune_locked(self):
        if not self._ts:
            return
        horizon = self._ts[-1] - self.retention_s
        cut = bisect.bisect_left(self._ts, horizon)
        if cut:
            del self._ts[:cut]
            del self._values[:cut]

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        with self.lock:
            ts = np.array(self._ts, dtype=float)
            vals = np.array(self._values, dtype=float) if self._values else \
                np.empty((0, self.spec.channel_count))
        return ts, vals


@dataclass
class StreamHandle:
    spec: StreamSpec
    warnings: list[str]
    _buffer: _StreamBuffer


class StreamBus:
    """Registry of timestamped streams plus the session's event markers."""

    def __init__(self, retention_s: float = DEFAULT_RETENTION_S):
        self.retention_s = retention_s
        self._streams: dict[str, _StreamBuffer] = {}
        self._markers: list[EventMarker] = []
        self._lock = threading.RLock()

    def register_stream(self, spec: StreamSpec) -> StreamHandle:
        with self._lock:
            if spec.stream_id in self._streams:
                raise DuplicateStreamError(f"stream {spec.stream_id!r} already registered")
            buf = _StreamBuffer(spec, self.retention_s)
            self._streams[spec.stream_id] = buf
        warnings = spec.requirement_warnings()
        for message in warnings:
            log.warning("requirement violation: %s", message)
        return StreamHandle(spec=spec, warnings=warnings, _buffer=buf)

    def stream_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._streams)

    def spec(self, stream_id: str) -> StreamSpec:
        return self._buffer(stream_id).spec

    def _buffer(self, stream_id: str) -> _StreamBuffer:
        with self._lock:
            try:
                return self._streams[stream_id]
            except KeyError:
                raise StreamError(f"unknown stream {stream_id!r}") from None

    def set_clock_offset(self, handle: StreamHandle, offset_s: float):
        """Shift a remote producer onto the shared clock at ingestion.

        `offset_s` is the remote-minus-local clock difference from
        `estimate_clock_offset`; subsequent pushes subtract it, keeping all
        downstream math offset-free.
        """
        with handle._buffer.lock:
            handle._buffer.clock_offset = float(offset_s)

    def push_samples(self, handle: StreamHandle, samples) -> int:
        """Push TimedSample objects; out-of-order ones are dropped, not fatal."""
        samples = list(samples)
        if not samples:
            return 0
        ts = np.array([s.t for s in samples], dtype=float)
        values = np.array([s.values for s in samples], dtype=float)
        return handle._buffer.push(ts, values)

    def push_block(self, handle: StreamHandle, t0: float, rate: float,
                   values: np.ndarray) -> int:
        """Push a block of consecutive samples starting at t0 at `rate` Hz."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        ts = t0 + np.arange(values.shape[0]) / rate
        return handle._buffer.push(ts, values)

    def add_marker(self, marker: EventMarker):
        with self._lock:
            bisect.insort(self._markers, marker, key=lambda m: m.t)

    def markers_between(self, t0: float, t1: float) -> list[EventMarker]:
        with self._lock:
            lo = bisect.bisect_left(self._markers, t0, key=lambda m: m.t)
            hi = bisect.bisect_left(self._markers, t1, key=lambda m: m.t)
            return list(self._markers[lo:hi])

    def coverage(self, stream_id: str) -> tuple[float, float] | None:
        buf = self._buffer(stream_id)
        with buf.lock:
            if not buf._ts:
                return None
            return buf._ts[0], buf._ts[-1]

    def align_window(self, stream_ids, t0: float, length: float,
                     grid_rate: float) -> AlignedWindow:
        """Resample the named streams onto one grid covering [t0, t0+length).

        Linear interpolation onto grid points t0 + k/grid_rate,
        k = 0 .. round(length*grid_rate)-1. Raises GapError naming the
        first stream whose buffer does not cover the window.
        """
        if grid_rate <= 0:
            raise ValueError("grid_rate must be positive")
        n = int(round(length * grid_rate))
        if n < 1:
            raise ValueError("window shorter than one grid period")
        grid = t0 + np.arange(n) / grid_rate
        t1 = t0 + length
        eps = 1e-9
        # consistent cross-stream snapshot: hold every buffer lock (in
        # sorted order, so concurrent aligners cannot deadlock) while copying
        stream_ids = list(stream_ids)
        buffers = {sid: self._buffer(sid) for sid in stream_ids}
        snapshots: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        ordered = sorted(set(stream_ids))
        for sid in ordered:
            buffers[sid].lock.acquire()
        try:
            for sid in ordered:
                buf = buffers[sid]
                ts = np.array(buf._ts, dtype=float)
                vals = np.array(buf._values, dtype=float) if buf._values else \
                    np.empty((0, buf.spec.channel_count))
                snapshots[sid] = (ts, vals)
        finally:
            for sid in reversed(ordered):
                buffers[sid].lock.release()

        data: dict[str, np.ndarray] = {}
        for sid in stream_ids:
            ts, vals = snapshots[sid]
            if ts.size == 0:
                raise GapError(sid, f"stream {sid!r} has no samples")
            if ts[0] > t0 + eps or ts[-1] < grid[-1] - eps:
                raise GapError(
                    sid,
                    f"stream {sid!r} covers [{ts[0]:.3f}, {ts[-1]:.3f}] s, "
                    f"window needs [{t0:.3f}, {t1:.3f}] s",
                )
            resampled = np.empty((vals.shape[1], n))
            for ch in range(vals.shape[1]):
                resampled[ch] = np.interp(grid, ts, vals[:, ch])
            data[sid] = resampled
        return AlignedWindow(
            t0=t0, t1=t1, grid_rate=grid_rate, grid=grid, data=data,
            markers=self.markers_between(t0, t1),
        )
