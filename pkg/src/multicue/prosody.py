"""Nonverbal speech parameters: voice activity, pitch contour, loudness, rate.

Pitch uses the YIN difference function with cumulative-mean normalization
and parabolic interpolation; contour tracking adds Viterbi smoothing over
per-frame candidates. Loudness is stationary Zwicker loudness on 250 ms
sub-windows averaged over the analysis window, calibrated by a configured
dB offset mapping digital full scale to SPL at the reference distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import loudness as _loudness
from .dsp import DegenerateInputError

log = logging.getLogger(__name__)

VAD_FRAME_S = 0.025
LOUDNESS_SUBWINDOW_S = 0.25
LOUDNESS_HIGH_SONE = 8.0


class CalibrationError(ValueError):
    """Prosody operations need a dB-SPL calibration offset."""


@dataclass(frozen=True)
class ProsodyConfig:
    calibration_offset_db: float | None = None  # dB SPL of a unit-RMS signal
    window_s: float = 2.0
    hop_s: float = 0.5
    pitch_min_hz: float = 60.0
    pitch_max_hz: float = 500.0
    vad_threshold_db: float = -45.0  # dBFS RMS
    vad_hangover_ms: float = 100.0
    yin_threshold: float = 0.12

    def __post_init__(self):
        if not (self.window_s >= self.hop_s > 0):
            raise ValueError("require window >= hop > 0")
        if not (0 < self.pitch_min_hz < self.pitch_max_hz):
            raise ValueError("pitch range must satisfy 0 < min < max")

    def require_calibration(self) -> float:
        if self.calibration_offset_db is None:
            raise CalibrationError("calibration_offset_db is not set")
        return self.calibration_offset_db


@dataclass
class ProsodyFrame:
    t0: float
    t1: float
    voiced: bool
    pitch_hz: float | None
    loudness_sone: float
    rms_db_spl: float


@dataclass
class UtteranceProsody:
    pitch_mean_hz: float | None
    pitch_min_hz: float | None
    pitch_max_hz: float | None
    loudness_mean_sone: float
    loudness_high: bool
    duration_s: float
    speaking_rate_wpm: float | None = None
    valence: float | None = None   # [-1, 1], external provider
    arousal: float | None = None   # [-1, 1], external provider
    provenance: dict = field(default_factory=dict)


def detect_voice_activity(x: np.ndarray, sample_rate: float,
                          energy_threshold_db: float = -45.0,
                          hangover_ms: float = 100.0) -> np.ndarray:
    """Boolean voiced flag per 25 ms frame from short-time RMS energy.

    `energy_threshold_db` is relative to digital full scale; frames stay
    voiced for `hangover_ms` after the last frame above threshold. Polarity
    has no effect (energy detector).
    """
    x = np.asarray(x, dtype=float)
    frame_len = max(int(round(VAD_FRAME_S * sample_rate)), 1)
    n_frames = len(x) // frame_len
    if n_frames == 0:
        return np.zeros(0, dtype=bool)
    frames = x[: n_frames * frame_len].reshape(n_frames, frame_len)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    with np.errstate(divide="ignore"):
        level_db = 20.0 * np.log10(np.maximum(rms, 1e-12))
    active = level_db > energy_threshold_db
    hang_frames = int(np.ceil(hangover_ms / 1000.0 / VAD_FRAME_S))
    voiced = active.copy()
    countdown = 0
    for i, a in enumerate(active):
        if a:
            countdown = hang_frames
        elif countdown > 0:
            voiced[i] = True
            countdown -= 1
    return voiced


def _yin_cmnd(x: np.ndarray, tau_max: int) -> np.ndarray:
    """Cumulative-mean-normalized YIN difference function, d'(0..tau_max)."""
    n = len(x)
    w = n - tau_max
    # d(tau) = sum_{j<w} (x_j - x_{j+tau})^2, via FFT cross-correlation
    size = 1
    while size < n + tau_max:
        size *= 2
    fx = np.fft.rfft(x, size)
    head = x[:w]
    fh = np.fft.rfft(head[::-1], size)
    cross = np.fft.irfft(fx * fh, size)[w - 1: w + tau_max]
    cum = np.cumsum(x ** 2)
    e_head = cum[w - 1]
    e_lag = cum[np.arange(tau_max + 1) + w - 1] - np.concatenate(
        ([0.0], cum[: tau_max]))
    d = e_head + e_lag - 2.0 * cross
    d = np.maximum(d, 0.0)
    # cumulative mean normalization
    dprime = np.ones(tau_max + 1)
    running = np.cumsum(d[1:])
    nz = running > 0
    dprime[1:][nz] = d[1:][nz] * np.arange(1, tau_max + 1)[nz] / running[nz]
    dprime[1:][~nz] = 1.0
    return dprime


def _parabolic_refine(values: np.ndarray, idx: int) -> float:
    """Sub-sample minimum location by parabolic fit around idx."""
    if idx <= 0 or idx >= len(values) - 1:
        return float(idx)
    a, b, c = values[idx - 1], values[idx], values[idx + 1]
    denom = a - 2.0 * b + c
    if denom <= 0:
        return float(idx)
    return idx + 0.5 * (a - c) / denom


@dataclass
class PitchCandidate:
    freq_hz: float
    aperiodicity: float  # d' at the candidate lag; lower is more periodic


@dataclass
class PitchResult:
    pitch_hz: float | None
    aperiodicity: float
    candidates: list[PitchCandidate]

    @property
    def voiced(self) -> bool:
        return self.pitch_hz is not None


def estimate_pitch(x: np.ndarray, sample_rate: float,
                   config: ProsodyConfig | None = None) -> PitchResult:
    """Fundamental frequency of one analysis window, or unvoiced.

    The window must span at least two periods of the lowest pitch bound.
    Amplitude scaling does not change the estimate (the normalized
    difference function is scale-free).
    """
    config = config or ProsodyConfig()
    x = np.asarray(x, dtype=float)
    tau_max = int(np.ceil(sample_rate / config.pitch_min_hz))
    tau_min = max(int(np.floor(sample_rate / config.pitch_max_hz)), 2)
    if len(x) < 2 * tau_max:
        raise DegenerateInputError(
            f"window of {len(x)} samples too short for {config.pitch_min_hz} Hz "
            f"minimum pitch (need {2 * tau_max})"
        )
    if np.max(np.abs(x)) == 0.0:
        return PitchResult(None, 1.0, [])
    dprime = _yin_cmnd(x, tau_max)

    # candidate lags: local minima of d' within the pitch range
    cands: list[PitchCandidate] = []
    for tau in range(tau_min, tau_max):
        if dprime[tau] <= dprime[tau - 1] and dprime[tau] <= dprime[tau + 1] \
                and dprime[tau] < 0.6:
            refined = _parabolic_refine(dprime, tau)
            freq = sample_rate / refined
            if config.pitch_min_hz <= freq <= config.pitch_max_hz:
                cands.append(PitchCandidate(freq, float(dprime[tau])))
    if not cands:
        return PitchResult(None, float(np.min(dprime[tau_min:tau_max + 1])), [])

    # absolute-threshold rule: first (longest-frequency comes last) lag below
    # threshold wins, i.e. the lowest-lag minimum under the threshold
    below = [c for c in cands if c.aperiodicity < config.yin_threshold]
    if not below:
        return PitchResult(None, min(c.aperiodicity for c in cands), cands)
    # candidates are ordered by increasing lag = decreasing frequency;
    # YIN picks the smallest lag below threshold (highest candidate here
    # corresponds to the first dip), which suppresses octave-down errors.
    best = max(below, key=lambda c: c.freq_hz)
    return PitchResult(best.freq_hz, best.aperiodicity, cands)


class PitchTracker:
    """Viterbi smoothing of per-frame YIN candidates into a pitch contour.

    Single owner per audio stream. Transition cost penalizes octave jumps;
    emission cost is the candidate aperiodicity. An explicit unvoiced state
    absorbs frames with no credible candidate.
    """

    UNVOICED_COST = 0.35
    JUMP_WEIGHT = 4.0

    def __init__(self, config: ProsodyConfig | None = None):
        self.config = config or ProsodyConfig()

    def track(self, frames: list[PitchResult]) -> list[float | None]:
        states: list[list[PitchCandidate | None]] = []
        for fr in frames:
            opts: list[PitchCandidate | None] = [None]
            opts.extend(fr.candidates[:5])
            states.append(opts)
        n = len(frames)
        if n == 0:
            return []
        costs = [np.full(len(s), np.inf) for s in states]
        back: list[np.ndarray] = [np.zeros(len(s), dtype=int) for s in states]
        for k, opt in enumerate(states[0]):
            costs[0][k] = self._emission(opt)
        for i in range(1, n):
            for k, opt in enumerate(states[i]):
                emis = self._emission(opt)
                best, best_j = np.inf, 0
                for j, prev in enumerate(states[i - 1]):
                    c = costs[i - 1][j] + self._transition(prev, opt)
                    if c < best:
                        best, best_j = c, j
                costs[i][k] = best + emis
                back[i][k] = best_j
        path = [int(np.argmin(costs[-1]))]
        for i in range(n - 1, 0, -1):
            path.append(int(back[i][path[-1]]))
        path.reverse()
        out: list[float | None] = []
        for i, k in enumerate(path):
            opt = states[i][k]
            out.append(None if opt is None else opt.freq_hz)
        return out

    def _emission(self, opt: PitchCandidate | None) -> float:
        if opt is None:
            return self.UNVOICED_COST
        return opt.aperiodicity

    def _transition(self, a: PitchCandidate | None, b: PitchCandidate | None) -> float:
        if a is None or b is None:
            return 0.05 if (a is None) != (b is None) else 0.0
        return self.JUMP_WEIGHT * abs(np.log2(b.freq_hz / a.freq_hz))


def compute_loudness(x: np.ndarray, sample_rate: float,
                     calibration_offset_db: float | None) -> float:
    """Mean stationary Zwicker loudness (sone) over 250 ms sub-windows."""
    if calibration_offset_db is None:
        raise CalibrationError("calibration_offset_db is not set")
    x = np.asarray(x, dtype=float)
    sub = max(int(round(LOUDNESS_SUBWINDOW_S * sample_rate)), 16)
    if len(x) < sub:
        return _loudness.block_loudness(x, sample_rate, calibration_offset_db)
    n_sub = len(x) // sub
    sones = [
        _loudness.block_loudness(x[i * sub:(i + 1) * sub], sample_rate,
                                 calibration_offset_db)
        for i in range(n_sub)
    ]
    return float(np.mean(sones))


def rms_db_spl(x: np.ndarray, calibration_offset_db: float) -> float:
    rms = float(np.sqrt(np.mean(np.asarray(x, dtype=float) ** 2)))
    if rms <= 0:
        return -np.inf
    return 20.0 * np.log10(rms) + calibration_offset_db


def speaking_rate(word_count: int, duration_s: float) -> float:
    """Words per minute."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    return 60.0 * word_count / duration_s


def analyze_frames(x: np.ndarray, sample_rate: float,
                   config: ProsodyConfig, t_start: float = 0.0) -> list[ProsodyFrame]:
    """Sliding-window prosody frames over an audio block."""
    cal = config.require_calibration()
    win = int(round(config.window_s * sample_rate))
    hop = int(round(config.hop_s * sample_rate))
    frames: list[ProsodyFrame] = []
    results: list[PitchResult] = []
    spans = []
    for start in range(0, len(x) - win + 1, hop):
        seg = x[start:start + win]
        voiced_flags = detect_voice_activity(
            seg, sample_rate, config.vad_threshold_db, config.vad_hangover_ms)
        voiced = bool(voiced_flags.any())
        res = estimate_pitch(seg, sample_rate, config) if voiced else \
            PitchResult(None, 1.0, [])
        results.append(res)
        spans.append((t_start + start / sample_rate,
                      t_start + (start + win) / sample_rate, seg, voiced))
    contour = PitchTracker(config).track(results)
    for (t0, t1, seg, voiced), pitch in zip(spans, contour):
        frames.append(ProsodyFrame(
            t0=t0, t1=t1,
            voiced=voiced and pitch is not None,
            pitch_hz=pitch if voiced else None,
            loudness_sone=compute_loudness(seg, sample_rate, cal),
            rms_db_spl=rms_db_spl(seg, cal),
        ))
    return frames


def aggregate_utterance(frames: list[ProsodyFrame],
                        transcript_words: int | None = None,
                        valence: float | None = None,
                        arousal: float | None = None) -> UtteranceProsody:
    """Utterance-level summary: pitch stats over voiced frames, mean loudness
    over all frames, optional speaking rate and external affect values."""
    if not frames:
        raise DegenerateInputError("no frames to aggregate")
    pitches = [f.pitch_hz for f in frames if f.voiced and f.pitch_hz is not None]
    loudness_mean = float(np.mean([f.loudness_sone for f in frames]))
    duration = frames[-1].t1 - frames[0].t0
    wpm = None
    if transcript_words is not None and duration > 0:
        wpm = speaking_rate(transcript_words, duration)
    provenance = {}
    if valence is not None or arousal is not None:
        provenance["affect"] = "external-model"
    return UtteranceProsody(
        pitch_mean_hz=float(np.mean(pitches)) if pitches else None,
        pitch_min_hz=float(np.min(pitches)) if pitches else None,
        pitch_max_hz=float(np.max(pitches)) if pitches else None,
        loudness_mean_sone=loudness_mean,
        loudness_high=loudness_mean > LOUDNESS_HIGH_SONE,
        duration_s=duration,
        speaking_rate_wpm=wpm,
        valence=valence,
        arousal=arousal,
        provenance=provenance,
    )


def length_loudness_correlation(durations_s, loudness_sones) -> float:
    """Pearson correlation between utterance length and mean loudness.

    Report utility for pilot-style summaries; needs at least 3 utterances.
    """
    d = np.asarray(durations_s, dtype=float)
    l = np.asarray(loudness_sones, dtype=float)
    if d.size != l.size or d.size < 3:
        raise ValueError("need at least 3 paired observations")
    if d.std() == 0 or l.std() == 0:
        raise DegenerateInputError("zero variance in correlation input")
    return float(np.corrcoef(d, l)[0, 1])
