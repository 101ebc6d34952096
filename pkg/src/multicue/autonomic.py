"""Autonomic arousal: electrodermal phasic activity, cardiac R-peaks and
RMSSD, baseline-referenced arousal flags, and proxemic distance/velocity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

EDA_BAND_HZ = (0.0159, 0.5)
SCR_MIN_AMPLITUDE_Z = 0.05
SCR_ATTRIBUTION_WINDOW_S = (1.0, 5.0)
# Onset = first crossing of 20% of the trough-to-peak rise. The fraction
# compensates the zero-phase smoothing of the narrow phasic band, which
# drags the trough itself well ahead of the true event onset.
SCR_ONSET_RISE_FRACTION = 0.2
RPEAK_REFRACTORY_S = 0.25
HRV_WINDOW_S = 5.0
RR_ECTOPIC_DEVIATION = 0.30
RR_NEIGHBORHOOD = 5


class BaselineError(ValueError):
    pass


@dataclass
class ScrEvent:
    onset_t: float
    peak_t: float
    amplitude: float          # z-units above the preceding trough
    event_locked_to: str | None = None

    def __post_init__(self):
        if self.peak_t <= self.onset_t:
            raise ValueError("peak must follow onset")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")


@dataclass
class HrvWindow:
    t0: float
    t1: float
    rmssd_ms: float | None
    n_intervals: int


@dataclass
class Baseline:
    """Resting-state reference for one feature (scr amplitude or rmssd)."""

    modality: str            # "scr" | "hrv"
    mean: float
    std: float
    duration_s: float

    def __post_init__(self):
        if self.modality not in ("scr", "hrv"):
            raise BaselineError("modality must be 'scr' or 'hrv'")
        if self.std <= 0:
            raise BaselineError("baseline std must be positive")
        if self.duration_s < 30.0:
            log.warning("baseline of %.1f s is short; 30 s or more recommended",
                        self.duration_s)


@dataclass
class ProxemicsSample:
    t: float
    hmd: np.ndarray
    avatar: np.ndarray
    distance_m: float
    velocity_mps: float


def extract_phasic(eda: np.ndarray, sample_rate: float) -> np.ndarray:
    """Phasic skin-conductance component: 0.0159-0.5 Hz bandpass, z-scored.

    Needs around a minute of signal for the z-units to be meaningful; a
    warning is logged below 60 s.
    """
    eda = np.asarray(eda, dtype=float)
    if eda.size / sample_rate < 60.0:
        log.warning("phasic extraction on %.1f s of EDA; z-units are unstable "
                    "below 60 s", eda.size / sample_rate)
    if eda.size and np.all(eda == eda[0]):
        raise dsp.DegenerateInputError("constant EDA signal")
    spec = dsp.FilterSpec("bandpass", sample_rate, low=EDA_BAND_HZ[0],
                          high=EDA_BAND_HZ[1], order=2)
    sos = dsp.design_filter(spec)
    phasic = dsp.apply_filter(sos, eda, zero_phase=True)
    # nothing in band (e.g. pure tonic drift): report a flat phasic series
    # instead of z-amplifying numerical residue
    if phasic.std() <= 1e-8 * max(eda.std(), 1e-12):
        return np.zeros_like(phasic)
    return dsp.zscore(phasic)


def detect_scr_peaks(phasic: np.ndarray, sample_rate: float,
                     min_amplitude: float = SCR_MIN_AMPLITUDE_Z,
                     markers: list[tuple[float, str]] | None = None,
                     t_start: float = 0.0) -> list[ScrEvent]:
    """Phasic response events: local maxima rising >= min_amplitude above the
    preceding trough.

    With markers given, an event is attributed to a marker iff its peak
    falls 1-5 s after it; the latest qualifying marker wins.
    """
    x = np.asarray(phasic, dtype=float)
    events: list[ScrEvent] = []
    if x.size < 3:
        return events
    markers = sorted(markers or [], key=lambda m: m[0])
    for i in range(1, x.size - 1):
        if not (x[i] >= x[i - 1] and x[i] > x[i + 1]):
            continue
        j = i
        while j > 0 and x[j - 1] <= x[j]:
            j -= 1
        # walk back to the local minimum that precedes the rise
        while j > 0 and x[j - 1] < x[j]:
            j -= 1
        trough = np.argmin(x[j:i + 1]) + j
        amplitude = x[i] - x[trough]
        if amplitude < min_amplitude:
            continue
        peak_t = t_start + i / sample_rate
        target = x[trough] + SCR_ONSET_RISE_FRACTION * amplitude
        onset = trough
        while onset < i - 1 and x[onset] < target:
            onset += 1
        onset_t = t_start + onset / sample_rate
        locked = None
        for mt, label in markers:
            lo, hi = SCR_ATTRIBUTION_WINDOW_S
            if mt + lo <= peak_t <= mt + hi:
                locked = label
        events.append(ScrEvent(onset_t=onset_t, peak_t=peak_t,
                               amplitude=float(amplitude),
                               event_locked_to=locked))
    return events


def detect_r_peaks(ecg: np.ndarray, sample_rate: float) -> np.ndarray:
    """R-peak times (s) via a derivative/energy chain with adaptive threshold.

    z-score, 0.5 Hz highpass, five-point derivative, squaring, 150 ms
    moving integration, adaptive signal/noise thresholds with a 250 ms
    refractory period and a missed-beat searchback. Peak times are refined
    to the local maximum of the filtered signal, so they are invariant to
    positive amplitude scaling and constant offsets.
    """
    ecg = np.asarray(ecg, dtype=float)
    if ecg.size < 2 * sample_rate:
        raise dsp.DegenerateInputError("need at least 2 s of ECG")
    if np.all(ecg == ecg[0]):
        return np.array([])
    x = dsp.zscore(ecg)
    sos = dsp.design_filter(dsp.FilterSpec("highpass", sample_rate, low=0.5, order=4))
    filtered = dsp.apply_filter(sos, x, zero_phase=True)
    # five-point derivative emphasises the QRS slope
    kernel = np.array([2.0, 1.0, 0.0, -1.0, -2.0]) / 8.0
    deriv = np.convolve(filtered, kernel[::-1], mode="same")
    squared = deriv ** 2
    win = max(int(round(0.150 * sample_rate)), 1)
    integ = np.convolve(squared, np.ones(win) / win, mode="same")

    spacing = max(int(round(0.2 * sample_rate)), 1)
    candidates = [
        i for i in range(1, integ.size - 1)
        if integ[i] >= integ[i - 1] and integ[i] > integ[i + 1]
    ]
    refractory = int(round(RPEAK_REFRACTORY_S * sample_rate))
    lead_in = integ[: int(2 * sample_rate)]
    spki = float(np.max(lead_in)) * 0.5
    npki = float(np.mean(lead_in)) * 0.5
    peaks: list[int] = []
    missed_window = None
    for i in candidates:
        threshold = npki + 0.25 * (spki - npki)
        if peaks and i - peaks[-1] < refractory:
            continue
        if integ[i] > threshold:
            peaks.append(i)
            spki = 0.125 * integ[i] + 0.875 * spki
        else:
            npki = 0.125 * integ[i] + 0.875 * npki
            # searchback when the gap exceeds 1.66x the running RR average
            if len(peaks) >= 2:
                rr_avg = np.mean(np.diff(peaks[-8:]))
                if i - peaks[-1] > 1.66 * rr_avg and integ[i] > 0.5 * threshold:
                    peaks.append(i)
                    spki = 0.25 * integ[i] + 0.75 * spki
    # refine to the filtered-signal maximum inside the integration window
    refined = []
    half = win
    for i in peaks:
        lo = max(i - half, 0)
        hi = min(i + half // 2 + 1, filtered.size)
        refined.append(lo + int(np.argmax(filtered[lo:hi])))
    refined = sorted(set(refined))
    # enforce refractory on the refined positions
    final: list[int] = []
    for i in refined:
        if final and i - final[-1] < refractory:
            if filtered[i] > filtered[final[-1]]:
                final[-1] = i
            continue
        final.append(i)
    return np.array(final, dtype=float) / sample_rate


def correct_rr(rr_ms: np.ndarray) -> np.ndarray:
    """Ectopic / missed-beat correction of an R-R interval list (ms).

    An interval deviating more than 30% from the local median of its 5
    nearest neighbours is flagged. The flag median includes the interval
    itself so one outlier cannot poison its neighbours' verdicts; the
    replacement median excludes it. A flagged interval close to twice the
    local median splits into two halves (missed beat, duration preserved),
    any other flagged singleton is replaced by the local median (ectopic).
    """
    rr = list(np.asarray(rr_ms, dtype=float))
    if len(rr) < 3:
        raise ValueError("need at least 3 intervals")
    out: list[float] = []
    for i, interval in enumerate(rr):
        others = [rr[j] for j in _neighbour_indices(i, len(rr))]
        flag_median = float(np.median(others + [interval]))
        if abs(interval - flag_median) <= RR_ECTOPIC_DEVIATION * flag_median:
            out.append(interval)
            continue
        local = float(np.median(others))
        if abs(interval - 2.0 * local) <= RR_ECTOPIC_DEVIATION * local:
            out.extend([interval / 2.0, interval / 2.0])
        else:
            out.append(local)
    return np.array(out)


def _neighbour_indices(i: int, n: int, count: int = RR_NEIGHBORHOOD) -> list[int]:
    idx = sorted(range(n), key=lambda j: (abs(j - i), j))
    return [j for j in idx if j != i][:count]


def rmssd(rr_ms: np.ndarray) -> float | None:
    """Root mean square of successive R-R differences; None below 3 intervals."""
    rr = np.asarray(rr_ms, dtype=float)
    if rr.size < 3:
        return None
    diffs = np.diff(rr)
    return float(np.sqrt(np.mean(diffs ** 2)))


def hrv_windows(r_peak_times: np.ndarray, t0: float, t1: float,
                window_s: float = HRV_WINDOW_S) -> list[HrvWindow]:
    """Non-overlapping RMSSD windows over [t0, t1).

    A window uses the R-R intervals whose both endpoints fall inside it;
    windows with fewer than 3 intervals report an absent value.
    """
    peaks = np.asarray(r_peak_times, dtype=float)
    windows = []
    start = t0
    while start < t1:
        end = min(start + window_s, t1)
        inside = peaks[(peaks >= start) & (peaks < end)]
        rr = np.diff(inside) * 1000.0
        value = rmssd(rr)
        windows.append(HrvWindow(t0=start, t1=end, rmssd_ms=value,
                                 n_intervals=int(rr.size)))
        start = end
    return windows


def calibrate_baseline(modality: str, values: np.ndarray,
                       duration_s: float) -> Baseline:
    """Participant baseline from a resting recording's feature values."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise BaselineError("need at least 2 resting feature values")
    std = float(values.std())
    if std == 0:
        std = max(abs(float(values.mean())) * 0.05, 1e-6)
    return Baseline(modality=modality, mean=float(values.mean()), std=std,
                    duration_s=duration_s)


def arousal_flag(value: float, baseline: Baseline,
                 ratio_threshold: float = 1.5) -> str:
    """'elevated' or 'resting' relative to the participant baseline.

    SCR flags when the value reaches ratio x baseline mean. HRV is
    inverted (lower RMSSD means autonomic stress): it flags when the value
    drops to baseline mean / ratio.
    """
    if baseline is None:
        raise BaselineError("baseline not calibrated")
    if ratio_threshold <= 1.0:
        raise ValueError("ratio threshold must exceed 1.0")
    if baseline.modality == "scr":
        return "elevated" if value >= ratio_threshold * baseline.mean else "resting"
    return "elevated" if value <= baseline.mean / ratio_threshold else "resting"


def proxemics(ts: np.ndarray, hmd_positions: np.ndarray,
              avatar_positions: np.ndarray,
              avatar_transform: tuple[np.ndarray, np.ndarray] | None = None
              ) -> list[ProxemicsSample]:
    """Distance and approach velocity between the headset and the avatar.

    `avatar_transform` is an optional rigid (R, t) mapping the avatar frame
    into the headset reference frame before measuring. Velocity is the
    central difference of distance (one-sided at the ends); negative means
    approach.
    """
    ts = np.asarray(ts, dtype=float)
    hmd = np.asarray(hmd_positions, dtype=float)
    avatar = np.asarray(avatar_positions, dtype=float)
    if hmd.shape != avatar.shape or hmd.shape[0] != ts.shape[0] or hmd.shape[1] != 3:
        raise ValueError("positions must be matching (n, 3) arrays on one clock")
    if avatar_transform is not None:
        rot, trans = avatar_transform
        avatar = avatar @ np.asarray(rot, dtype=float).T + np.asarray(trans, dtype=float)
    dist = np.linalg.norm(hmd - avatar, axis=1)
    vel = np.gradient(dist, ts) if ts.size > 1 else np.zeros_like(dist)
    return [
        ProxemicsSample(t=float(t), hmd=h, avatar=a, distance_m=float(d),
                        velocity_mps=float(v))
        for t, h, a, d, v in zip(ts, hmd, avatar, dist, vel)
    ]
