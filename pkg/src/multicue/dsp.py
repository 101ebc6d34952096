"""Shared signal primitives: IIR filters, normalization, spectra, epoching.

All functions are pure and operate on 1-D numpy arrays unless stated
otherwise; multichannel callers apply them per channel or pass ``axis``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

log = logging.getLogger(__name__)

STABILITY_MARGIN = 1e-6


class DegenerateInputError(ValueError):
    """Input has no usable variation (constant signal, zero variance)."""


class FilterDesignError(ValueError):
    """Filter specification cannot be realized at the given sample rate."""


@dataclass(frozen=True)
class FilterSpec:
    """IIR filter request.

    ``low``/``high`` are corner frequencies in Hz. Highpass uses ``low``,
    lowpass uses ``high``, bandpass uses both, notch uses ``low`` as the
    center frequency together with ``notch_q``. ``order`` is the overall
    filter order (even).
    """

    kind: str  # highpass | lowpass | bandpass | notch
    sample_rate: float
    low: float | None = None
    high: float | None = None
    order: int = 4
    notch_q: float = 30.0

    def __post_init__(self):
        if self.kind not in ("highpass", "lowpass", "bandpass", "notch"):
            raise FilterDesignError(f"unknown filter kind {self.kind!r}")
        if self.sample_rate <= 0:
            raise FilterDesignError("sample_rate must be positive")
        if self.order <= 0 or self.order % 2 != 0:
            raise FilterDesignError("order must be a positive even integer")
        nyq = self.sample_rate / 2.0
        for name, f in (("low", self.low), ("high", self.high)):
            if f is not None and not (0.0 < f < nyq):
                raise FilterDesignError(
                    f"{name} corner {f} Hz outside (0, {nyq}) at rate {self.sample_rate}"
                )
        if self.kind == "highpass" and self.low is None:
            raise FilterDesignError("highpass needs a low corner")
        if self.kind == "lowpass" and self.high is None:
            raise FilterDesignError("lowpass needs a high corner")
        if self.kind == "bandpass":
            if self.low is None or self.high is None:
                raise FilterDesignError("bandpass needs both corners")
            if not self.low < self.high:
                raise FilterDesignError("bandpass requires low < high")
        if self.kind == "notch":
            if self.low is None:
                raise FilterDesignError("notch needs a center frequency in `low`")
            if self.notch_q <= 0:
                raise FilterDesignError("notch_q must be positive")


@dataclass(frozen=True)
class EpochSpec:
    """Sliding epoch segmentation: window ``length`` and ``hop`` in seconds."""

    length: float
    hop: float

    def __post_init__(self):
        if not (0.0 < self.hop <= self.length):
            raise ValueError("require 0 < hop <= length")


def design_filter(spec: FilterSpec) -> np.ndarray:
    """Design a stable biquad cascade (second-order sections) for `spec`.

    Butterworth for highpass/lowpass/bandpass; a second-order resonator
    for notch. Raises FilterDesignError if the result is not comfortably
    stable.
    """
    fs = spec.sample_rate
    if spec.kind == "highpass":
        sos = sps.butter(spec.order, spec.low, btype="highpass", fs=fs, output="sos")
    elif spec.kind == "lowpass":
        sos = sps.butter(spec.order, spec.high, btype="lowpass", fs=fs, output="sos")
    elif spec.kind == "bandpass":
        # scipy's N doubles for bandpass; halve to keep the overall order
        n = max(spec.order // 2, 1)
        sos = sps.butter(n, [spec.low, spec.high], btype="bandpass", fs=fs, output="sos")
    else:  # notch
        b, a = sps.iirnotch(spec.low, spec.notch_q, fs=fs)
        sos = sps.tf2sos(b, a)
    if not is_stable(sos):
        raise FilterDesignError(f"designed filter is not stable for {spec}")
    return sos


def design_notch_cascade(base_hz: float, sample_rate: float, n_harmonics: int = 4,
                         q: float = 30.0) -> np.ndarray:
    """Cascade of notches at base_hz and its harmonics (those below Nyquist)."""
    sections = []
    for k in range(1, n_harmonics + 1):
        f = base_hz * k
        if f >= 0.45 * sample_rate:
            break
        sections.append(design_filter(FilterSpec("notch", sample_rate, low=f, notch_q=q)))
    if not sections:
        raise FilterDesignError(
            f"no notch below Nyquist for base {base_hz} Hz at {sample_rate} Hz"
        )
    return np.vstack(sections)


def emg_bandpass_spec(sample_rate: float, low: float = 100.0, high: float = 400.0,
                      order: int = 4) -> FilterSpec:
    """Bandpass spec for surface EMG with a Nyquist guard.

    At rates where the upper corner would sit on or above Nyquist the
    corner is clamped to 0.45 * rate and a warning is logged.
    """
    guard = 0.45 * sample_rate
    if high >= guard:
        log.warning(
            "EMG bandpass upper corner %.0f Hz clamped to %.0f Hz at rate %.0f Hz",
            high, guard, sample_rate,
        )
        high = guard
    return FilterSpec("bandpass", sample_rate, low=low, high=high, order=order)


def is_stable(sos: np.ndarray, margin: float = STABILITY_MARGIN) -> bool:
    """True when every pole of the cascade is inside the unit circle."""
    sos = np.atleast_2d(sos)
    for section in sos:
        poles = np.roots(section[3:])
        if poles.size and np.max(np.abs(poles)) >= 1.0 - margin:
            return False
    return True


def filter_response(sos: np.ndarray, sample_rate: float, freqs) -> np.ndarray:
    """|H(f)| of the cascade evaluated at `freqs` (Hz)."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    _, h = sps.sosfreqz(sos, worN=2 * np.pi * freqs / sample_rate)
    return np.abs(h)


def apply_filter(sos: np.ndarray, x: np.ndarray, zero_phase: bool = False,
                 axis: int = -1) -> np.ndarray:
    """Run the cascade over `x`; `zero_phase` filters forward and backward."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DegenerateInputError("empty signal")
    n_order = 2 * np.atleast_2d(sos).shape[0]
    if zero_phase:
        if x.shape[axis] < 3 * n_order:
            raise DegenerateInputError(
                f"zero-phase mode needs length >= {3 * n_order}, got {x.shape[axis]}"
            )
        return sps.sosfiltfilt(sos, x, axis=axis)
    return sps.sosfilt(sos, x, axis=axis)


def zscore(x: np.ndarray) -> np.ndarray:
    """Standardize to zero mean, unit (population) standard deviation."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DegenerateInputError("empty signal")
    std = x.std()
    if not np.isfinite(std) or std <= 1e-12 * max(abs(x.mean()), 1.0):
        raise DegenerateInputError("zero variance signal cannot be z-scored")
    return (x - x.mean()) / std


def rectify(x: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(x, dtype=float))


def minmax_scale(x: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; constant input is degenerate."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DegenerateInputError("empty signal")
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateInputError("constant signal cannot be min-max scaled")
    return (x - lo) / (hi - lo)


def welch_psd(x: np.ndarray, sample_rate: float, segment_length: int,
              overlap: float = 0.5):
    """Welch power spectral density with a Hann window.

    Returns (frequencies, densities). `segment_length` in samples,
    `overlap` as a fraction of the segment.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < segment_length:
        raise DegenerateInputError(
            f"signal length {x.shape[-1]} < segment_length {segment_length}"
        )
    noverlap = int(segment_length * overlap)
    freqs, psd = sps.welch(
        x, fs=sample_rate, window="hann", nperseg=segment_length,
        noverlap=noverlap, detrend="constant", axis=-1,
    )
    return freqs, psd


def segment_epochs(x: np.ndarray, sample_rate: float, spec: EpochSpec) -> np.ndarray:
    """Slice `x` into overlapping epochs along the last axis.

    Returns an array of shape (n_epochs, ..., epoch_samples); epoch count
    is floor((N - L) / H) + 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    length = int(round(spec.length * sample_rate))
    hop = int(round(spec.hop * sample_rate))
    if length <= 0 or hop <= 0:
        raise ValueError("epoch length and hop must be at least one sample")
    if n < length:
        raise DegenerateInputError(
            f"signal of {n} samples shorter than one epoch ({length})"
        )
    count = (n - length) // hop + 1
    idx = np.arange(length)[None, :] + hop * np.arange(count)[:, None]
    epochs = x[..., idx]  # (..., E, L)
    return np.moveaxis(epochs, -2, 0)
