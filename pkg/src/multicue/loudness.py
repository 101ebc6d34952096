"""Stationary Zwicker loudness (third-octave method) and band-level helpers.

Implements the classic DIN 45631 procedure used by the stationary method of
the ISO 532-1 standard: 28 third-octave band levels (25 Hz .. 12.5 kHz) are
corrected by equal-loudness contours at low frequencies, combined into 20
critical bands, mapped to core loudness and integrated over the critical
band rate with upper-slope spreading. Normalized so a 1 kHz tone at
40 dB SPL (free field) yields 1 sone.
"""

from __future__ import annotations

import numpy as np

from .dsp import DegenerateInputError

# Nominal third-octave center frequencies, 25 Hz .. 12.5 kHz.
THIRD_OCTAVE_CENTERS = np.array([
    25.0, 31.5, 40.0, 50.0, 63.0, 80.0, 100.0, 125.0, 160.0, 200.0, 250.0,
    315.0, 400.0, 500.0, 630.0, 800.0, 1000.0, 1250.0, 1600.0, 2000.0,
    2500.0, 3150.0, 4000.0, 5000.0, 6300.0, 8000.0, 10000.0, 12500.0,
])

N_BANDS = 28
SILENCE_DB = -100.0

# Level ranges for the low-frequency equal-loudness correction.
_RAP = np.array([45.0, 55.0, 65.0, 71.0, 80.0, 90.0, 100.0, 120.0])

# Level reductions (dB) within the ranges above, for the 11 bands <= 250 Hz.
_DLL = np.array([
    [-32.0, -24.0, -16.0, -10.0, -5.0, 0.0, -7.0, -3.0, 0.0, -2.0, 0.0],
    [-29.0, -22.0, -15.0, -10.0, -4.0, 0.0, -7.0, -2.0, 0.0, -2.0, 0.0],
    [-27.0, -19.0, -14.0, -9.0, -4.0, 0.0, -6.0, -2.0, 0.0, -2.0, 0.0],
    [-25.0, -17.0, -12.0, -9.0, -3.0, 0.0, -5.0, -2.0, 0.0, -2.0, 0.0],
    [-23.0, -16.0, -11.0, -7.0, -3.0, 0.0, -4.0, -1.0, 0.0, -1.0, 0.0],
    [-20.0, -14.0, -10.0, -6.0, -3.0, 0.0, -4.0, -1.0, 0.0, -1.0, 0.0],
    [-18.0, -12.0, -9.0, -6.0, -2.0, 0.0, -3.0, -1.0, 0.0, -1.0, 0.0],
    [-15.0, -10.0, -8.0, -4.0, -2.0, 0.0, -3.0, -1.0, 0.0, -1.0, 0.0],
])

# Critical-band level at the threshold in quiet.
_LTQ = np.array([30.0, 18.0, 12.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 3.0,
                 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0])

# Ear transmission attenuation.
_A0 = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                -0.5, -1.6, -3.2, -5.4, -5.6, -4.0, -1.5, 2.0, 5.0, 12.0])

# Free-to-diffuse field level difference.
_DDF = np.array([0.0, 0.0, 0.5, 0.9, 1.2, 1.6, 2.3, 2.8, 3.0, 2.0,
                 0.0, -1.4, -2.0, -1.9, -1.0, 0.5, 3.0, 4.0, 4.3, 4.0])

# Third-octave to critical-band level adaptation.
_DCB = np.array([-0.25, -0.6, -0.8, -0.8, -0.5, 0.0, 0.5, 1.1, 1.5, 1.7,
                 1.8, 1.8, 1.7, 1.6, 1.4, 1.2, 0.8, 0.5, 0.0, -0.5])

# Upper limits of the approximated critical bands (Bark).
_ZUP = np.array([0.9, 1.8, 2.8, 3.5, 4.4, 5.4, 6.6, 7.9, 9.2, 10.6, 12.3,
                 13.8, 15.2, 16.7, 18.1, 19.3, 20.6, 21.8, 22.7, 23.6, 24.0])

# Specific-loudness ranges for upper-slope steepness selection.
_RNS = np.array([21.5, 18.0, 15.1, 11.5, 9.0, 6.1, 4.4, 3.1, 2.13, 1.36,
                 0.82, 0.42, 0.30, 0.22, 0.15, 0.10, 0.035, 0.0])

# Upper-slope steepness (sone/Bark) per RNS range and critical band group.
_USL = np.array([
    [13.00, 8.20, 6.30, 5.50, 5.50, 5.50, 5.50, 5.50],
    [9.00, 7.50, 6.00, 5.10, 4.50, 4.50, 4.50, 4.50],
    [7.80, 6.70, 5.60, 4.90, 4.40, 3.90, 3.90, 3.90],
    [6.20, 5.40, 4.60, 4.00, 3.50, 3.20, 3.20, 3.20],
    [4.50, 3.80, 3.60, 3.20, 2.90, 2.70, 2.70, 2.70],
    [3.70, 3.00, 2.80, 2.35, 2.20, 2.20, 2.20, 2.20],
    [2.90, 2.30, 2.10, 1.90, 1.80, 1.70, 1.70, 1.70],
    [2.40, 1.70, 1.50, 1.35, 1.30, 1.30, 1.30, 1.30],
    [1.95, 1.45, 1.30, 1.15, 1.10, 1.10, 1.10, 1.10],
    [1.50, 1.20, 0.94, 0.86, 0.82, 0.82, 0.82, 0.82],
    [0.72, 0.67, 0.64, 0.63, 0.62, 0.62, 0.62, 0.62],
    [0.59, 0.53, 0.51, 0.50, 0.42, 0.42, 0.42, 0.42],
    [0.40, 0.33, 0.26, 0.24, 0.22, 0.22, 0.22, 0.22],
    [0.27, 0.21, 0.20, 0.18, 0.17, 0.17, 0.17, 0.17],
    [0.16, 0.15, 0.14, 0.12, 0.11, 0.11, 0.11, 0.11],
    [0.12, 0.11, 0.10, 0.08, 0.08, 0.08, 0.08, 0.08],
    [0.09, 0.08, 0.07, 0.06, 0.06, 0.06, 0.06, 0.05],
    [0.06, 0.05, 0.03, 0.02, 0.02, 0.02, 0.02, 0.02],
])


def stationary_loudness(levels_db: np.ndarray, field_type: str = "free") -> float:
    """Total loudness in sones from 28 third-octave band levels (dB SPL)."""
    levels = np.asarray(levels_db, dtype=float)
    if levels.shape != (N_BANDS,):
        raise ValueError(f"need {N_BANDS} third-octave levels, got {levels.shape}")
    if field_type not in ("free", "diffuse"):
        raise ValueError("field_type must be 'free' or 'diffuse'")

    # Low-frequency equal-loudness correction and intensities (bands <= 250 Hz).
    ti = np.zeros(11)
    for i in range(11):
        j = 0
        while j < 7 and levels[i] > _RAP[j] - _DLL[j, i]:
            j += 1
        ti[i] = 10.0 ** (0.1 * (levels[i] + _DLL[j, i]))

    # First three critical bands from the corrected low-frequency intensities.
    lcb = np.array([ti[0:6].sum(), ti[6:9].sum(), ti[9:11].sum()])
    with np.errstate(divide="ignore"):
        lcb = 10.0 * np.log10(np.maximum(lcb, 1e-30))

    # Core loudness per critical band.
    nm = np.zeros(21)
    for i in range(20):
        le = lcb[i] if i <= 2 else levels[i + 8]
        le -= _A0[i]
        if field_type == "diffuse":
            le += _DDF[i]
        if le > _LTQ[i]:
            le -= _DCB[i]
            s = 0.25
            mp1 = 0.0635 * 10.0 ** (0.025 * _LTQ[i])
            mp2 = (1.0 - s + s * 10.0 ** (0.1 * (le - _LTQ[i]))) ** 0.25 - 1.0
            nm[i] = max(mp1 * mp2, 0.0)
    # Lowest band: absolute-threshold dependence correction.
    corr = 0.4 + 0.32 * nm[0] ** 0.2
    nm[0] *= min(corr, 1.0)

    # Integrate over the critical-band rate with upper-slope spreading.
    zup = _ZUP + 0.0001
    total = 0.0
    z1 = 0.0  # left edge (Bark) of the segment being accumulated
    n1 = 0.0  # specific loudness at the left edge
    j = 17
    for i in range(21):
        ig = min(max(i - 1, 0), 7)
        while z1 < zup[i]:
            if n1 <= nm[i]:
                if n1 < nm[i]:
                    # select the slope-steepness range for this band's level
                    j = 0
                    while j < 17 and _RNS[j] > nm[i]:
                        j += 1
                z2 = zup[i]
                n2 = nm[i]
                total += n2 * (z2 - z1)
            else:
                # decaying upper slope of the previous, louder band
                n2 = max(_RNS[j], nm[i])
                dz = (n1 - n2) / _USL[j, ig]
                z2 = z1 + dz
                if z2 > zup[i]:
                    z2 = zup[i]
                    dz = z2 - z1
                    n2 = n1 - dz * _USL[j, ig]
                total += dz * (n1 + n2) / 2.0
            while j < 17 and n2 <= _RNS[j]:
                j += 1
            z1 = z2
            n1 = n2

    total = max(total, 0.0)
    # Standard rounding: 3 decimals below 16 sone, 2 above.
    if total <= 16.0:
        total = np.floor(total * 1000.0 + 0.5) / 1000.0
    else:
        total = np.floor(total * 100.0 + 0.5) / 100.0
    return float(total)


def third_octave_levels(x: np.ndarray, sample_rate: float,
                        calibration_offset_db: float) -> np.ndarray:
    """Third-octave band levels (dB SPL) of a digital signal block.

    `calibration_offset_db` is the SPL that a digital signal of unit RMS
    produces at the reference distance, i.e. dB SPL = dBFS_rms + offset.
    Bands above Nyquist report silence.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 16:
        raise DegenerateInputError("block too short for band levels")
    n = x.size
    window = np.hanning(n)
    spec = np.fft.rfft(x * window)
    # Energy normalization (Parseval): band sums give mean signal power,
    # so a sine of amplitude a integrates to a^2/2 regardless of bin phase.
    power = (np.abs(spec) ** 2) * 2.0 / (n * np.sum(window ** 2))
    power[0] /= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)

    levels = np.full(N_BANDS, SILENCE_DB)
    nyq = sample_rate / 2.0
    edge = 2.0 ** (1.0 / 6.0)
    for i, fc in enumerate(THIRD_OCTAVE_CENTERS):
        lo, hi = fc / edge, fc * edge
        if lo >= nyq:
            continue
        band = power[(freqs >= lo) & (freqs < min(hi, nyq))]
        p = band.sum()
        if p > 0.0:
            levels[i] = max(10.0 * np.log10(p) + calibration_offset_db, SILENCE_DB)
    return levels


def block_loudness(x: np.ndarray, sample_rate: float, calibration_offset_db: float,
                   field_type: str = "free") -> float:
    """Sones for one stationary signal block."""
    if np.max(np.abs(x)) == 0.0:
        return 0.0
    levels = third_octave_levels(x, sample_rate, calibration_offset_db)
    return stationary_loudness(levels, field_type)
