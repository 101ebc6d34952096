"""Alpha-band mental-state decoding: individual alpha peak, shrinkage
covariances, spatio-spectral and power-comodulation decompositions.

Both decompositions solve a generalized symmetric eigenproblem
C_num w = lambda C_den w by whitening: factor C_den = L L^T, run a
symmetric eigensolver on L^-1 C_num L^-T and map the eigenvectors back.
The symmetric eigensolver is an in-repo cyclic Jacobi iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

ALPHA_SEARCH_BAND = (7.0, 13.0)
ALPHA_FALLBACK_HZ = 10.0
PEAK_OVER_TREND_FACTOR = 1.5


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class BandDefinition:
    """Signal band center +/- 2 Hz with 2 Hz flanking bands on both sides."""

    center_hz: float
    half_width_hz: float = 2.0
    flank_width_hz: float = 2.0

    def __post_init__(self):
        lo = self.center_hz - self.half_width_hz - self.flank_width_hz
        hi = self.center_hz + self.half_width_hz + self.flank_width_hz
        if not (1.0 < lo and hi < 40.0):
            raise ValueError(
                f"bands [{lo}, {hi}] Hz must lie inside (1, 40) Hz")

    @property
    def signal(self) -> tuple[float, float]:
        return (self.center_hz - self.half_width_hz,
                self.center_hz + self.half_width_hz)

    @property
    def flank_low(self) -> tuple[float, float]:
        return (self.center_hz - self.half_width_hz - self.flank_width_hz,
                self.center_hz - self.half_width_hz)

    @property
    def flank_high(self) -> tuple[float, float]:
        return (self.center_hz + self.half_width_hz,
                self.center_hz + self.half_width_hz + self.flank_width_hz)


@dataclass
class EegEpochSet:
    """Epoch tensor (epochs x channels x samples) on a fixed rate."""

    epochs: np.ndarray
    sample_rate: float
    channel_labels: tuple[str, ...] = ()

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs, dtype=float)
        if self.epochs.ndim != 3:
            raise ValueError("epochs must be (E, C, T)")
        if not np.all(np.isfinite(self.epochs)):
            raise ValueError("epochs contain non-finite values")
        if not self.channel_labels:
            self.channel_labels = tuple(
                f"ch{i}" for i in range(self.epochs.shape[1]))
        if self.epochs.shape[1] < 32:
            log.warning("only %d EEG channels; full pipeline expects >= 32",
                        self.epochs.shape[1])


@dataclass
class DecompositionResult:
    filters: np.ndarray        # (C, K) unmixing columns
    patterns: np.ndarray       # (C, K) forward-model columns
    eigenvalues: np.ndarray    # (K,)
    method: str                # "ssd" | "spoc"
    power: np.ndarray | None = None  # (E, K) per-epoch component power


@dataclass
class AlphaPeak:
    center_hz: float
    used_fallback: bool
    spectrum: tuple[np.ndarray, np.ndarray] | None = None


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 64
                ) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) in descending eigenvalue order with
    A @ V = V @ diag(w).
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T, atol=1e-8 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix must be square symmetric")
    M = A.copy()
    V = np.eye(n)
    scale = max(np.abs(M).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(M, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = M[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (M[q, q] - M[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = M[:, p].copy()
                rot_q = M[:, q].copy()
                M[:, p] = c * rot_p - s * rot_q
                M[:, q] = s * rot_p + c * rot_q
                rot_p = M[p, :].copy()
                rot_q = M[q, :].copy()
                M[p, :] = c * rot_p - s * rot_q
                M[q, :] = s * rot_p + c * rot_q
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(M).copy()
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def estimate_alpha_peak(data: np.ndarray, sample_rate: float,
                        min_duration_s: float = 10.0) -> AlphaPeak:
    """Individual alpha peak: channel-averaged Welch PSD maximum in 7-13 Hz.

    Falls back to 10 Hz (with a warning) when no local maximum exceeds the
    1/f background trend; exactly tied peaks resolve to the lower frequency.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[-1]
    if n < min_duration_s * sample_rate:
        raise dsp.DegenerateInputError(
            f"need >= {min_duration_s:.0f} s of data for the alpha peak")
    seg = int(min(4.0 * sample_rate, n))
    freqs, psd = dsp.welch_psd(data, sample_rate, segment_length=seg)
    mean_psd = psd.mean(axis=0) if psd.ndim > 1 else psd

    # 1/f trend fit in log-log over the flanks of the search band
    fit_mask = ((freqs >= 2.0) & (freqs <= 30.0)
                & ((freqs < ALPHA_SEARCH_BAND[0] - 1.0)
                   | (freqs > ALPHA_SEARCH_BAND[1] + 1.0)))
    valid = fit_mask & (mean_psd > 0)
    if valid.sum() >= 4:
        coeffs = np.polyfit(np.log(freqs[valid]), np.log(mean_psd[valid]), 1)
        trend = np.exp(np.polyval(coeffs, np.log(np.maximum(freqs, 1e-6))))
    else:
        trend = np.full_like(mean_psd, np.median(mean_psd[mean_psd > 0]))

    band = (freqs >= ALPHA_SEARCH_BAND[0]) & (freqs <= ALPHA_SEARCH_BAND[1])
    band_idx = np.flatnonzero(band)
    best_f, best_p = None, -np.inf
    for i in band_idx:
        if 0 < i < len(freqs) - 1 and mean_psd[i] >= mean_psd[i - 1] \
                and mean_psd[i] >= mean_psd[i + 1] \
                and mean_psd[i] > PEAK_OVER_TREND_FACTOR * trend[i]:
            if mean_psd[i] > best_p:  # strict: equal peaks keep the lower f
                best_f, best_p = freqs[i], mean_psd[i]
    if best_f is None:
        log.warning("no alpha peak above the 1/f trend; falling back to %.1f Hz",
                    ALPHA_FALLBACK_HZ)
        return AlphaPeak(ALPHA_FALLBACK_HZ, True, (freqs, mean_psd))
    return AlphaPeak(float(best_f), False, (freqs, mean_psd))


def epoch_covariances(epochs: np.ndarray, shrinkage: float = 0.05
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Per-epoch covariances shrunk toward the scaled identity, plus the mean.

    C_e' = (1-gamma) C_e + gamma (tr(C_e)/C) I; gamma in [0, 1]. With
    gamma > 0 every output is positive definite for non-zero epochs.
    """
    epochs = np.asarray(epochs, dtype=float)
    if epochs.ndim != 3:
        raise ValueError("epochs must be (E, C, T)")
    if not np.all(np.isfinite(epochs)):
        raise ValueError("epochs contain non-finite values")
    if not (0.0 <= shrinkage <= 1.0):
        raise ValueError("shrinkage must lie in [0, 1]")
    n_epochs, n_channels, n_samples = epochs.shape
    if n_samples <= n_channels:
        log.warning("epoch length %d <= channel count %d; covariances are "
                    "poorly conditioned", n_samples, n_channels)
    centered = epochs - epochs.mean(axis=2, keepdims=True)
    covs = np.einsum("ect,edt->ecd", centered, centered) / max(n_samples - 1, 1)
    traces = np.trace(covs, axis1=1, axis2=2) / n_channels
    eye = np.eye(n_channels)
    covs = (1.0 - shrinkage) * covs + shrinkage * traces[:, None, None] * eye
    return covs, covs.mean(axis=0)


def _whitened_eig(c_num: np.ndarray, c_den: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Solve C_num w = lambda C_den w; columns satisfy W^T C_den W = I."""
    try:
        L = np.linalg.cholesky(c_den)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(
            "denominator covariance is not positive definite; "
            "apply shrinkage") from exc
    Li_num = np.linalg.solve(L, c_num)
    M = np.linalg.solve(L, Li_num.T).T
    M = 0.5 * (M + M.T)
    w, V = jacobi_eigh(M)
    W = np.linalg.solve(L.T, V)
    return w, W


def _patterns_from(cov: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Forward patterns A = C W (W^T C W)^-1 for the given data covariance."""
    cw = cov @ filters
    gram = filters.T @ cw
    return cw @ np.linalg.inv(gram)


def band_filter_epochs(epochs: np.ndarray, sample_rate: float,
                       low: float, high: float, order: int = 4) -> np.ndarray:
    """Zero-phase bandpass applied epoch-wise along the sample axis."""
    spec = dsp.FilterSpec("bandpass", sample_rate, low=low, high=high, order=order)
    sos = dsp.design_filter(spec)
    return dsp.apply_filter(sos, np.asarray(epochs, dtype=float),
                            zero_phase=True, axis=-1)


def ssd(epoch_set: EegEpochSet, band: BandDefinition, n_components: int,
        shrinkage: float = 0.05) -> DecompositionResult:
    """Spatial filters maximizing signal-band over flank-band power.

    Solves the generalized eigenproblem (C_signal, C_flank) where C_flank
    sums the two flanking-band covariances; filters are returned in
    descending eigenvalue order with their forward patterns.
    """
    epochs = epoch_set.epochs
    n_channels = epochs.shape[1]
    if n_components > n_channels:
        raise DecompositionError(
            f"requested {n_components} components from {n_channels} channels")
    rate = epoch_set.sample_rate
    sig = band_filter_epochs(epochs, rate, *band.signal)
    flank_lo = band_filter_epochs(epochs, rate, *band.flank_low)
    flank_hi = band_filter_epochs(epochs, rate, *band.flank_high)
    _, c_signal = epoch_covariances(sig, shrinkage)
    _, c_lo = epoch_covariances(flank_lo, shrinkage)
    _, c_hi = epoch_covariances(flank_hi, shrinkage)
    c_flank = c_lo + c_hi
    w, W = _whitened_eig(c_signal, c_flank)
    W = W[:, :n_components]
    return DecompositionResult(
        filters=W,
        patterns=_patterns_from(c_signal, W),
        eigenvalues=w[:n_components],
        method="ssd",
    )


def spoc(epochs: np.ndarray | EegEpochSet, z: np.ndarray, n_components: int,
         shrinkage: float = 0.05) -> DecompositionResult:
    """Spatial filters whose component power tracks the target series z.

    Solves C_z w = lambda C w with C_z = mean_e(z_e C_e), C = mean_e(C_e);
    z is z-scored first (constant z is degenerate). Components are ordered
    by |lambda| descending; per-epoch power p_e = w^T C_e w is attached.
    """
    data = epochs.epochs if isinstance(epochs, EegEpochSet) else \
        np.asarray(epochs, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.shape[0] != data.shape[0]:
        raise ValueError("z must have one value per epoch")
    if data.shape[0] < 10:
        raise DecompositionError("need at least 10 epochs for spoc")
    if z.std() == 0:
        raise DecompositionError("target series has zero variance")
    zn = (z - z.mean()) / z.std()
    covs, c_mean = epoch_covariances(data, shrinkage)
    c_z = np.einsum("e,ecd->cd", zn, covs) / len(zn)
    w, W = _whitened_eig(c_z, c_mean)
    order = np.argsort(np.abs(w))[::-1][:n_components]
    W = W[:, order]
    power = np.einsum("ck,ecd,dk->ek", W, covs, W)
    return DecompositionResult(
        filters=W,
        patterns=_patterns_from(c_mean, W),
        eigenvalues=w[order],
        method="spoc",
        power=power,
    )


@dataclass
class DecodeResult:
    predicted: np.ndarray       # standardized per-epoch component power
    r: float | None             # Pearson r against ground truth, if given


def decode_target(filters: np.ndarray, epochs: np.ndarray | EegEpochSet,
                  truth: np.ndarray | None = None, component: int = 0,
                  shrinkage: float = 0.05) -> DecodeResult:
    """Per-epoch power of one fitted component, standardized; Pearson r
    against `truth` when provided (needs >= 2 epochs)."""
    data = epochs.epochs if isinstance(epochs, EegEpochSet) else \
        np.asarray(epochs, dtype=float)
    filters = np.atleast_2d(np.asarray(filters, dtype=float))
    if filters.shape[0] != data.shape[1]:
        raise ValueError(
            f"filters for {filters.shape[0]} channels, data has {data.shape[1]}")
    w = filters[:, component]
    covs, _ = epoch_covariances(data, shrinkage)
    p = np.einsum("c,ecd,d->e", w, covs, w)
    if p.std() == 0:
        raise DecompositionError("component power is constant")
    predicted = (p - p.mean()) / p.std()
    r = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        if truth.shape[0] != predicted.shape[0]:
            raise ValueError("truth length mismatch")
        if predicted.shape[0] < 2:
            raise DecompositionError("correlation undefined for one epoch")
        r = float(np.corrcoef(predicted, truth)[0, 1])
    return DecodeResult(predicted=predicted, r=r)


def reject_artifacts(epochs: np.ndarray, peak_to_peak_uv: float) -> np.ndarray:
    """Mask of epochs whose worst channel peak-to-peak stays below threshold."""
    if peak_to_peak_uv <= 0:
        raise ValueError("threshold must be positive")
    data = np.asarray(epochs, dtype=float)
    ptp = data.max(axis=2) - data.min(axis=2)
    return ptp.max(axis=1) < peak_to_peak_uv


@dataclass
class MentalStateModel:
    """Chained decomposition fit: band enhancement then power comodulation.

    Filters/patterns are composed back to channel space so decoded
    components remain comparable to channel-level forward models.
    """

    band: BandDefinition
    filters: np.ndarray    # (C, K) channel-space
    patterns: np.ndarray   # (C, K)
    ssd_result: DecompositionResult
    spoc_result: DecompositionResult
    training_correlations: list[float] = field(default_factory=list)

    def transform(self, epoch_set: EegEpochSet, truth=None,
                  component: int = 0) -> DecodeResult:
        banded = band_filter_epochs(epoch_set.epochs, epoch_set.sample_rate,
                                    *self.band.signal)
        return decode_target(self.filters, banded, truth, component)


def fit_mental_state(epoch_set: EegEpochSet, z: np.ndarray,
                     band: BandDefinition | None = None,
                     n_ssd: int | None = None, n_spoc: int = 1,
                     shrinkage: float = 0.05) -> MentalStateModel:
    """Fit band enhancement + comodulation against the target series.

    Returns a channel-space model; per-component training correlations are
    reported so operators can inspect the (participant-dependent) ranking.
    """
    if band is None:
        peak = estimate_alpha_peak(
            epoch_set.epochs.transpose(1, 0, 2).reshape(epoch_set.epochs.shape[1], -1),
            epoch_set.sample_rate)
        band = BandDefinition(peak.center_hz)
    n_channels = epoch_set.epochs.shape[1]
    if n_ssd is None:
        n_ssd = min(n_channels, max(4, n_channels // 2))
    ssd_res = ssd(epoch_set, band, n_ssd, shrinkage)
    banded = band_filter_epochs(epoch_set.epochs, epoch_set.sample_rate,
                                *band.signal)
    components = np.einsum("ck,ect->ekt", ssd_res.filters, banded)
    spoc_res = spoc(components, z, min(n_spoc, n_ssd), shrinkage)
    filters = ssd_res.filters @ spoc_res.filters
    patterns = ssd_res.patterns @ spoc_res.patterns
    zn = (z - z.mean()) / z.std()
    corrs = []
    for k in range(spoc_res.filters.shape[1]):
        p = spoc_res.power[:, k]
        corrs.append(float(np.corrcoef(p, zn)[0, 1]) if p.std() > 0 else 0.0)
    return MentalStateModel(
        band=band, filters=filters, patterns=patterns,
        ssd_result=ssd_res, spoc_result=spoc_res,
        training_correlations=corrs,
    )
