"""Facial-affect fusion: EMG preprocessing, inter-muscle RBF kernel features,
embedding projection and a late-fusion classification head.

The visual branch is an external provider: 128-D embeddings per aligned
window are ingested, never computed here. The EMG branch and the fusion
head are fully in-repo, with analytic gradients for training.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

N_EMG_CHANNELS = 7
KERNEL_VECTOR_DIM = N_EMG_CHANNELS * (N_EMG_CHANNELS - 1) // 2  # 21
EMBEDDING_DIM = 128
FUSED_DIM = 2 * EMBEDDING_DIM
EMOTIONS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise",
            "neutral")
SERIALIZATION_VERSION = 1

_KI, _KJ = np.triu_indices(N_EMG_CHANNELS, k=1)


class EmgError(ValueError):
    pass


@dataclass
class EmgBaseline:
    """Per-channel resting statistics used by the preprocessing chain."""

    mean: np.ndarray        # (7,)
    clip_abs: np.ndarray    # (7,), |amplitude| ceiling from the percentile
    clip_percentile: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.clip_abs = np.asarray(self.clip_abs, dtype=float)
        if self.mean.shape != (N_EMG_CHANNELS,) or \
                self.clip_abs.shape != (N_EMG_CHANNELS,):
            raise EmgError("baseline stats must cover the 7 EMG channels")


@dataclass
class EmgWindow:
    values: np.ndarray         # (7, N) in [0, 1]
    sample_rate: float
    t0: float
    degenerate_channels: list[int] = field(default_factory=list)


@dataclass
class KernelFeature:
    matrix: np.ndarray       # (7, 7)
    vector: np.ndarray       # (21,), upper triangle without the diagonal
    bandwidth: float


def _emg_filter_chain(sample_rate: float):
    notch = dsp.design_notch_cascade(50.0, sample_rate, n_harmonics=4)
    band = dsp.design_filter(dsp.emg_bandpass_spec(sample_rate))
    return notch, band


def filter_emg(raw: np.ndarray, sample_rate: float) -> np.ndarray:
    """Notch (50 Hz + harmonics) then 100-400 Hz bandpass, zero-phase."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    notch, band = _emg_filter_chain(sample_rate)
    out = dsp.apply_filter(notch, raw, zero_phase=True, axis=-1)
    return dsp.apply_filter(band, out, zero_phase=True, axis=-1)


def calibrate_emg_baseline(resting: np.ndarray, sample_rate: float,
                           clip_percentile: float = 99.5) -> EmgBaseline:
    """Baseline from a resting recording: filtered per-channel mean and the
    absolute-amplitude clip ceiling at `clip_percentile`."""
    resting = np.asarray(resting, dtype=float)
    if resting.shape[0] != N_EMG_CHANNELS:
        raise EmgError(f"expected {N_EMG_CHANNELS} channels, got {resting.shape[0]}")
    filtered = filter_emg(resting, sample_rate)
    mean = filtered.mean(axis=1)
    centered = np.abs(filtered - mean[:, None])
    clip_abs = np.percentile(centered, clip_percentile, axis=1)
    clip_abs = np.maximum(clip_abs, 1e-12)
    return EmgBaseline(mean=mean, clip_abs=clip_abs,
                       clip_percentile=clip_percentile)


def preprocess_emg(raw: np.ndarray, sample_rate: float, baseline: EmgBaseline,
                   t0: float = 0.0) -> EmgWindow:
    """Fixed-order chain: notch + harmonics, bandpass, baseline subtraction,
    amplitude clipping, full-wave rectification, min-max scaling.

    Channels with no variation are flagged and filled with 0.5.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if raw.shape[0] != N_EMG_CHANNELS:
        raise EmgError(f"expected {N_EMG_CHANNELS} channels, got {raw.shape[0]}")
    if baseline is None:
        raise EmgError("baseline stats not calibrated")
    x = filter_emg(raw, sample_rate)
    x = x - baseline.mean[:, None]
    x = np.clip(x, -baseline.clip_abs[:, None], baseline.clip_abs[:, None])
    x = dsp.rectify(x)
    out = np.empty_like(x)
    degenerate = []
    for ch in range(N_EMG_CHANNELS):
        lo, hi = x[ch].min(), x[ch].max()
        if hi - lo < 1e-12:
            degenerate.append(ch)
            out[ch] = 0.5
        else:
            out[ch] = (x[ch] - lo) / (hi - lo)
    if degenerate:
        log.warning("EMG channels %s degenerate; filled with 0.5", degenerate)
    return EmgWindow(values=out, sample_rate=sample_rate, t0=t0,
                     degenerate_channels=degenerate)


def rbf_kernel(window: EmgWindow | np.ndarray, bandwidth: float | None = None
               ) -> KernelFeature:
    """Inter-muscle RBF kernel K[i,j] = exp(-||x_i - x_j||^2 / (2 sigma^2)).

    x_i is channel i's full sample vector. Without an explicit bandwidth,
    sigma is the median pairwise channel distance (median heuristic).
    """
    values = window.values if isinstance(window, EmgWindow) else \
        np.atleast_2d(np.asarray(window, dtype=float))
    if values.shape[0] != N_EMG_CHANNELS:
        raise EmgError(f"expected {N_EMG_CHANNELS} channels, got {values.shape[0]}")
    if values.shape[1] < 2:
        raise EmgError("window must contain at least 2 samples")
    diffs = values[_KI] - values[_KJ]
    dists = np.linalg.norm(diffs, axis=1)
    if bandwidth is None:
        med = float(np.median(dists))
        bandwidth = med if med > 0 else 1.0
    if bandwidth <= 0:
        raise EmgError("bandwidth must be positive")
    K = np.eye(N_EMG_CHANNELS)
    vals = np.exp(-dists ** 2 / (2.0 * bandwidth ** 2))
    K[_KI, _KJ] = vals
    K[_KJ, _KI] = vals
    return KernelFeature(matrix=K, vector=vals.copy(), bandwidth=float(bandwidth))


@dataclass
class ProjectionModel:
    """Affine map + tanh nonlinearity onto the shared embedding space."""

    weights: np.ndarray  # (EMBEDDING_DIM, in_dim)
    bias: np.ndarray     # (EMBEDDING_DIM,)

    @classmethod
    def identity_extended(cls, in_dim: int = KERNEL_VECTOR_DIM) -> "ProjectionModel":
        w = np.zeros((EMBEDDING_DIM, in_dim))
        w[:min(EMBEDDING_DIM, in_dim), :min(EMBEDDING_DIM, in_dim)] = \
            np.eye(min(EMBEDDING_DIM, in_dim))
        return cls(weights=w, bias=np.zeros(EMBEDDING_DIM))

    @classmethod
    def random(cls, in_dim: int = KERNEL_VECTOR_DIM, rng_seed: int = 0
               ) -> "ProjectionModel":
        rng = np.random.default_rng(rng_seed)
        scale = 1.0 / np.sqrt(in_dim)
        return cls(weights=rng.normal(0, scale, (EMBEDDING_DIM, in_dim)),
                   bias=np.zeros(EMBEDDING_DIM))

    def project(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.weights.shape[1]:
            raise ValueError(
                f"feature dim {features.shape[-1]} != projection input "
                f"{self.weights.shape[1]}")
        return np.tanh(features @ self.weights.T + self.bias)

    def to_json(self) -> str:
        return json.dumps({
            "version": SERIALIZATION_VERSION,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProjectionModel":
        doc = json.loads(text)
        if doc.get("version") != SERIALIZATION_VERSION:
            raise ValueError("unsupported projection version")
        return cls(weights=np.array(doc["weights"]), bias=np.array(doc["bias"]))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class FusionHead:
    """Fully connected classifier over the fused 256-D embedding.

    tanh hidden layers, softmax output over the 7 emotion classes.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros(cls, hidden: tuple[int, ...] = ()) -> "FusionHead":
        dims = (FUSED_DIM, *hidden, len(EMOTIONS))
        return cls(
            weights=[np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1)],
            biases=[np.zeros(dims[i + 1]) for i in range(len(dims) - 1)],
        )

    @classmethod
    def random(cls, hidden: tuple[int, ...] = (64,), rng_seed: int = 0) -> "FusionHead":
        rng = np.random.default_rng(rng_seed)
        dims = (FUSED_DIM, *hidden, len(EMOTIONS))
        weights, biases = [], []
        for i in range(len(dims) - 1):
            scale = 1.0 / np.sqrt(dims[i])
            weights.append(rng.normal(0, scale, (dims[i + 1], dims[i])))
            biases.append(np.zeros(dims[i + 1]))
        return cls(weights=weights, biases=biases)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Softmax probabilities plus the per-layer activations (for backprop)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        activations = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if i == len(self.weights) - 1 else np.tanh(z)
            activations.append(h)
        return _softmax(activations[-1]), activations

    def loss_and_gradients(self, x: np.ndarray, y: np.ndarray
                           ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean cross-entropy and analytic gradients for every parameter."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=int)
        n = x.shape[0]
        probs, acts = self.forward(x)
        eps = 1e-12
        loss = float(-np.mean(np.log(probs[np.arange(n), y] + eps)))
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads_w, grads_b = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w.append(delta.T @ acts[i])
            grads_b.append(delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i]) * (1.0 - acts[i] ** 2)
        grads_w.reverse()
        grads_b.reverse()
        return loss, grads_w, grads_b

    def to_json(self) -> str:
        return json.dumps({
            "version": SERIALIZATION_VERSION,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FusionHead":
        doc = json.loads(text)
        if doc.get("version") != SERIALIZATION_VERSION:
            raise ValueError("unsupported head version")
        return cls(weights=[np.array(w) for w in doc["weights"]],
                   biases=[np.array(b) for b in doc["biases"]])


@dataclass
class EmotionProbs:
    probs: np.ndarray                 # (7,) over EMOTIONS
    modality_mask: dict[str, bool]    # which branches contributed

    def top(self) -> str:
        return EMOTIONS[int(np.argmax(self.probs))]


def fuse_embeddings(visual: np.ndarray | None, emg: np.ndarray | None
                    ) -> tuple[np.ndarray, dict[str, bool]]:
    """Concatenate (visual, emg); an absent branch becomes a zero vector."""
    if visual is None and emg is None:
        raise ValueError("at least one modality must be present")
    mask = {"visual": visual is not None, "emg": emg is not None}
    v = np.zeros(EMBEDDING_DIM) if visual is None else np.asarray(visual, dtype=float)
    e = np.zeros(EMBEDDING_DIM) if emg is None else np.asarray(emg, dtype=float)
    if v.shape != (EMBEDDING_DIM,) or e.shape != (EMBEDDING_DIM,):
        raise ValueError("embeddings must be 128-D")
    return np.concatenate([v, e]), mask


def fuse_and_classify(visual: np.ndarray | None, emg: np.ndarray | None,
                      head: FusionHead) -> EmotionProbs:
    fused, mask = fuse_embeddings(visual, emg)
    probs, _ = head.forward(fused)
    return EmotionProbs(probs=probs[0], modality_mask=mask)


def train_head(embeddings: np.ndarray, labels: np.ndarray, epochs: int = 200,
               lr: float = 1e-2, rng_seed: int = 0,
               hidden: tuple[int, ...] = (64,)) -> tuple[FusionHead, list[float]]:
    """Full-batch gradient descent on cross-entropy; deterministic per seed.

    Returns the fitted head and the per-epoch loss history.
    """
    X = np.atleast_2d(np.asarray(embeddings, dtype=float))
    y = np.asarray(labels, dtype=int)
    if np.unique(y).size < 2:
        raise ValueError("need at least two classes")
    if X.shape[1] != FUSED_DIM:
        raise ValueError(f"embeddings must be {FUSED_DIM}-D")
    head = FusionHead.random(hidden=hidden, rng_seed=rng_seed)
    history = []
    for _ in range(epochs):
        loss, gw, gb = head.loss_and_gradients(X, y)
        history.append(loss)
        if lr != 0.0:
            for i in range(len(head.weights)):
                head.weights[i] -= lr * gw[i]
                head.biases[i] -= lr * gb[i]
    return head, history


def gradient_check(head: FusionHead, x: np.ndarray, y: np.ndarray,
                   epsilon: float = 1e-6) -> float:
    """Max |analytic - central difference| over every head parameter."""
    _, gw, gb = head.loss_and_gradients(x, y)
    worst = 0.0
    for params, grads in ((head.weights, gw), (head.biases, gb)):
        for arr, grad in zip(params, grads):
            flat = arr.ravel()
            gflat = grad.ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + epsilon
                lp, _, _ = head.loss_and_gradients(x, y)
                flat[k] = orig - epsilon
                lm, _, _ = head.loss_and_gradients(x, y)
                flat[k] = orig
                numeric = (lp - lm) / (2 * epsilon)
                worst = max(worst, abs(numeric - gflat[k]))
    return worst
