"""Skeletal gesture features and classification over the gesture taxonomy.

Frames carry 33 body landmarks (x, y, z meters + visibility). Features are
the 528 pairwise distances normalized by the wearer's shoulder-to-hip
length, which cancels global position, rotation and uniform scale.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .forest import ForestModel, TrainingError, cross_validate, train_forest

log = logging.getLogger(__name__)

N_LANDMARKS = 33
N_PAIRS = N_LANDMARKS * (N_LANDMARKS - 1) // 2  # 528

# Landmark indices of the torso anchors used for anthropometric scaling.
LEFT_SHOULDER, RIGHT_SHOULDER = 11, 12
LEFT_HIP, RIGHT_HIP = 23, 24

FUNCTION_CLASSES = ("routine_alert", "calming", "commanding",
                    "space_controlling", "reactive")

_PAIR_I, _PAIR_J = np.triu_indices(N_LANDMARKS, k=1)


class PoseError(ValueError):
    pass


@dataclass(frozen=True)
class PoseFrame:
    view_id: str
    t: float
    landmarks: np.ndarray  # (33, 4): x, y, z, visibility

    def __post_init__(self):
        lm = np.asarray(self.landmarks, dtype=float)
        if lm.shape != (N_LANDMARKS, 4):
            raise PoseError(f"expected (33, 4) landmarks, got {lm.shape}")
        vis = lm[:, 3]
        if np.any((vis < 0) | (vis > 1)):
            raise PoseError("visibility must lie in [0, 1]")
        object.__setattr__(self, "landmarks", lm)


@dataclass(frozen=True)
class GestureFeatureVector:
    distances: np.ndarray  # (528,), lexicographic by (i, j), i < j
    reference_length: float


@dataclass(frozen=True)
class GestureLabel:
    gesture_id: str
    function_class: str


@dataclass
class GestureTaxonomy:
    """The configured gesture inventory: id -> communicative function."""

    classes: dict[str, str]

    def __post_init__(self):
        for gid, fc in self.classes.items():
            if fc not in FUNCTION_CLASSES:
                raise ValueError(f"gesture {gid!r} has unknown function class {fc!r}")

    @property
    def gesture_ids(self) -> list[str]:
        return sorted(self.classes)

    def label(self, gesture_id: str) -> GestureLabel:
        return GestureLabel(gesture_id, self.classes[gesture_id])

    @classmethod
    def load_default(cls) -> "GestureTaxonomy":
        text = resources.files("multicue.data").joinpath(
            "gesture_taxonomy.json").read_text(encoding="utf-8")
        return cls(json.loads(text))

    @classmethod
    def from_file(cls, path) -> "GestureTaxonomy":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


def merge_views(frames: list[PoseFrame], frame_period_s: float = 1 / 30.0) -> PoseFrame:
    """Combine per-view frames: each landmark comes from the view where it
    is most visible; ties break toward the lexicographically first view."""
    if not frames:
        raise PoseError("no views to merge")
    ts = [f.t for f in frames]
    if max(ts) - min(ts) > frame_period_s:
        raise PoseError("views span more than one frame period")
    ordered = sorted(frames, key=lambda f: f.view_id)
    stack = np.stack([f.landmarks for f in ordered])  # (V, 33, 4)
    best_view = np.argmax(stack[:, :, 3], axis=0)     # first max wins ties
    merged = stack[best_view, np.arange(N_LANDMARKS)]
    return PoseFrame(view_id="merged", t=float(np.min(ts)), landmarks=merged)


def extract_features(frame: PoseFrame) -> GestureFeatureVector:
    """528 normalized pairwise distances.

    The reference length is the mean of the left and right shoulder-to-hip
    distances; poses where that collapses below 1 mm are degenerate.
    """
    pts = frame.landmarks[:, :3]
    if not np.all(np.isfinite(pts)):
        raise PoseError("non-finite landmark coordinates")
    ref = 0.5 * (np.linalg.norm(pts[LEFT_SHOULDER] - pts[LEFT_HIP])
                 + np.linalg.norm(pts[RIGHT_SHOULDER] - pts[RIGHT_HIP]))
    if ref < 1e-3:
        raise PoseError(f"degenerate pose: reference length {ref:.2e} m")
    dists = np.linalg.norm(pts[_PAIR_I] - pts[_PAIR_J], axis=1) / ref
    return GestureFeatureVector(distances=dists, reference_length=float(ref))


def extract_features_batch(landmarks: np.ndarray) -> np.ndarray:
    """Vectorized feature extraction for (n, 33, 3+) landmark arrays."""
    pts = np.asarray(landmarks, dtype=float)[:, :, :3]
    ref = 0.5 * (np.linalg.norm(pts[:, LEFT_SHOULDER] - pts[:, LEFT_HIP], axis=1)
                 + np.linalg.norm(pts[:, RIGHT_SHOULDER] - pts[:, RIGHT_HIP], axis=1))
    if np.any(ref < 1e-3):
        raise PoseError("degenerate pose in batch")
    d = np.linalg.norm(pts[:, _PAIR_I] - pts[:, _PAIR_J], axis=2)
    return d / ref[:, None]


def train_gesture_forest(features: np.ndarray, gesture_ids: list[str],
                         taxonomy: GestureTaxonomy, **kwargs) -> ForestModel:
    """Forest over taxonomy gestures; class order is the sorted gesture id."""
    names = taxonomy.gesture_ids
    index = {g: i for i, g in enumerate(names)}
    try:
        y = np.array([index[g] for g in gesture_ids])
    except KeyError as exc:
        raise TrainingError(f"gesture id {exc} not in taxonomy") from None
    return train_forest(features, y, class_names=names, **kwargs)


def predict_gesture(model: ForestModel, features: np.ndarray,
                    taxonomy: GestureTaxonomy) -> tuple[GestureLabel, np.ndarray]:
    """(label, class probabilities); ties resolve to the lowest class index."""
    feats = np.asarray(features, dtype=float)
    if feats.ndim != 1 or feats.shape[0] != model.feature_dim:
        raise ValueError(f"expected {model.feature_dim}-D feature vector, "
                         f"got shape {feats.shape}")
    probs = model.predict_proba(feats[None, :])[0]
    gesture_id = model.class_names[int(np.argmax(probs))]
    return taxonomy.label(gesture_id), probs


class GestureSmoother:
    """Majority vote over a sliding time window of per-frame predictions.

    Avoids label flicker before gestures reach the interpretation layer.
    Single owner per pose stream.
    """

    def __init__(self, window_s: float = 0.5):
        self.window_s = window_s
        self._buffer: deque[tuple[float, str]] = deque()

    def update(self, t: float, gesture_id: str) -> str:
        self._buffer.append((t, gesture_id))
        while self._buffer and self._buffer[0][0] < t - self.window_s:
            self._buffer.popleft()
        counts = Counter(g for _, g in self._buffer)
        top = max(counts.values())
        # deterministic tie-break: lexicographically first among the modes
        return sorted(g for g, c in counts.items() if c == top)[0]


__all__ = [
    "PoseFrame", "GestureFeatureVector", "GestureLabel", "GestureTaxonomy",
    "merge_views", "extract_features", "extract_features_batch",
    "train_gesture_forest", "predict_gesture", "cross_validate",
    "GestureSmoother", "N_PAIRS", "FUNCTION_CLASSES",
]
