"""Deterministic synthetic session generator with ground-truth sidecar.

Produces a JSONL session (8 streams: audio, landmarks, EMG, EEG, EDA, ECG,
proxemics, transcript) following a scripted de-escalation scenario with a
calm phase, an escalation segment and a recovery phase. The sidecar JSON
records every planted truth (R-peak times, SCR drivers, gesture segments,
per-epoch alpha envelope target, avatar distance) so analysis output can
be scored against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..bus import Modality, StreamSpec
from ..gesture import GestureTaxonomy, N_LANDMARKS
from .recording import SessionWriter, make_record, session_header

AUDIO_STREAM = "audio_mic"
POSE_STREAM = "pose_front"
EMG_STREAM = "emg_face"
EEG_STREAM = "eeg_cap"
EDA_STREAM = "eda_wrist"
ECG_STREAM = "ecg_chest"
PROX_STREAM = "proxemics"
TRANSCRIPT_STREAM = "transcript"


@dataclass
class SimulatorConfig:
    duration_s: float = 300.0
    rng_seed: int = 42
    scenario_id: str = "s02"
    officer_gender: str = "male"
    citizen_demographics: str = "adult_native"
    audio_rate: float = 8000.0
    eeg_rate: float = 250.0
    eeg_channels: int = 8
    ecg_rate: float = 250.0
    eda_rate: float = 250.0
    emg_rate: float = 800.0
    pose_rate: float = 30.0
    prox_rate: float = 30.0
    calibration_offset_db: float = 94.0
    rest_rr_s: float = 0.85
    rest_rr_jitter_s: float = 0.040
    stress_rr_s: float = 0.60
    stress_rr_jitter_s: float = 0.008
    eeg_snr_db: float = 3.0
    calm_spl_db: float = 60.0
    loud_spl_db: float = 75.0

    def __post_init__(self):
        if self.duration_s <= 30.0:
            raise ValueError("simulated sessions need more than 30 s")

    @property
    def phases(self) -> dict[str, tuple[float, float]]:
        d = self.duration_s
        return {
            "baseline": (0.0, 0.2 * d),
            "calm": (0.2 * d, 0.6 * d),
            "escalation": (0.6 * d, 0.8 * d),
            "recovery": (0.8 * d, d),
        }


# --- reusable generators ------------------------------------------------------

def synthetic_ecg(sample_rate: float, duration_s: float, rr_mean_s: float,
                  rr_jitter_s: float, rng: np.random.Generator,
                  rr_schedule=None) -> tuple[np.ndarray, np.ndarray]:
    """(r_peak_times, signal). PQRST complexes from Gaussian bumps plus
    baseline wander and sensor noise. `rr_schedule(t) -> (mean, jitter)`
    overrides the constant interval parameters when given."""
    times = []
    t = 0.5
    while t < duration_s - 0.5:
        times.append(t)
        mean, jitter = (rr_mean_s, rr_jitter_s) if rr_schedule is None \
            else rr_schedule(t)
        t += max(mean + jitter * rng.standard_normal(), 0.3)
    tt = np.arange(int(duration_s * sample_rate)) / sample_rate
    sig = np.zeros(tt.size)
    for rt in times:
        sig += 1.2 * np.exp(-0.5 * ((tt - rt) / 0.012) ** 2)
        sig += -0.2 * np.exp(-0.5 * ((tt - rt + 0.035) / 0.010) ** 2)
        sig += -0.25 * np.exp(-0.5 * ((tt - rt - 0.040) / 0.015) ** 2)
        sig += 0.3 * np.exp(-0.5 * ((tt - rt - 0.250) / 0.050) ** 2)
        sig += 0.15 * np.exp(-0.5 * ((tt - rt + 0.170) / 0.040) ** 2)
    sig += 0.02 * rng.standard_normal(tt.size)
    sig += 0.10 * np.sin(2 * np.pi * 0.3 * tt)
    return np.array(times), sig


def scr_kernel(tt: np.ndarray, rise_s: float = 0.75, decay_s: float = 4.0
               ) -> np.ndarray:
    """Difference-of-exponentials response shape, unit peak."""
    k = np.exp(-np.maximum(tt, 0.0) / decay_s) - \
        np.exp(-np.maximum(tt, 0.0) / rise_s)
    k[tt < 0] = 0.0
    peak = k.max()
    return k / peak if peak > 0 else k


def synthetic_eda(sample_rate: float, duration_s: float,
                  driver_times: np.ndarray, driver_amps: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    tt = np.arange(int(duration_s * sample_rate)) / sample_rate
    sig = 5.0 + 0.004 * tt
    sig += 0.02 * np.cumsum(rng.standard_normal(tt.size)) / np.sqrt(sample_rate)
    for dt, amp in zip(driver_times, driver_amps):
        sig += amp * scr_kernel(tt - dt)
    return sig


def simulate_eeg_session(n_channels: int, n_epochs: int, sample_rate: float,
                         z: np.ndarray, snr_db: float,
                         rng: np.random.Generator, alpha_hz: float = 10.0
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Epochs (E, C, T) with one planted alpha source whose per-epoch power
    is affine in the standardized target series z.

    Returns (epochs, per-epoch source power, true mixing column). The noise
    level is calibrated so the channel-mean in-band power ratio between the
    planted source and the noise matches `snr_db`.
    """
    from ..neuro import band_filter_epochs

    z = np.asarray(z, dtype=float)
    if z.shape[0] != n_epochs:
        raise ValueError("z must have one value per epoch")
    zn = (z - z.mean()) / z.std()
    power = np.maximum(1.0 + 0.45 * zn, 0.05)
    T = int(round(sample_rate))
    t = np.arange(T) / sample_rate
    a_true = rng.standard_normal(n_channels)
    a_true /= np.linalg.norm(a_true)
    noise_mix = rng.standard_normal((n_channels, n_channels)) / np.sqrt(n_channels)
    probe = noise_mix @ rng.standard_normal((n_channels, int(20 * sample_rate)))
    band = band_filter_epochs(probe[None], sample_rate,
                              alpha_hz - 2.0, alpha_hz + 2.0)[0]
    noise_band_power = band.var(axis=1).mean()
    source_band_power = np.mean(a_true ** 2) * 0.5 * np.mean(power)
    noise_scale = np.sqrt(source_band_power
                          / (noise_band_power * 10 ** (snr_db / 10.0)))
    epochs = np.empty((n_epochs, n_channels, T))
    for e in range(n_epochs):
        phase = rng.uniform(0, 2 * np.pi)
        src = np.sqrt(power[e]) * np.sin(2 * np.pi * alpha_hz * t + phase)
        noise = noise_mix @ rng.standard_normal((n_channels, T)) * noise_scale
        epochs[e] = np.outer(a_true, src) + noise
    return epochs, power, a_true


def make_pose_templates(taxonomy: GestureTaxonomy, rng_seed: int = 1234
                        ) -> dict[str, np.ndarray]:
    """Canonical (33, 3) landmark template per gesture.

    A plausible standing skeleton plus deterministic per-gesture arm and
    hand configurations; a few conflict-salient gestures are hand-posed.
    """
    base = np.zeros((N_LANDMARKS, 3))
    head = np.array([0.0, 1.70, 0.0])
    base[0] = head
    for i, off in zip(range(1, 11), np.linspace(-0.08, 0.08, 10)):
        base[i] = head + np.array([off, -0.03, 0.05])
    base[11] = [0.20, 1.50, 0.0]    # left shoulder
    base[12] = [-0.20, 1.50, 0.0]   # right shoulder
    base[13] = [0.26, 1.24, 0.0]    # left elbow
    base[14] = [-0.26, 1.24, 0.0]   # right elbow
    base[15] = [0.28, 1.00, 0.0]    # left wrist
    base[16] = [-0.28, 1.00, 0.0]   # right wrist
    for i in (17, 19, 21):
        base[i] = base[15] + np.array([0.02, -0.06, 0.02])
    for i in (18, 20, 22):
        base[i] = base[16] + np.array([-0.02, -0.06, 0.02])
    base[23] = [0.12, 1.00, 0.0]    # left hip
    base[24] = [-0.12, 1.00, 0.0]   # right hip
    base[25] = [0.13, 0.60, 0.0]
    base[26] = [-0.13, 0.60, 0.0]
    base[27] = [0.14, 0.10, 0.0]
    base[28] = [-0.14, 0.10, 0.0]
    for i, j in ((29, 27), (30, 28), (31, 27), (32, 28)):
        base[i] = base[j] + np.array([0.0, -0.05, 0.12])

    hand_poses = {
        "arms_crossed": {13: [0.10, 1.32, 0.12], 14: [-0.10, 1.32, 0.12],
                         15: [-0.12, 1.38, 0.18], 16: [0.12, 1.38, 0.18]},
        "halt_palm_out": {14: [-0.24, 1.45, 0.18], 16: [-0.22, 1.55, 0.42]},
        "open_palms_down": {13: [0.28, 1.18, 0.12], 14: [-0.28, 1.18, 0.12],
                            15: [0.30, 1.02, 0.28], 16: [-0.30, 1.02, 0.28]},
        "hands_up_defensive": {13: [0.30, 1.45, 0.05], 14: [-0.30, 1.45, 0.05],
                               15: [0.28, 1.72, 0.10], 16: [-0.28, 1.72, 0.10]},
    }
    rng = np.random.default_rng(rng_seed)
    templates: dict[str, np.ndarray] = {}
    for gid in taxonomy.gesture_ids:
        pose = base.copy()
        if gid in hand_poses:
            for idx, coords in hand_poses[gid].items():
                pose[idx] = coords
        else:
            # distinct deterministic arm configuration per gesture
            for idx in (13, 14, 15, 16):
                pose[idx] = base[idx] + rng.uniform(-0.25, 0.25, 3)
        for wrist, digits in ((15, (17, 19, 21)), (16, (18, 20, 22))):
            for d in digits:
                pose[d] = pose[wrist] + (base[d] - base[wrist])
        templates[gid] = pose
    return templates


def pose_with_noise(template: np.ndarray, rng: np.random.Generator,
                    jitter: float = 0.008) -> np.ndarray:
    lm = np.empty((N_LANDMARKS, 4))
    lm[:, :3] = template + rng.normal(0.0, jitter, (N_LANDMARKS, 3))
    lm[:, 3] = np.clip(0.92 + 0.05 * rng.standard_normal(N_LANDMARKS), 0.0, 1.0)
    return lm


def make_gesture_training_set(taxonomy: GestureTaxonomy, per_class: int = 24,
                              rng_seed: int = 99) -> tuple[np.ndarray, list[str]]:
    """Labeled feature set sampled from the canonical templates."""
    from ..gesture import extract_features_batch

    templates = make_pose_templates(taxonomy)
    rng = np.random.default_rng(rng_seed)
    frames, labels = [], []
    for gid in taxonomy.gesture_ids:
        for _ in range(per_class):
            frames.append(pose_with_noise(templates[gid], rng))
        labels.extend([gid] * per_class)
    feats = extract_features_batch(np.stack(frames))
    return feats, labels


# --- scripted scenario --------------------------------------------------------

_UTTERANCES_CALM = [
    ("Guten Tag, können Sie mir bitte Ihren Ausweis zeigen?", "officer"),
    ("Ich verstehe Ihre Lage, wir klären das in Ruhe.", "officer"),
    ("Bitte bleiben Sie hier stehen, das dauert nur einen Moment.", "officer"),
    ("Können Sie mir erklären, was hier passiert ist?", "officer"),
]
_UTTERANCES_ESCALATION = [
    ("Du hörst mir überhaupt nicht zu!", "officer"),
    ("Jetzt reicht es, du Idiot!", "officer"),
    ("Bleib sofort stehen, das ist dein letztes Wort!", "officer"),
]
_UTTERANCES_RECOVERY = [
    ("Entschuldigen Sie, lassen Sie uns ruhig weitersprechen.", "officer"),
    ("Ich höre Ihnen jetzt zu, erklären Sie es mir bitte.", "officer"),
]


def _tone_burst(t: np.ndarray, f0: float, spl_db: float, cal_db: float
                ) -> np.ndarray:
    """Harmonic complex at the requested SPL (3 partials)."""
    rms_target = 10 ** ((spl_db - cal_db) / 20.0)
    raw = (np.sin(2 * np.pi * f0 * t)
           + 0.5 * np.sin(2 * np.pi * 2 * f0 * t)
           + 0.25 * np.sin(2 * np.pi * 3 * f0 * t))
    raw *= np.hanning(t.size) ** 0.5
    rms = np.sqrt(np.mean(raw ** 2))
    return raw * (rms_target / rms)


def simulate(config: SimulatorConfig, session_path, sidecar_path) -> dict:
    """Write the scripted session JSONL and its ground-truth sidecar.

    Deterministic: identical config (including seed) produces byte-identical
    files. Returns the sidecar document.
    """
    rng = np.random.default_rng(config.rng_seed)
    d = config.duration_s
    phases = config.phases
    esc0, esc1 = phases["escalation"]

    specs = [
        StreamSpec(AUDIO_STREAM, Modality.AUDIO, 1, config.audio_rate, ("au",)),
        StreamSpec(POSE_STREAM, Modality.VIDEO_LANDMARKS, N_LANDMARKS * 4,
                   config.pose_rate, ("m",)),
        StreamSpec(EMG_STREAM, Modality.EMG, 7, config.emg_rate, ("uV",)),
        StreamSpec(EEG_STREAM, Modality.EEG, config.eeg_channels,
                   config.eeg_rate, ("uV",)),
        StreamSpec(EDA_STREAM, Modality.EDA, 1, config.eda_rate, ("uS",)),
        StreamSpec(ECG_STREAM, Modality.ECG, 1, config.ecg_rate, ("mV",)),
        StreamSpec(PROX_STREAM, Modality.PROXEMICS, 6, config.prox_rate,
                   ("m",) * 6),
        StreamSpec(TRANSCRIPT_STREAM, Modality.TRANSCRIPT, 1, 0.0, ()),
    ]

    records: list[dict] = [session_header(0.0, specs, {
        "scenario_id": config.scenario_id,
        "officer_gender": config.officer_gender,
        "citizen_demographics": config.citizen_demographics,
        "calibration_offset_db": config.calibration_offset_db,
        "rng_seed": config.rng_seed,
        "phases": {k: list(v) for k, v in phases.items()},
    })]

    def marker(t, label, **payload):
        records.append(make_record(t, "marker", "markers",
                                   {"label": label,
                                    "payload": {k: str(v) for k, v in payload.items()}}))

    marker(2.0, "scenario_start", scenario=config.scenario_id)
    marker(phases["baseline"][1], "baseline_end")
    marker(0.4 * d, "approach_start")
    marker(esc0, "escalation_start")
    marker(0.7 * d, "escalation_peak")
    marker(phases["recovery"][0], "deescalation_start")
    marker(d - 2.0, "scenario_end")

    # --- proxemics: avatar approach during the middle of the session
    prox_t = np.arange(int(d * config.prox_rate)) / config.prox_rate
    hmd = np.tile(np.array([0.0, 1.7, 0.0]), (prox_t.size, 1))
    distance = np.full(prox_t.size, 4.0)
    approach = (prox_t >= 0.4 * d) & (prox_t < 0.7 * d)
    distance[approach] = 4.0 - 3.0 * (prox_t[approach] - 0.4 * d) / (0.3 * d)
    hold = (prox_t >= 0.7 * d) & (prox_t < 0.8 * d)
    distance[hold] = 1.0
    retreat = prox_t >= 0.8 * d
    distance[retreat] = np.minimum(
        1.0 + 2.0 * (prox_t[retreat] - 0.8 * d) / (0.2 * d), 3.0)
    avatar = hmd.copy()
    avatar[:, 2] = distance
    prox_vals = np.hstack([hmd, avatar])

    # --- ECG with a stress segment
    def rr_schedule(t):
        if esc0 <= t < esc1:
            return config.stress_rr_s, config.stress_rr_jitter_s
        return config.rest_rr_s, config.rest_rr_jitter_s

    r_times, ecg = synthetic_ecg(config.ecg_rate, d, config.rest_rr_s,
                                 config.rest_rr_jitter_s, rng, rr_schedule)

    # --- EDA: small baseline drivers, strong escalation drivers
    base_end = phases["baseline"][1]
    base_drivers = base_end * np.array([0.30, 0.55, 0.75])
    esc_len = esc1 - esc0
    esc_drivers = esc0 + esc_len * np.array([0.05, 0.20, 0.35, 0.50, 0.70])
    driver_times = np.concatenate([base_drivers, esc_drivers])
    driver_amps = np.concatenate([np.full(base_drivers.size, 0.35),
                                  np.full(esc_drivers.size, 1.0)])
    order = np.argsort(driver_times)
    driver_times, driver_amps = driver_times[order], driver_amps[order]
    eda = synthetic_eda(config.eda_rate, d, driver_times, driver_amps, rng)
    for dt in esc_drivers:
        marker(float(dt), "avatar_step_close")

    # --- EEG: planted alpha source tracking avatar distance
    n_epochs = int(d)  # 1 s disjoint generator epochs
    epoch_centers = np.arange(n_epochs) + 0.5
    z_dist = np.interp(epoch_centers, prox_t, distance)
    eeg_epochs, alpha_power, a_true = simulate_eeg_session(
        config.eeg_channels, n_epochs, config.eeg_rate, z_dist,
        config.eeg_snr_db, rng)
    eeg = eeg_epochs.transpose(1, 0, 2).reshape(config.eeg_channels, -1).T

    # --- EMG: bandlimited activity, frown burst during escalation
    emg_n = int(d * config.emg_rate)
    emg_t = np.arange(emg_n) / config.emg_rate
    emg = rng.standard_normal((7, emg_n)) * 4.0
    esc_mask = (emg_t >= esc0) & (emg_t < esc1)
    emg[0:2, esc_mask] *= 3.0  # corrugator/frontalis activation
    emg += 5.0 * np.sin(2 * np.pi * 50.0 * emg_t)  # mains interference

    # --- audio + transcript
    audio = rng.standard_normal(int(d * config.audio_rate)) * 10 ** (-70 / 20)
    utterances = []
    slots = []
    calm0, calm1 = phases["calm"]
    rec0 = phases["recovery"][0]

    def place(phase0, phase1, texts, spl):
        fractions = np.linspace(0.08, 0.72, len(texts))
        for frac, (text, speaker) in zip(fractions, texts):
            slots.append((phase0 + frac * (phase1 - phase0), text, speaker, spl))

    place(calm0, calm1, _UTTERANCES_CALM, config.calm_spl_db)
    place(esc0, esc1, _UTTERANCES_ESCALATION, config.loud_spl_db)
    place(rec0, d, _UTTERANCES_RECOVERY, config.calm_spl_db)
    for t0, text, speaker, spl in slots:
        dur = min(0.45 * len(text.split()) + 1.2, 6.0)
        if t0 + dur >= d:
            continue
        i0 = int(t0 * config.audio_rate)
        i1 = int((t0 + dur) * config.audio_rate)
        seg_t = np.arange(i1 - i0) / config.audio_rate
        f0 = 170.0 + 25.0 * np.sin(2 * np.pi * seg_t / dur)
        burst = _tone_burst(seg_t, float(f0.mean()), spl, config.calibration_offset_db)
        audio[i0:i1] += burst
        utterances.append({"t0": t0, "t1": t0 + dur, "text": text,
                           "speaker": speaker, "spl_db": spl})
        records.append(make_record(t0, "feature", TRANSCRIPT_STREAM, {
            "t0": t0, "t1": t0 + dur, "text": text, "speaker": speaker,
            "provenance": "external-model",
        }))

    # --- pose: gesture schedule
    taxonomy = GestureTaxonomy.load_default()
    templates = make_pose_templates(taxonomy)
    gesture_segments = [
        (phases["baseline"][0], phases["baseline"][1], "open_palms_down"),
        (calm0, calm1, "open_palms_down"),
        (esc0, esc1, "arms_crossed"),
        (rec0, d, "slow_patting_air"),
    ]
    pose_frames = []
    n_pose = int(d * config.pose_rate)
    for k in range(n_pose):
        t = k / config.pose_rate
        gid = next(g for a, b, g in gesture_segments if a <= t < b)
        pose_frames.append(pose_with_noise(templates[gid], rng).ravel())
    pose_vals = np.array(pose_frames)

    # --- pack numeric streams into 1 s blocks
    def block_records(stream, values, rate, block_s=1.0):
        values = np.atleast_2d(values)
        if values.shape[0] < values.shape[1]:
            values = values.T  # (n, channels)
        per = int(rate * block_s)
        for start in range(0, values.shape[0], per):
            block = values[start:start + per]
            records.append(make_record(start / rate, "sample", stream, {
                "rate": rate, "block": block.tolist(),
            }))

    block_records(AUDIO_STREAM, audio[None, :], config.audio_rate)
    block_records(POSE_STREAM, pose_vals.T, config.pose_rate)
    block_records(EMG_STREAM, emg, config.emg_rate)
    block_records(EEG_STREAM, eeg.T, config.eeg_rate)
    block_records(EDA_STREAM, eda[None, :], config.eda_rate)
    block_records(ECG_STREAM, ecg[None, :], config.ecg_rate)
    block_records(PROX_STREAM, prox_vals.T, config.prox_rate)

    with SessionWriter(session_path) as writer:
        writer.write_all(records)

    sidecar = {
        "config": {
            "duration_s": d, "rng_seed": config.rng_seed,
            "scenario_id": config.scenario_id,
            "calibration_offset_db": config.calibration_offset_db,
            "eeg_channels": config.eeg_channels,
            "eeg_snr_db": config.eeg_snr_db,
        },
        "phases": {k: list(v) for k, v in phases.items()},
        "r_peak_times": [round(t, 6) for t in r_times],
        "scr_driver_times": driver_times.tolist(),
        "scr_driver_amplitudes": driver_amps.tolist(),
        "eeg_alpha_hz": 10.0,
        "eeg_epoch_power": alpha_power.tolist(),
        "eeg_target_distance": z_dist.tolist(),
        "eeg_true_mixing": a_true.tolist(),
        "gesture_segments": [[a, b, g] for a, b, g in gesture_segments],
        "utterances": utterances,
        "avatar_distance_1hz": np.interp(
            np.arange(int(d)), prox_t, distance).tolist(),
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return sidecar
