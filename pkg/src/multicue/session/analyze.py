"""Offline analysis: session JSONL in, feature/proposal JSONL + report out.

Runs every analysis stream at its native cadence, derives participant
baselines from the pre-scenario segment, fuses cue snapshots at 1 Hz and
drives the interpretation engine over the whole session.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from .. import autonomic, emotion, interpret, neuro, prosody, verbal
from ..dsp import EpochSpec, segment_epochs
from ..gesture import GestureSmoother, GestureTaxonomy, extract_features_batch
from ..forest import ForestModel
from .recording import LoadedSession, SessionWriter, make_record, read_session
from .simulate import (AUDIO_STREAM, ECG_STREAM, EDA_STREAM, EEG_STREAM,
                       EMG_STREAM, POSE_STREAM, PROX_STREAM, TRANSCRIPT_STREAM,
                       make_gesture_training_set)

log = logging.getLogger(__name__)

FUSION_RATE_HZ = 1.0
FEATURE_LANE_RATE_HZ = 10.0


@dataclass
class AnalyzeResult:
    features_path: str
    report: dict
    records: list[dict]


def _downsample_times(t0: float, t1: float, rate: float) -> np.ndarray:
    return np.arange(t0, t1, 1.0 / rate)


def analyze_session(session_path, features_path, gesture_model: ForestModel | None = None,
                    emotion_head: emotion.FusionHead | None = None,
                    rng_seed: int = 7) -> AnalyzeResult:
    t_wall = time.time()
    session = read_session(session_path)
    ctx_doc = session.context
    records: list[dict] = []

    calibration_db = ctx_doc.get("calibration_offset_db", 94.0)
    phases = ctx_doc.get("phases", {})
    baseline_end = phases.get("baseline", [0.0, 60.0])[1]

    taxonomy = GestureTaxonomy.load_default()
    encodings = interpret.load_cue_encodings()
    index_table = interpret.EscalationIndexTable.load_default()
    context = interpret.ContextState(
        scenario_id=ctx_doc.get("scenario_id", "s01"),
        officer_gender=ctx_doc.get("officer_gender", "female"),
        citizen_demographics=ctx_doc.get("citizen_demographics", "adult_native"),
    )

    # --- prosody ---------------------------------------------------------
    audio_t, audio_v = session.samples_for(AUDIO_STREAM)
    prosody_frames: list[prosody.ProsodyFrame] = []
    if audio_t.size:
        audio_rate = session.specs[AUDIO_STREAM].nominal_rate
        cfg = prosody.ProsodyConfig(calibration_offset_db=calibration_db)
        prosody_frames = prosody.analyze_frames(
            audio_v[:, 0], audio_rate, cfg, t_start=float(audio_t[0]))
        for fr in prosody_frames:
            records.append(make_record(fr.t0, "feature", "prosody", {
                "t0": fr.t0, "t1": fr.t1, "voiced": fr.voiced,
                "pitch_hz": fr.pitch_hz, "loudness_sone": round(fr.loudness_sone, 4),
            }))

    # --- verbal (transcript features) -------------------------------------
    lexicon = verbal.load_lexicon()
    freq = verbal.load_frequency_list()
    utterance_reports = []
    for rec in session.features_for(TRANSCRIPT_STREAM):
        doc = rec["data"]
        utt = verbal.Utterance(doc["text"], doc.get("speaker", "unknown"),
                               doc.get("t0", rec["t"]), doc.get("t1", rec["t"]))
        hits = verbal.detect_insults(utt, lexicon)
        formality = verbal.classify_formality(utt)
        complexity = verbal.complexity_score(utt, freq)
        span = [f for f in prosody_frames if f.t0 >= utt.t0 - 0.5 and f.t1 <= utt.t1 + 1.0]
        agg = prosody.aggregate_utterance(
            span, transcript_words=len(utt.text.split())) if span else None
        report = {
            "t0": utt.t0, "t1": utt.t1, "speaker": utt.speaker,
            "formality": formality.label, "evidence": formality.evidence,
            "insults": [h.token for h in hits],
            "complexity": round(complexity.score, 3),
            "wpm": round(agg.speaking_rate_wpm, 1) if agg and agg.speaking_rate_wpm else None,
            "loudness_sone": round(agg.loudness_mean_sone, 3) if agg else None,
            "loudness_high": agg.loudness_high if agg else False,
            "duration_s": utt.t1 - utt.t0,
        }
        utterance_reports.append(report)
        records.append(make_record(utt.t0, "feature", "verbal", report))

    # --- gesture -----------------------------------------------------------
    gesture_lane = []
    pose_t, pose_v = session.samples_for(POSE_STREAM)
    if pose_t.size:
        if gesture_model is None:
            feats, labels = make_gesture_training_set(taxonomy)
            from ..gesture import train_gesture_forest
            gesture_model = train_gesture_forest(
                feats, labels, taxonomy, n_trees=24, max_depth=10,
                rng_seed=rng_seed)
        landmarks = pose_v.reshape(pose_v.shape[0], -1, 4)
        feats = extract_features_batch(landmarks)
        pred = gesture_model.predict(feats)
        smoother = GestureSmoother()
        smoothed = [smoother.update(float(t), gesture_model.class_names[p])
                    for t, p in zip(pose_t, pred)]
        stride = max(int(round(session.specs[POSE_STREAM].nominal_rate
                               / FEATURE_LANE_RATE_HZ)), 1)
        for k in range(0, len(smoothed), stride):
            gid = smoothed[k]
            records.append(make_record(float(pose_t[k]), "feature", "gesture", {
                "gesture_id": gid,
                "function_class": taxonomy.classes[gid],
                "escalation_index": interpret.lookup_index(index_table, gid, context),
            }))
            gesture_lane.append((float(pose_t[k]), gid))

    # --- emotion (EMG kernel lane; head optional) --------------------------
    emg_t, emg_v = session.samples_for(EMG_STREAM)
    emotion_lane = []
    if emg_t.size:
        emg_rate = session.specs[EMG_STREAM].nominal_rate
        sig = emg_v.T  # (7, n)
        n_base = int(min(baseline_end, 30.0) * emg_rate)
        baseline = emotion.calibrate_emg_baseline(sig[:, :max(n_base, 1600)],
                                                  emg_rate)
        win = int(emg_rate * 1.0)
        hop = int(emg_rate * 0.25)
        proj = emotion.ProjectionModel.random(rng_seed=rng_seed)
        for start in range(0, sig.shape[1] - win + 1, hop):
            t0 = float(emg_t[0]) + start / emg_rate
            window = emotion.preprocess_emg(sig[:, start:start + win], emg_rate,
                                            baseline, t0=t0)
            kern = emotion.rbf_kernel(window)
            coupling = float(np.mean(kern.vector))
            entry = {"t0": t0, "kernel_mean": round(coupling, 4),
                     "bandwidth": round(kern.bandwidth, 4)}
            if emotion_head is not None:
                emb = proj.project(kern.vector)
                probs = emotion.fuse_and_classify(None, emb, emotion_head)
                entry["emotion"] = probs.top()
                entry["probs"] = [round(float(p), 4) for p in probs.probs]
            records.append(make_record(t0, "feature", "emotion", entry))
            emotion_lane.append((t0, coupling))

    # --- neuro -------------------------------------------------------------
    neuro_report = {}
    eeg_t, eeg_v = session.samples_for(EEG_STREAM)
    prox_t, prox_v = session.samples_for(PROX_STREAM)
    if eeg_t.size and prox_t.size:
        eeg_rate = session.specs[EEG_STREAM].nominal_rate
        sig = eeg_v.T  # (C, n)
        epochs = segment_epochs(sig, eeg_rate, EpochSpec(1.0, 0.5))
        kept = neuro.reject_artifacts(epochs, peak_to_peak_uv=1e9)
        epoch_t = float(eeg_t[0]) + np.arange(epochs.shape[0]) * 0.5 + 0.5
        distance = np.linalg.norm(prox_v[:, :3] - prox_v[:, 3:], axis=1)
        z = np.interp(epoch_t, prox_t, distance)
        es = neuro.EegEpochSet(epochs[kept], eeg_rate)
        split = int(0.67 * es.epochs.shape[0])
        train = neuro.EegEpochSet(es.epochs[:split], eeg_rate)
        model = neuro.fit_mental_state(train, z[kept][:split])
        test = neuro.EegEpochSet(es.epochs[split:], eeg_rate)
        decoded = model.transform(test, truth=z[kept][split:])
        full = model.transform(es)
        for t, p in zip(epoch_t[kept], full.predicted):
            records.append(make_record(float(t), "feature", "alpha_power", {
                "alpha_power_z": round(float(p), 4),
            }))
        neuro_report = {
            "alpha_center_hz": model.band.center_hz,
            "held_out_r": None if decoded.r is None else round(abs(decoded.r), 4),
            "training_correlations": [round(c, 4) for c in
                                      model.training_correlations],
            "epochs_kept": int(kept.sum()), "epochs_total": int(len(kept)),
        }

    # --- autonomic ----------------------------------------------------------
    scr_events: list[autonomic.ScrEvent] = []
    hrv_windows: list[autonomic.HrvWindow] = []
    scr_baseline = hrv_baseline = None
    ecg_t, ecg_v = session.samples_for(ECG_STREAM)
    if ecg_t.size:
        ecg_rate = session.specs[ECG_STREAM].nominal_rate
        peaks = autonomic.detect_r_peaks(ecg_v[:, 0], ecg_rate) + float(ecg_t[0])
        rr = np.diff(peaks) * 1000.0
        if rr.size >= 3:
            rr = autonomic.correct_rr(rr)
        hrv_windows = autonomic.hrv_windows(peaks, float(ecg_t[0]),
                                            float(ecg_t[-1]))
        base_vals = [w.rmssd_ms for w in hrv_windows
                     if w.t1 <= baseline_end and w.rmssd_ms is not None]
        if len(base_vals) >= 2:
            hrv_baseline = autonomic.calibrate_baseline(
                "hrv", np.array(base_vals), baseline_end)
        for w in hrv_windows:
            flag = None
            if hrv_baseline is not None and w.rmssd_ms is not None:
                flag = autonomic.arousal_flag(w.rmssd_ms, hrv_baseline)
            records.append(make_record(w.t0, "feature", "hrv", {
                "t0": w.t0, "t1": w.t1, "rmssd_ms": w.rmssd_ms,
                "n_intervals": w.n_intervals, "flag": flag,
            }))
    eda_t, eda_v = session.samples_for(EDA_STREAM)
    if eda_t.size:
        eda_rate = session.specs[EDA_STREAM].nominal_rate
        phasic = autonomic.extract_phasic(eda_v[:, 0], eda_rate)
        marker_list = [(m.t, m.label) for m in session.markers]
        scr_events = autonomic.detect_scr_peaks(
            phasic, eda_rate, min_amplitude=0.3, markers=marker_list,
            t_start=float(eda_t[0]))
        base_amps = [e.amplitude for e in scr_events if e.peak_t <= baseline_end]
        if len(base_amps) >= 2:
            scr_baseline = autonomic.calibrate_baseline(
                "scr", np.array(base_amps), baseline_end)
        for e in scr_events:
            flag = None if scr_baseline is None else \
                autonomic.arousal_flag(e.amplitude, scr_baseline)
            records.append(make_record(e.peak_t, "feature", "scr", {
                "onset_t": round(e.onset_t, 3), "peak_t": round(e.peak_t, 3),
                "amplitude": round(e.amplitude, 4),
                "event_locked_to": e.event_locked_to, "flag": flag,
            }))
    prox_lane = []
    if prox_t.size:
        samples = autonomic.proxemics(prox_t, prox_v[:, :3], prox_v[:, 3:])
        stride = max(int(round(session.specs[PROX_STREAM].nominal_rate
                               / FEATURE_LANE_RATE_HZ)), 1)
        for s in samples[::stride]:
            records.append(make_record(s.t, "feature", "proxemics", {
                "distance_m": round(s.distance_m, 4),
                "velocity_mps": round(s.velocity_mps, 4),
            }))
            prox_lane.append(s)

    # --- fusion + interpretation at 1 Hz ------------------------------------
    engine = interpret.InterpretEngine()
    duration = max((r["t"] for r in session.records), default=0.0)
    proposals = []
    risk_lane = []
    for t in _downsample_times(1.0, duration, FUSION_RATE_HZ):
        cues: dict[str, interpret.CueInput] = {}
        recent_utts = [u for u in utterance_reports if t - 12.0 <= u["t0"] <= t]
        if recent_utts:
            last = recent_utts[-1]
            if last["insults"]:
                cues["verbal"] = interpret.encode_insult(len(last["insults"]),
                                                         encodings)
            else:
                cues["verbal"] = interpret.encode_formality(last["formality"],
                                                            encodings)
            cues["prosody"] = interpret.encode_loudness(
                bool(last["loudness_high"]), encodings)
        recent_gesture = [g for tg, g in gesture_lane if t - 2.0 <= tg <= t]
        if recent_gesture:
            gid = recent_gesture[-1]
            idx = interpret.lookup_index(index_table, gid, context)
            cues["gesture"] = interpret.encode_gesture(idx)
        if scr_baseline is not None:
            recent_scr = [e for e in scr_events if t - 8.0 <= e.peak_t <= t]
            if recent_scr:
                flag = autonomic.arousal_flag(recent_scr[-1].amplitude,
                                              scr_baseline)
                cues["arousal"] = interpret.encode_arousal(flag, encodings)
        elif hrv_baseline is not None:
            recent_hrv = [w for w in hrv_windows
                          if w.t1 <= t and w.rmssd_ms is not None]
            if recent_hrv:
                flag = autonomic.arousal_flag(recent_hrv[-1].rmssd_ms,
                                              hrv_baseline)
                cues["arousal"] = interpret.encode_arousal(flag, encodings)
        if not cues:
            continue
        snapshot = interpret.fuse(float(t), cues)
        records.append(make_record(float(t), "feature", "risk", {
            "risk_score": round(snapshot.risk_score, 4),
            "uncertain": snapshot.uncertain,
            "cues": {k: round(v.value, 3) for k, v in snapshot.cues.items()},
        }))
        risk_lane.append((float(t), snapshot.risk_score))
        outcome = engine.consume(snapshot)
        if isinstance(outcome, interpret.AdaptationProposal):
            proposals.append(outcome)
    records.extend(engine.records)

    # carry scenario context and markers through for timelines and replays
    for rec in session.records:
        if rec["kind"] == "marker" or (rec["kind"] == "context"
                                       and rec["stream"] == "session"):
            records.append(rec)

    records.sort(key=lambda r: r["t"])
    with SessionWriter(features_path) as writer:
        writer.write_all(records)

    lanes = sorted({r["stream"] for r in records if r["kind"] == "feature"})
    report = {
        "session": str(session_path),
        "duration_s": duration,
        "lanes": lanes,
        "n_feature_records": sum(1 for r in records if r["kind"] == "feature"),
        "n_proposals": len(proposals),
        "proposal_times": [round(p.t, 1) for p in proposals],
        "n_scr_events": len(scr_events),
        "n_hrv_windows": len(hrv_windows),
        "utterances": utterance_reports,
        "neuro": neuro_report,
        "max_risk": round(max((r for _, r in risk_lane), default=0.0), 4),
        "wall_time_s": round(time.time() - t_wall, 2),
    }
    if len(utterance_reports) >= 3:
        durations = [u["duration_s"] for u in utterance_reports]
        sones = [u["loudness_sone"] for u in utterance_reports
                 if u["loudness_sone"] is not None]
        if len(sones) == len(durations):
            try:
                report["length_loudness_r"] = round(
                    prosody.length_loudness_correlation(durations, sones), 4)
            except ValueError:
                pass
    return AnalyzeResult(features_path=str(features_path), report=report,
                         records=records)
