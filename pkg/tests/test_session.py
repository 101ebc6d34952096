import asyncio
import hashlib
import json

import numpy as np
import pytest

from multicue.bus import StreamBus
from multicue.session import recording
from multicue.session.replay import ReplayClock, ReplayStats, replay
from multicue.session.simulate import (SimulatorConfig, simulate,
                                       make_gesture_training_set)
from multicue.session.service import SessionService, message

from conftest import match_peaks


@pytest.fixture(scope="module")
def short_session(tmp_path_factory):
    base = tmp_path_factory.mktemp("sessions")
    session = base / "short.jsonl"
    sidecar = base / "short.truth.json"
    config = SimulatorConfig(duration_s=60.0, rng_seed=42)
    truth = simulate(config, session, sidecar)
    return session, sidecar, truth


@pytest.fixture(scope="module")
def analyzed(short_session, tmp_path_factory):
    from multicue.session.analyze import analyze_session
    session, _, _ = short_session
    out = tmp_path_factory.mktemp("features") / "features.jsonl"
    result = analyze_session(session, out)
    return out, result


class TestRecordingFormat:
    def test_writer_reader_round_trip(self, tmp_path):
        path = tmp_path / "r.jsonl"
        records = [
            recording.make_record(1.5, "marker", "markers",
                                  {"label": "go", "payload": {}}),
            recording.make_record(0.5, "sample", "ecg",
                                  {"values": [1.25, -0.5]}),
            recording.make_record(1.0, "sample", "ecg",
                                  {"rate": 10.0, "block": [[1.0, 2.0], [3.0, 4.0]]}),
        ]
        with recording.SessionWriter(path) as w:
            w.write_all(records)
        loaded = recording.load_session(path)
        # reader sorts by t
        assert [r["t"] for r in loaded] == [0.5, 1.0, 1.5]
        assert loaded[1]["data"]["block"] == [[1.0, 2.0], [3.0, 4.0]]

    def test_unknown_kind_rejected(self):
        with pytest.raises(recording.RecordingError):
            recording.make_record(0.0, "telemetry", "x", {})

    def test_malformed_lines_skipped_with_line_numbers(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = recording.format_record(
            recording.make_record(0.0, "marker", "m", {"label": "a"}))
        path.write_text(good + "\n{broken\n" + good + "\n", encoding="utf-8")
        errors = []
        loaded = recording.load_session(
            path, on_error=lambda line, msg: errors.append(line))
        assert len(loaded) == 2
        assert errors == [2]

    def test_block_expansion_timestamps(self, tmp_path):
        path = tmp_path / "b.jsonl"
        with recording.SessionWriter(path) as w:
            w.write(recording.session_header(0.0, [], {}))
            w.write(recording.make_record(2.0, "sample", "s",
                                          {"rate": 4.0,
                                           "block": [[1.0], [2.0], [3.0]]}))
        sess = recording.read_session(path)
        ts, vals = sess.samples_for("s")
        np.testing.assert_allclose(ts, [2.0, 2.25, 2.5])
        np.testing.assert_allclose(vals[:, 0], [1.0, 2.0, 3.0])


class TestSimulator:
    def test_seed_determinism_byte_exact(self, tmp_path):
        config = SimulatorConfig(duration_s=40.0, rng_seed=7)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        simulate(config, a, tmp_path / "a.json")
        simulate(config, b, tmp_path / "b.json")
        assert hashlib.sha256(a.read_bytes()).digest() == \
            hashlib.sha256(b.read_bytes()).digest()
        assert (tmp_path / "a.json").read_bytes() == \
            (tmp_path / "b.json").read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        simulate(SimulatorConfig(duration_s=40.0, rng_seed=1), a, tmp_path / "a.json")
        simulate(SimulatorConfig(duration_s=40.0, rng_seed=2), b, tmp_path / "b.json")
        assert a.read_bytes() != b.read_bytes()

    def test_ecg_sidecar_plausible(self, short_session):
        _, _, truth = short_session
        # 60 s at rest ~0.85 s RR with a faster stress segment
        assert 60 <= len(truth["r_peak_times"]) <= 90

    def test_sidecar_supports_rpeak_oracle(self, short_session):
        from multicue import autonomic
        session, _, truth = short_session
        sess = recording.read_session(session)
        ts, vals = sess.samples_for("ecg_chest")
        det = autonomic.detect_r_peaks(vals[:, 0], 250.0)
        sens, prec, err = match_peaks(truth["r_peak_times"], det)
        assert sens >= 0.98 and prec >= 0.98 and err <= 0.010

    def test_all_eight_streams_registered(self, short_session):
        session, _, _ = short_session
        sess = recording.read_session(session)
        assert len(sess.specs) == 8

    def test_ecg_generator_count_oracle(self):
        # 60 bpm for 30 s plants 30 +/- 1 complexes
        from multicue.session.simulate import synthetic_ecg
        rng = np.random.default_rng(12)
        times, _ = synthetic_ecg(250.0, 30.0, rr_mean_s=1.0,
                                 rr_jitter_s=0.03, rng=rng)
        assert 29 <= len(times) <= 31

    def test_eeg_truth_supports_decode_oracle(self, short_session):
        # the sidecar's per-epoch target plus the recorded EEG reproduce the
        # power-comodulation recovery without any sidecar-free knowledge
        from multicue import neuro
        session, _, truth = short_session
        sess = recording.read_session(session)
        _, eeg = sess.samples_for("eeg_cap")
        n_epochs = len(truth["eeg_target_distance"])
        epochs = eeg.T.reshape(truth["config"]["eeg_channels"], n_epochs, -1)
        epochs = epochs.transpose(1, 0, 2)
        banded = neuro.band_filter_epochs(epochs, 250.0, 8.0, 12.0)
        z = np.asarray(truth["eeg_target_distance"])
        res = neuro.spoc(banded, z, 1)
        a_true = np.asarray(truth["eeg_true_mixing"])
        cos = abs(a_true @ res.patterns[:, 0]) / np.linalg.norm(res.patterns[:, 0])
        assert cos >= 0.95


class TestReplay:
    def test_batch_replay_counts(self, short_session):
        session, _, _ = short_session
        bus = StreamBus(retention_s=1e9)
        stats = replay(session, bus, ReplayClock(speed=None))
        assert stats.samples > 500_000
        assert stats.markers >= 7
        assert stats.skipped_lines == []

    def test_round_trip_semantic_identity(self, tmp_path, short_session):
        session, _, _ = short_session
        bus = StreamBus(retention_s=1e9)
        captured = []
        replay(session, bus, ReplayClock(speed=None), on_record=captured.append)
        out = tmp_path / "again.jsonl"
        with recording.SessionWriter(out) as w:
            w.write_all(captured)
        original = recording.load_session(session)
        again = recording.load_session(out)
        assert len(original) == len(again)
        for a, b in zip(original, again):
            assert a == b

    def test_corrupt_line_reported_and_skipped(self, tmp_path):
        path = tmp_path / "c.jsonl"
        lines = [
            recording.format_record(recording.session_header(0.0, [], {})),
            "THIS IS NOT JSON",
            recording.format_record(recording.make_record(
                1.0, "marker", "m", {"label": "x"})),
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        bus = StreamBus()
        stats = replay(path, bus, ReplayClock(speed=None))
        assert stats.markers == 1
        assert len(stats.skipped_lines) == 1
        assert stats.skipped_lines[0][0] == 2

    def test_wall_clock_pacing(self, tmp_path):
        path = tmp_path / "t.jsonl"
        with recording.SessionWriter(path) as w:
            w.write(recording.session_header(0.0, [], {}))
            for k in range(5):
                w.write(recording.make_record(k * 0.05, "marker", "m",
                                              {"label": f"m{k}"}))
        sleeps = []
        clock = ReplayClock(speed=2.0)
        import time
        start = time.monotonic()
        replay(path, StreamBus(), clock)
        elapsed = time.monotonic() - start
        # 0.2 s of session time at 2x speed ~ 0.1 s wall time
        assert 0.05 <= elapsed <= 0.5

    def test_clock_validation(self):
        with pytest.raises(ValueError):
            ReplayClock(speed=-1.0)


class TestAnalyze:
    def test_all_lanes_present(self, analyzed):
        _, result = analyzed
        assert set(result.report["lanes"]) >= {
            "prosody", "gesture", "emotion", "alpha_power", "scr", "hrv",
            "proxemics", "risk", "verbal"}

    def test_proposals_only_in_escalation_phase(self, analyzed, short_session):
        _, result = analyzed
        _, _, truth = short_session
        esc0, esc1 = truth["phases"]["escalation"]
        assert result.report["n_proposals"] >= 1
        for t in result.report["proposal_times"]:
            assert esc0 <= t <= esc1 + 10.0

    def test_proposal_cooldown_in_output(self, analyzed):
        _, result = analyzed
        times = result.report["proposal_times"]
        assert all(b - a >= 5.0 for a, b in zip(times, times[1:]))

    def test_insult_detected_in_escalation(self, analyzed):
        _, result = analyzed
        insults = [u for u in result.report["utterances"] if u["insults"]]
        assert len(insults) == 1
        assert insults[0]["formality"] == "informal"

    def test_neuro_decode_positive(self, analyzed):
        _, result = analyzed
        assert result.report["neuro"]["held_out_r"] >= 0.5

    def test_scr_events_locked_to_escalation_markers(self, analyzed):
        path, _ = analyzed
        rows = [json.loads(line) for line in open(path, encoding="utf-8")]
        locked = [r for r in rows if r["stream"] == "scr"
                  and r["data"]["event_locked_to"] == "avatar_step_close"]
        assert len(locked) >= 3


class TestService:
    def test_full_duplex_round_trip(self, analyzed):
        features_path, _ = analyzed
        asyncio.run(self._run_service_scenario(str(features_path)))

    async def _run_service_scenario(self, features_path):
        import websockets

        service = SessionService(features_path, speed=None)
        got = {"features": [], "proposals": [], "decisions": [],
               "acks": [], "errors": [], "states": []}

        async with websockets.serve(service.handler, "127.0.0.1", 0) as server:
            port = list(server.sockets)[0].getsockname()[1]
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                hello = json.loads(await ws.recv())
                assert hello["type"] == "hello"
                assert "risk" in hello["payload"]["streams"]

                replay_task = asyncio.create_task(service.replay_loop())
                proposal_id = None
                while True:
                    try:
                        raw = await asyncio.wait_for(ws.recv(), timeout=3.0)
                    except asyncio.TimeoutError:
                        break
                    msg = json.loads(raw)
                    got[msg["type"] + "s"].append(msg["payload"]) \
                        if msg["type"] + "s" in got else None
                    if msg["type"] == "proposal" and proposal_id is None:
                        proposal_id = msg["payload"]["id"]
                    if msg["type"] == "feature":
                        got["features"].append(msg["payload"])
                    if replay_task.done() and proposal_id is not None:
                        break
                await replay_task

                # one reply per command, ack or error
                await ws.send(json.dumps({
                    "v": 1, "type": "decide", "req_id": "c1",
                    "payload": {"proposal_id": proposal_id,
                                "decision": "approve"}}))
                await ws.send(json.dumps({
                    "v": 1, "type": "set_weight", "req_id": "c2",
                    "payload": {"modality": "gesture", "value": 1.5}}))
                await ws.send("not json at all")
                await ws.send(json.dumps({
                    "v": 1, "type": "inject_context", "req_id": "c4",
                    "payload": {"key": "prior_tension", "value": True}}))
                replies = []
                while len([r for r in replies
                           if r["type"] in ("ack", "error")]) < 4:
                    replies.append(json.loads(
                        await asyncio.wait_for(ws.recv(), timeout=3.0)))
                acks = [r for r in replies if r["type"] == "ack"]
                errors = [r for r in replies if r["type"] == "error"]
                assert {a["payload"]["req_id"] for a in acks} == {"c1", "c4"}
                assert all(e["payload"]["code"] == "bad_request" for e in errors)

        streams = {f["stream"] for f in got["features"] if "stream" in f}
        assert {"prosody", "gesture", "risk"} <= streams
        # approve landed in the engine log
        decided = [p for p in service.engine.proposals.values()
                   if p.status == "approved"]
        assert len(decided) == 1
        assert service.cue_state.context.flags["prior_tension"] is True
        assert "gesture" not in service.weights  # rejected weight not applied

    def test_weight_zero_excludes_lane_from_risk(self, analyzed):
        features_path, _ = analyzed
        asyncio.run(self._run_weight_scenario(str(features_path)))

    async def _run_weight_scenario(self, features_path):
        service = SessionService(features_path, speed=None)
        broadcasts = []

        async def capture(msg_type, payload):
            broadcasts.append((msg_type, payload))

        service.broadcast = capture
        from multicue.interpret import CueInput
        service.cue_state.latest = {
            "gesture": (10.0, CueInput(0.9)),
            "verbal": (10.0, CueInput(0.3)),
        }
        await service._fuse_tick(10.0)
        both = [p for t, p in broadcasts if t == "feature"][-1]
        assert set(both["data"]["cues"]) == {"gesture", "verbal"}
        service.weights["gesture"] = 0.0
        await service._fuse_tick(11.0)
        excluded = [p for t, p in broadcasts if t == "feature"][-1]
        assert set(excluded["data"]["cues"]) == {"verbal"}
        assert excluded["data"]["risk_score"] == pytest.approx(0.3)

    def test_throttle_limits_rate(self, analyzed):
        features_path, _ = analyzed
        service = SessionService(str(features_path), speed=None)
        sent = []
        t0 = 0.0
        for t in np.arange(0.0, 1.0, 0.01):  # 100 Hz offered
            if not service._throttled("lane", float(t)):
                sent.append(t)
        assert len(sent) <= 11

    def test_message_schema_versioned(self):
        doc = json.loads(message("state", {"a": 1}))
        assert doc["v"] == 1 and doc["type"] == "state"


class TestGestureTrainingSet:
    def test_templates_learnable(self):
        from multicue.gesture import GestureTaxonomy, train_gesture_forest
        tax = GestureTaxonomy.load_default()
        feats, labels = make_gesture_training_set(tax, per_class=12)
        model = train_gesture_forest(feats, labels, tax, n_trees=16, rng_seed=0)
        assert model.oob_accuracy >= 0.95


class TestCli:
    def test_train_gesture_then_analyze_with_model(self, tmp_path, short_session):
        from multicue.session.cli import main
        session, _, _ = short_session
        model_path = tmp_path / "gesture.json"
        assert main(["train-gesture", str(model_path), "--trees", "12",
                     "--per-class", "8", "--seed", "3"]) == 0
        features = tmp_path / "f.jsonl"
        report = tmp_path / "r.json"
        assert main(["analyze", str(session), "--output", str(features),
                     "--report", str(report),
                     "--gesture-model", str(model_path)]) == 0
        doc = json.loads(report.read_text())
        assert doc["n_proposals"] >= 1

    def test_report_verb(self, analyzed, capsys):
        from multicue.session.cli import main
        features_path, _ = analyzed
        assert main(["report", str(features_path)]) == 0
        out = capsys.readouterr().out
        assert "risk" in out and "proposals:" in out
