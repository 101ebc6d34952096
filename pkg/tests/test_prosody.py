import numpy as np
import pytest

from multicue import prosody
from multicue.dsp import DegenerateInputError
from multicue.loudness import stationary_loudness, third_octave_levels

FS = 48000.0
CAL = 94.0  # dB SPL of a unit-RMS digital signal


def tone(freq, spl_db, duration=0.25, fs=FS):
    amp = np.sqrt(2.0) * 10 ** ((spl_db - CAL) / 20.0)
    t = np.arange(int(fs * duration)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


class TestVad:
    def test_silence_all_unvoiced(self):
        flags = prosody.detect_voice_activity(np.zeros(int(FS)), FS)
        assert flags.size == 40 and not flags.any()

    def test_full_scale_tone_all_voiced(self):
        x = 0.9 * np.sin(2 * np.pi * 1000 * np.arange(int(FS)) / FS)
        flags = prosody.detect_voice_activity(x, FS)
        assert flags.all()

    def test_burst_localized_with_hangover(self):
        fs = 16000.0
        x = np.zeros(int(2 * fs))
        t = np.arange(int(0.5 * fs)) / fs
        x[int(0.5 * fs): int(1.0 * fs)] = 0.5 * np.sin(2 * np.pi * 440 * t)
        flags = prosody.detect_voice_activity(x, fs, hangover_ms=100.0)
        frames = np.flatnonzero(flags)
        start_t = frames[0] * 0.025
        end_t = (frames[-1] + 1) * 0.025
        assert abs(start_t - 0.5) <= 0.025 + 1e-9
        assert 1.0 - 0.025 <= end_t <= 1.0 + 0.100 + 0.025 + 1e-9
        # voiced region is one contiguous block
        assert np.all(np.diff(frames) == 1)

    def test_polarity_invariance(self, rng):
        x = rng.standard_normal(int(FS)) * 0.1
        f1 = prosody.detect_voice_activity(x, FS)
        f2 = prosody.detect_voice_activity(-x, FS)
        np.testing.assert_array_equal(f1, f2)


class TestPitch:
    def test_sine_sweep_within_1hz(self):
        cfg = prosody.ProsodyConfig()
        t = np.arange(int(0.1 * FS)) / FS
        for f in np.arange(80.0, 401.0, 20.0):
            r = prosody.estimate_pitch(np.sin(2 * np.pi * f * t), FS, cfg)
            assert r.voiced
            assert abs(r.pitch_hz - f) <= 1.0, f

    def test_square_wave_fundamental(self):
        t = np.arange(int(0.1 * FS)) / FS
        x = np.sign(np.sin(2 * np.pi * 100.0 * t))
        r = prosody.estimate_pitch(x, FS)
        assert abs(r.pitch_hz - 100.0) <= 1.0

    def test_white_noise_unvoiced(self, rng):
        cfg = prosody.ProsodyConfig()
        for _ in range(10):
            r = prosody.estimate_pitch(rng.standard_normal(4800), FS, cfg)
            assert not r.voiced

    def test_amplitude_invariance(self):
        t = np.arange(int(0.1 * FS)) / FS
        x = np.sin(2 * np.pi * 220.0 * t)
        r1 = prosody.estimate_pitch(x, FS)
        r2 = prosody.estimate_pitch(1e-3 * x, FS)
        r3 = prosody.estimate_pitch(50.0 * x, FS)
        assert r1.pitch_hz == pytest.approx(r2.pitch_hz, abs=1e-9)
        assert r1.pitch_hz == pytest.approx(r3.pitch_hz, abs=1e-9)

    def test_window_too_short_raises(self):
        with pytest.raises(DegenerateInputError):
            prosody.estimate_pitch(np.zeros(100), FS)

    def test_tracker_smooths_contour(self):
        cfg = prosody.ProsodyConfig()
        t = np.arange(int(0.1 * FS)) / FS
        frames = [prosody.estimate_pitch(np.sin(2 * np.pi * 150.0 * t), FS, cfg)
                  for _ in range(5)]
        contour = prosody.PitchTracker(cfg).track(frames)
        assert all(p is not None and abs(p - 150.0) < 1.0 for p in contour)

    def test_tracker_suppresses_octave_flips(self):
        # middle frame offers the octave-down candidate with slightly better
        # frame-level evidence; the jump penalty keeps the track at 200 Hz
        steady = prosody.PitchResult(200.0, 0.05, [
            prosody.PitchCandidate(200.0, 0.05),
            prosody.PitchCandidate(100.0, 0.30)])
        flip = prosody.PitchResult(100.0, 0.04, [
            prosody.PitchCandidate(100.0, 0.04),
            prosody.PitchCandidate(200.0, 0.09)])
        contour = prosody.PitchTracker().track([steady, steady, flip,
                                                steady, steady])
        assert all(p is not None and abs(p - 200.0) < 1.0 for p in contour)


class TestLoudness:
    def test_1khz_40db_one_sone(self):
        sone = prosody.compute_loudness(tone(1000.0, 40.0), FS, CAL)
        assert sone == pytest.approx(1.0, rel=0.15)

    def test_doubling_per_10db(self):
        l40 = prosody.compute_loudness(tone(1000.0, 40.0), FS, CAL)
        l50 = prosody.compute_loudness(tone(1000.0, 50.0), FS, CAL)
        assert l50 / l40 == pytest.approx(2.0, abs=0.4)

    def test_silence_zero(self):
        assert prosody.compute_loudness(np.zeros(int(FS * 0.5)), FS, CAL) == 0.0

    def test_monotone_in_level(self):
        sones = [prosody.compute_loudness(tone(1000.0, spl), FS, CAL)
                 for spl in range(30, 85, 5)]
        assert all(b >= a for a, b in zip(sones, sones[1:]))

    def test_uncalibrated_raises(self):
        with pytest.raises(prosody.CalibrationError):
            prosody.compute_loudness(tone(1000.0, 40.0), FS, None)

    def test_band_levels_match_spl(self):
        levels = third_octave_levels(tone(1000.0, 60.0, duration=0.5), FS, CAL)
        assert levels[16] == pytest.approx(60.0, abs=0.5)

    def test_stationary_loudness_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            stationary_loudness(np.zeros(10))


class TestRateAndAggregation:
    def test_speaking_rate_examples(self):
        assert prosody.speaking_rate(20, 30.0) == pytest.approx(40.0)
        assert prosody.speaking_rate(0, 10.0) == 0.0
        assert prosody.speaking_rate(150, 60.0) == pytest.approx(150.0)
        with pytest.raises(ValueError):
            prosody.speaking_rate(5, 0.0)

    def _frame(self, t0, pitch, sone):
        return prosody.ProsodyFrame(t0=t0, t1=t0 + 2.0, voiced=pitch is not None,
                                    pitch_hz=pitch, loudness_sone=sone,
                                    rms_db_spl=60.0)

    def test_pitch_stats(self):
        frames = [self._frame(0.0, 200.0, 3.0), self._frame(0.5, 210.0, 3.0),
                  self._frame(1.0, 190.0, 3.0)]
        agg = prosody.aggregate_utterance(frames)
        assert agg.pitch_mean_hz == pytest.approx(200.0)
        assert agg.pitch_min_hz == pytest.approx(190.0)
        assert agg.pitch_max_hz == pytest.approx(210.0)
        assert agg.pitch_min_hz <= agg.pitch_mean_hz <= agg.pitch_max_hz

    def test_loudness_high_flag(self):
        frames = [self._frame(0.0, 150.0, 9.1)]
        agg = prosody.aggregate_utterance(frames)
        assert agg.loudness_high is True
        quiet = prosody.aggregate_utterance([self._frame(0.0, 150.0, 7.9)])
        assert quiet.loudness_high is False

    def test_all_unvoiced_pitch_absent(self):
        frames = [self._frame(0.0, None, 2.0), self._frame(0.5, None, 2.5)]
        agg = prosody.aggregate_utterance(frames)
        assert agg.pitch_mean_hz is None
        assert agg.loudness_mean_sone == pytest.approx(2.25)

    def test_no_frames_raises(self):
        with pytest.raises(DegenerateInputError):
            prosody.aggregate_utterance([])

    def test_external_affect_provenance(self):
        agg = prosody.aggregate_utterance([self._frame(0.0, 100.0, 1.0)],
                                          valence=0.2, arousal=-0.4)
        assert agg.provenance["affect"] == "external-model"

    def test_correlation_utility(self, rng):
        d = rng.uniform(1, 10, 20)
        noise = rng.normal(0, 0.1, 20)
        r = prosody.length_loudness_correlation(d, 0.5 * d + noise)
        assert r > 0.95
        with pytest.raises(ValueError):
            prosody.length_loudness_correlation([1, 2], [1, 2])
