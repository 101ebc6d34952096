import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicue import autonomic
from multicue.dsp import DegenerateInputError

from conftest import match_peaks, synth_ecg


def scr_signal(fs, duration, driver_times, driver_amps, rng=None):
    tt = np.arange(int(duration * fs)) / fs
    sig = 5.0 + 0.01 * tt
    if rng is not None:
        sig += 0.002 * np.cumsum(rng.standard_normal(tt.size)) / np.sqrt(fs)
    from multicue.session.simulate import scr_kernel
    for dt, amp in zip(driver_times, driver_amps):
        sig += amp * scr_kernel(tt - dt)
    return sig


class TestPhasic:
    def test_pure_drift_rejected(self):
        from multicue import dsp
        fs = 32.0
        tt = np.arange(int(180 * fs)) / fs
        drift = 5.0 + 0.02 * tt
        # out-of-band rejection: away from the filtfilt edge transient the
        # bandpassed drift is a tiny fraction of the drift's span
        sos = dsp.design_filter(dsp.FilterSpec("bandpass", fs, low=0.0159,
                                               high=0.5, order=2))
        bp = dsp.apply_filter(sos, drift, zero_phase=True)
        k = int(30 * fs)
        assert np.abs(bp[k:-k]).max() < 0.005 * np.ptp(drift)
        # and no response events are detected in that interior
        phasic = autonomic.extract_phasic(drift, fs)
        events = autonomic.detect_scr_peaks(phasic, fs, min_amplitude=0.5)
        assert [e for e in events if 30.0 < e.peak_t < 150.0] == []

    def test_kernel_shape_survives_drift(self, rng):
        fs = 32.0
        sig = scr_signal(fs, 120.0, [40.0, 80.0], [0.8, 0.8])
        phasic = autonomic.extract_phasic(sig, fs)
        events = autonomic.detect_scr_peaks(phasic, fs, min_amplitude=1.0)
        assert len(events) == 2
        # kernel peaks ~1.5 s after its driver
        for e, dt in zip(events, (40.0, 80.0)):
            assert abs(e.peak_t - (dt + 1.55)) < 0.5

    def test_constant_rejected(self):
        with pytest.raises(DegenerateInputError):
            autonomic.extract_phasic(np.full(8000, 5.0), 32.0)


class TestScrEvents:
    def test_attribution_window(self):
        fs = 32.0
        sig = scr_signal(fs, 60.0, [20.0], [1.0])
        phasic = autonomic.extract_phasic(sig, fs)
        events = autonomic.detect_scr_peaks(
            phasic, fs, min_amplitude=0.5,
            markers=[(20.0, "stimulus"), (40.0, "late")])
        assert len(events) == 1
        assert events[0].event_locked_to == "stimulus"

    def test_peak_too_early_unattributed(self):
        fs = 32.0
        sig = scr_signal(fs, 60.0, [20.0], [1.0])
        phasic = autonomic.extract_phasic(sig, fs)
        # marker placed so the peak lands only 0.4 s after it
        events = autonomic.detect_scr_peaks(
            phasic, fs, min_amplitude=0.5, markers=[(21.15, "m")])
        assert len(events) == 1
        assert events[0].event_locked_to is None

    def test_flat_phasic_no_events(self):
        assert autonomic.detect_scr_peaks(np.zeros(100), 32.0) == []

    def test_onset_before_peak_invariant(self):
        fs = 32.0
        sig = scr_signal(fs, 90.0, [25.0, 55.0], [0.5, 1.2])
        phasic = autonomic.extract_phasic(sig, fs)
        for e in autonomic.detect_scr_peaks(phasic, fs, min_amplitude=0.3):
            assert e.onset_t < e.peak_t
            assert e.amplitude > 0


class TestRPeaks:
    def test_sixty_bpm_count_and_timing(self):
        truth, ecg = synth_ecg(250.0, 60.0, 30.0, seed=1)
        det = autonomic.detect_r_peaks(ecg, 250.0)
        assert 29 <= len(truth) <= 31
        sens, prec, max_err = match_peaks(truth, det)
        assert sens >= 0.98 and prec >= 0.98
        assert max_err <= 0.010

    def test_amplitude_scale_invariance(self):
        _, ecg = synth_ecg(250.0, 75.0, 20.0, seed=2)
        a = autonomic.detect_r_peaks(ecg, 250.0)
        b = autonomic.detect_r_peaks(0.1 * ecg + 3.0, 250.0)
        np.testing.assert_array_equal(a, b)

    def test_flat_line_no_peaks(self):
        assert autonomic.detect_r_peaks(np.zeros(1000), 250.0).size == 0

    def test_too_short_rejected(self):
        with pytest.raises(DegenerateInputError):
            autonomic.detect_r_peaks(np.zeros(250), 250.0)


class TestRrCorrection:
    def test_missed_beat_split(self):
        out = autonomic.correct_rr(np.array([800.0, 810.0, 1600.0, 805.0]))
        np.testing.assert_allclose(out, [800.0, 810.0, 800.0, 800.0, 805.0])

    def test_duration_preserved_by_split(self):
        rr = np.array([800.0, 810.0, 1600.0, 805.0])
        out = autonomic.correct_rr(rr)
        assert abs(out.sum() - rr.sum()) / rr.sum() < 0.01

    def test_ectopic_replaced_by_local_median(self):
        out = autonomic.correct_rr(np.array([800.0, 400.0, 810.0]))
        np.testing.assert_allclose(out, [800.0, 805.0, 810.0])

    def test_clean_series_unchanged(self):
        rr = np.array([812.0, 798.0, 805.0, 821.0, 809.0])
        np.testing.assert_array_equal(autonomic.correct_rr(rr), rr)

    def test_minimum_three_intervals(self):
        with pytest.raises(ValueError):
            autonomic.correct_rr(np.array([800.0, 810.0]))


class TestRmssd:
    def test_hand_value(self):
        # diffs [10, -20] -> sqrt(mean([100, 400])) = sqrt(250)
        out = autonomic.rmssd(np.array([800.0, 810.0, 790.0]))
        assert out == pytest.approx(np.sqrt(250.0), abs=1e-12)

    def test_constant_zero(self):
        assert autonomic.rmssd(np.array([800.0, 800.0, 800.0])) == 0.0

    def test_below_minimum_absent(self):
        assert autonomic.rmssd(np.array([800.0, 810.0])) is None

    @given(st.lists(st.floats(300.0, 2000.0), min_size=3, max_size=60))
    @settings(max_examples=100, deadline=None)
    def test_matches_bruteforce(self, intervals):
        rr = np.array(intervals)
        total = 0.0
        for i in range(len(rr) - 1):
            total += (rr[i + 1] - rr[i]) ** 2
        expected = (total / (len(rr) - 1)) ** 0.5
        got = autonomic.rmssd(rr)
        assert abs(got - expected) <= 1e-9 * max(expected, 1.0)

    def test_windows_five_seconds_no_overlap(self):
        truth, ecg = synth_ecg(250.0, 60.0, 30.0, seed=3)
        peaks = autonomic.detect_r_peaks(ecg, 250.0)
        windows = autonomic.hrv_windows(peaks, 0.0, 30.0)
        assert len(windows) == 6
        for w in windows:
            assert w.t1 - w.t0 == pytest.approx(5.0)
            if w.n_intervals >= 3:
                assert w.rmssd_ms is not None
            else:
                assert w.rmssd_ms is None


class TestBaselineAndFlags:
    def test_scr_flag_at_threshold(self):
        b = autonomic.Baseline("scr", mean=1.0, std=0.2, duration_s=60.0)
        assert autonomic.arousal_flag(1.5, b) == "elevated"
        assert autonomic.arousal_flag(1.49, b) == "resting"
        assert autonomic.arousal_flag(1.0, b) == "resting"

    def test_hrv_inverted_rule(self):
        b = autonomic.Baseline("hrv", mean=40.0, std=5.0, duration_s=60.0)
        assert autonomic.arousal_flag(20.0, b) == "elevated"
        assert autonomic.arousal_flag(40.0, b) == "resting"
        assert autonomic.arousal_flag(26.66, b) == "elevated"

    def test_missing_baseline_rejected(self):
        with pytest.raises(autonomic.BaselineError):
            autonomic.arousal_flag(1.0, None)

    def test_baseline_validation(self):
        with pytest.raises(autonomic.BaselineError):
            autonomic.Baseline("scr", 1.0, 0.0, 60.0)
        with pytest.raises(autonomic.BaselineError):
            autonomic.Baseline("temperature", 1.0, 1.0, 60.0)

    def test_calibrate_from_values(self):
        b = autonomic.calibrate_baseline("scr", np.array([0.9, 1.0, 1.1]), 90.0)
        assert b.mean == pytest.approx(1.0)


class TestProxemics:
    def test_static_distance(self):
        ts = np.arange(0.0, 1.0, 1 / 30.0)
        hmd = np.zeros((ts.size, 3))
        avatar = np.zeros((ts.size, 3))
        avatar[:, 2] = 2.0
        out = autonomic.proxemics(ts, hmd, avatar)
        assert out[0].distance_m == pytest.approx(2.0)
        assert all(abs(s.velocity_mps) < 1e-9 for s in out)

    def test_constant_approach_velocity(self):
        ts = np.arange(0.0, 10.0, 1 / 30.0)
        hmd = np.zeros((ts.size, 3))
        avatar = np.zeros((ts.size, 3))
        avatar[:, 2] = 5.0 - 0.5 * ts
        out = autonomic.proxemics(ts, hmd, avatar)
        mid = out[len(out) // 2]
        assert mid.velocity_mps == pytest.approx(-0.5, abs=0.01)

    def test_symmetry_in_arguments(self, rng):
        ts = np.arange(0.0, 2.0, 1 / 30.0)
        a = rng.normal(0, 1, (ts.size, 3))
        b = rng.normal(0, 1, (ts.size, 3))
        ab = autonomic.proxemics(ts, a, b)
        ba = autonomic.proxemics(ts, b, a)
        for s1, s2 in zip(ab, ba):
            assert s1.distance_m == pytest.approx(s2.distance_m)

    def test_identity_transform_identical_points(self):
        ts = np.array([0.0, 1.0])
        p = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        out = autonomic.proxemics(ts, p, p,
                                  avatar_transform=(np.eye(3), np.zeros(3)))
        assert out[0].distance_m == 0.0

    def test_rigid_transform_applied(self):
        ts = np.array([0.0, 1.0])
        hmd = np.zeros((2, 3))
        avatar = np.zeros((2, 3))
        out = autonomic.proxemics(ts, hmd, avatar,
                                  avatar_transform=(np.eye(3),
                                                    np.array([0.0, 0.0, 2.0])))
        assert out[0].distance_m == pytest.approx(2.0)

    def test_frame_mismatch_rejected(self):
        with pytest.raises(ValueError):
            autonomic.proxemics(np.array([0.0]), np.zeros((1, 3)),
                                np.zeros((2, 3)))
