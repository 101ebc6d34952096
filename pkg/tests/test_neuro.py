import numpy as np
import pytest

from multicue import neuro
from multicue.session.simulate import simulate_eeg_session


def make_session(n_ch=6, n_epochs=600, fs=250.0, snr_db=3.0, seed=7):
    rng = np.random.default_rng(seed)
    z = np.sin(2 * np.pi * np.arange(n_epochs) / 60.0) \
        + 0.3 * rng.standard_normal(n_epochs)
    z = (z - z.mean()) / z.std()
    epochs, power, a_true = simulate_eeg_session(n_ch, n_epochs, fs, z,
                                                 snr_db, rng)
    return epochs, z, a_true


def pattern_cosine(pattern, truth):
    return abs(float(truth @ pattern)) / (np.linalg.norm(truth)
                                          * np.linalg.norm(pattern))


class TestJacobi:
    def test_matches_numpy_eigh(self, rng):
        for n in (2, 5, 12, 20):
            A = rng.standard_normal((n, n))
            A = A + A.T
            w, V = neuro.jacobi_eigh(A)
            w_ref = np.sort(np.linalg.eigvalsh(A))[::-1]
            np.testing.assert_allclose(w, w_ref, atol=1e-10 * max(1, abs(w_ref).max()))
            np.testing.assert_allclose(A @ V, V * w, atol=1e-9 * max(1, abs(w).max()))

    def test_eigenvectors_orthonormal(self, rng):
        A = rng.standard_normal((8, 8))
        A = A + A.T
        _, V = neuro.jacobi_eigh(A)
        np.testing.assert_allclose(V.T @ V, np.eye(8), atol=1e-10)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            neuro.jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestAlphaPeak:
    def test_planted_11hz_recovered(self, rng):
        fs = 250.0
        n = int(30 * fs)
        pink = np.cumsum(rng.standard_normal((4, n)), axis=1)
        pink -= pink.mean(axis=1, keepdims=True)
        pink /= pink.std()
        data = 2.0 * pink + np.sin(2 * np.pi * 11.0 * np.arange(n) / fs)
        peak = neuro.estimate_alpha_peak(data, fs)
        assert not peak.used_fallback
        assert abs(peak.center_hz - 11.0) <= 0.5

    def test_white_noise_fallback(self, rng):
        data = rng.standard_normal((4, int(30 * 250)))
        peak = neuro.estimate_alpha_peak(data, 250.0)
        assert peak.used_fallback and peak.center_hz == 10.0

    def test_too_short_rejected(self, rng):
        with pytest.raises(Exception):
            neuro.estimate_alpha_peak(rng.standard_normal((2, 500)), 250.0)


class TestCovariances:
    def test_whitened_noise_near_identity(self, rng):
        epochs = rng.standard_normal((200, 4, 500))
        _, mean_cov = neuro.epoch_covariances(epochs, shrinkage=0.0)
        np.testing.assert_allclose(mean_cov, np.eye(4), atol=0.05)

    def test_full_shrinkage_scaled_identity(self, rng):
        epochs = rng.standard_normal((3, 5, 100)) * 3.0
        covs, _ = neuro.epoch_covariances(epochs, shrinkage=1.0)
        for c in covs:
            off = c - np.diag(np.diag(c))
            assert np.max(np.abs(off)) == 0.0
            assert np.allclose(np.diag(c), c[0, 0])

    def test_rank_deficient_made_pd(self, rng):
        epochs = np.zeros((2, 6, 100))
        row = rng.standard_normal(100)
        epochs[:, 0, :] = row  # rank 1
        covs, _ = neuro.epoch_covariances(epochs, shrinkage=0.1)
        for c in covs:
            assert np.linalg.eigvalsh(c).min() > 0

    def test_gamma_bounds(self, rng):
        with pytest.raises(ValueError):
            neuro.epoch_covariances(rng.standard_normal((2, 3, 50)),
                                    shrinkage=1.5)


class TestBandDefinition:
    def test_bands_non_overlapping_and_adjacent(self):
        band = neuro.BandDefinition(10.0)
        assert band.signal == (8.0, 12.0)
        assert band.flank_low == (6.0, 8.0)
        assert band.flank_high == (12.0, 14.0)

    def test_bands_must_fit_in_1_40(self):
        with pytest.raises(ValueError):
            neuro.BandDefinition(4.0)
        with pytest.raises(ValueError):
            neuro.BandDefinition(37.0)


class TestSsd:
    def test_component_beats_every_channel(self):
        epochs, _, _ = make_session(n_epochs=200)
        es = neuro.EegEpochSet(epochs, 250.0)
        band = neuro.BandDefinition(10.0)
        res = neuro.ssd(es, band, n_components=3)

        sig = neuro.band_filter_epochs(epochs, 250.0, *band.signal)
        lo = neuro.band_filter_epochs(epochs, 250.0, *band.flank_low)
        hi = neuro.band_filter_epochs(epochs, 250.0, *band.flank_high)
        _, c_sig = neuro.epoch_covariances(sig)
        _, c_lo = neuro.epoch_covariances(lo)
        _, c_hi = neuro.epoch_covariances(hi)

        def ratio(v):
            return (v @ c_sig @ v) / (v @ (c_lo + c_hi) @ v)

        comp = ratio(res.filters[:, 0])
        best_channel = max(ratio(np.eye(6)[c]) for c in range(6))
        assert 10 * np.log10(comp / best_channel) >= 3.0

    def test_generalized_orthonormality(self):
        epochs, _, _ = make_session(n_epochs=150, seed=3)
        es = neuro.EegEpochSet(epochs, 250.0)
        band = neuro.BandDefinition(10.0)
        res = neuro.ssd(es, band, n_components=6)
        lo = neuro.band_filter_epochs(epochs, 250.0, *band.flank_low)
        hi = neuro.band_filter_epochs(epochs, 250.0, *band.flank_high)
        _, c_lo = neuro.epoch_covariances(lo)
        _, c_hi = neuro.epoch_covariances(hi)
        resid = res.filters.T @ (c_lo + c_hi) @ res.filters - np.eye(6)
        assert np.max(np.abs(resid)) <= 1e-6

    def test_no_alpha_content_eigenvalues_near_one(self, rng):
        epochs = rng.standard_normal((150, 6, 250))
        res = neuro.ssd(neuro.EegEpochSet(epochs, 250.0),
                        neuro.BandDefinition(10.0), n_components=6)
        assert np.all(np.abs(res.eigenvalues - 1.0) < 0.6)

    def test_too_many_components(self, rng):
        epochs = rng.standard_normal((20, 4, 250))
        with pytest.raises(neuro.DecompositionError):
            neuro.ssd(neuro.EegEpochSet(epochs, 250.0),
                      neuro.BandDefinition(10.0), n_components=5)

    def test_eigenvalue_equivariance_under_mixing(self, rng):
        # exact for the unshrunk problem; identity shrinkage is deliberately
        # basis-dependent, so equivariance is asserted at gamma = 0
        epochs, _, _ = make_session(n_epochs=120, seed=5)
        band = neuro.BandDefinition(10.0)
        res_a = neuro.ssd(neuro.EegEpochSet(epochs, 250.0), band, 6,
                          shrinkage=0.0)
        for seed in range(3):
            mix_rng = np.random.default_rng(seed)
            M = mix_rng.standard_normal((6, 6)) + 0.5 * np.eye(6)
            mixed = np.einsum("cd,edt->ect", M, epochs)
            res_b = neuro.ssd(neuro.EegEpochSet(mixed, 250.0), band, 6,
                              shrinkage=0.0)
            np.testing.assert_allclose(res_a.eigenvalues, res_b.eigenvalues,
                                       rtol=1e-6)


class TestSpoc:
    def test_pattern_recovery_and_power_correlation(self):
        epochs, z, a_true = make_session(n_epochs=300)
        banded = neuro.band_filter_epochs(epochs, 250.0, 8.0, 12.0)
        res = neuro.spoc(banded, z, n_components=3)
        assert pattern_cosine(res.patterns[:, 0], a_true) >= 0.95
        p = res.power[:, 0]
        assert abs(np.corrcoef(p, z)[0, 1]) >= 0.8

    def test_constant_target_rejected(self, rng):
        epochs = rng.standard_normal((50, 4, 250))
        with pytest.raises(neuro.DecompositionError):
            neuro.spoc(epochs, np.ones(50), 1)

    def test_sign_flip_of_target(self):
        epochs, z, _ = make_session(n_epochs=150, seed=11)
        banded = neuro.band_filter_epochs(epochs, 250.0, 8.0, 12.0)
        a = neuro.spoc(banded, z, 2)
        b = neuro.spoc(banded, -z, 2)
        np.testing.assert_allclose(a.eigenvalues, -b.eigenvalues, atol=1e-9)
        for k in range(2):
            cos = abs(a.filters[:, k] @ b.filters[:, k]) / (
                np.linalg.norm(a.filters[:, k]) * np.linalg.norm(b.filters[:, k]))
            assert cos == pytest.approx(1.0, abs=1e-6)

    def test_constant_shift_of_target_invariant(self):
        epochs, z, _ = make_session(n_epochs=150, seed=13)
        banded = neuro.band_filter_epochs(epochs, 250.0, 8.0, 12.0)
        a = neuro.spoc(banded, z, 1)
        b = neuro.spoc(banded, z + 100.0, 1)
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)
        np.testing.assert_allclose(np.abs(a.filters), np.abs(b.filters),
                                   atol=1e-9)

    def test_needs_ten_epochs(self, rng):
        epochs = rng.standard_normal((5, 4, 250))
        with pytest.raises(neuro.DecompositionError):
            neuro.spoc(epochs, rng.standard_normal(5), 1)


class TestDecode:
    def test_train_test_split(self):
        epochs, z, _ = make_session(n_epochs=600)
        banded = neuro.band_filter_epochs(epochs, 250.0, 8.0, 12.0)
        res = neuro.spoc(banded[:300], z[:300], 1)
        out = neuro.decode_target(res.filters, banded[300:], truth=z[300:])
        assert abs(out.r) >= 0.7

    def test_truth_omitted(self):
        epochs, z, _ = make_session(n_epochs=100, seed=2)
        banded = neuro.band_filter_epochs(epochs, 250.0, 8.0, 12.0)
        res = neuro.spoc(banded, z, 1)
        out = neuro.decode_target(res.filters, banded)
        assert out.r is None
        assert out.predicted.shape == (100,)
        assert abs(out.predicted.mean()) < 1e-9

    def test_single_epoch_correlation_undefined(self):
        epochs, z, _ = make_session(n_epochs=100, seed=2)
        banded = neuro.band_filter_epochs(epochs, 250.0, 8.0, 12.0)
        res = neuro.spoc(banded, z, 1)
        with pytest.raises(neuro.DecompositionError):
            neuro.decode_target(res.filters, banded[:1], truth=z[:1])

    def test_patterns_recover_mixing_via_pipeline(self):
        epochs, z, a_true = make_session(n_epochs=300, seed=21)
        es = neuro.EegEpochSet(epochs, 250.0)
        model = neuro.fit_mental_state(es, z, band=neuro.BandDefinition(10.0),
                                       n_ssd=6, n_spoc=1)
        assert pattern_cosine(model.patterns[:, 0], a_true) >= 0.95
        assert len(model.training_correlations) == 1


class TestArtifacts:
    def test_clean_epochs_kept(self, rng):
        epochs = rng.standard_normal((20, 4, 250)) * 10.0
        mask = neuro.reject_artifacts(epochs, peak_to_peak_uv=150.0)
        assert mask.all()

    def test_blink_epoch_rejected(self, rng):
        epochs = rng.standard_normal((5, 4, 250)) * 10.0
        epochs[2, 1, 100:120] += 500.0
        mask = neuro.reject_artifacts(epochs, peak_to_peak_uv=150.0)
        assert not mask[2] and mask.sum() == 4

    def test_infinite_threshold_keeps_all(self, rng):
        epochs = rng.standard_normal((5, 4, 250)) * 1e5
        assert neuro.reject_artifacts(epochs, np.inf).all()

    def test_threshold_positive(self, rng):
        with pytest.raises(ValueError):
            neuro.reject_artifacts(rng.standard_normal((2, 2, 50)), 0.0)
