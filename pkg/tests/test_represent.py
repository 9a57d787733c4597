import numpy as np
import pytest

from tmcf.errors import ValidationError
from tmcf.represent import (
    acf_rep,
    build_features,
    default_lags,
    histogram_rep,
    jsd,
    pairwise_dissimilarity,
    psd_rep,
)

# hand value for jsd([0.5, 0.5], [1, 0]) with base-2 logs:
#   m = [0.75, 0.25]
#   KL(p||m) = 0.5*log2(0.5/0.75) + 0.5*log2(0.5/0.25)
#   KL(q||m) = log2(1/0.75)
JSD_HAND = 0.5 * (0.5 * np.log2(0.5 / 0.75) + 0.5 * np.log2(0.5 / 0.25)) + 0.5 * np.log2(
    1 / 0.75
)


class TestHistogram:
    def test_all_zero_flow(self):
        rep = histogram_rep(np.zeros(100), bins=50)
        assert rep.pmf[0] == 1.0
        assert rep.pmf[1:].sum() == 0.0

    def test_hand_count_right_closed_top_bin(self):
        rep = histogram_rep(np.array([0.0, 0.5, 1.0]), bins=2)
        assert np.allclose(rep.pmf, [1 / 3, 2 / 3])

    def test_uniform_grid(self):
        rep = histogram_rep(np.linspace(0.0, 1.0, 1000), bins=50)
        assert np.all(np.abs(rep.pmf - 0.02) <= 1e-3 + 1e-12)

    def test_pmf_sums_to_one_even_out_of_range(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            flow = rng.normal(0.5, 0.6, size=200)  # spills outside [0, 1]
            rep = histogram_rep(flow, bins=50)
            assert abs(rep.pmf.sum() - 1.0) < 1e-9

    def test_empty_series_rejected(self):
        with pytest.raises(ValidationError):
            histogram_rep(np.array([]))


class TestJsd:
    def test_identity_is_zero(self):
        p = histogram_rep(np.linspace(0, 1, 64), bins=8)
        assert jsd(p, p) == 0.0

    def test_disjoint_one_hot_is_one(self):
        assert jsd(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)

    def test_hand_value(self):
        value = jsd(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        assert value == pytest.approx(JSD_HAND, abs=1e-12)
        assert value == pytest.approx(0.3113, abs=1e-4)

    def test_symmetry_and_range_random_pmfs(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.random(20)
            q = rng.random(20)
            p /= p.sum()
            q /= q.sum()
            a, b = jsd(p, q), jsd(q, p)
            assert abs(a - b) < 1e-12
            assert 0.0 <= a <= 1.0

    def test_zero_iff_equal(self):
        rng = np.random.default_rng(2)
        p = rng.random(10)
        p /= p.sum()
        assert jsd(p, p.copy()) < 1e-15
        q = p.copy()
        q[0] += 0.01
        q /= q.sum()
        assert jsd(p, q) > 1e-7

    def test_bin_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            jsd(np.array([1.0]), np.array([0.5, 0.5]))


class TestAcf:
    def test_pure_sine_at_period(self):
        period = 24
        t = np.arange(20 * period)
        flow = np.sin(2 * np.pi * t / period)
        rep = acf_rep(flow, [period])
        assert rep.rho[0] == pytest.approx(1.0, abs=0.02)

    def test_lag_zero_is_one(self):
        rng = np.random.default_rng(3)
        rep = acf_rep(rng.random(50), [0, 1])
        assert rep.rho[0] == 1.0

    def test_white_noise_bound(self):
        rng = np.random.default_rng(42)
        flow = rng.normal(size=10000)
        rep = acf_rep(flow, default_lags(300))
        assert np.max(np.abs(rep.rho)) < 0.05

    def test_affine_invariance(self):
        rng = np.random.default_rng(4)
        flow = rng.random(300)
        lags = [1, 2, 5, 10]
        base = acf_rep(flow, lags)
        scaled = acf_rep(3.5 * flow + 11.0, lags)
        assert np.allclose(base.rho, scaled.rho, atol=1e-9)

    def test_constant_flow_degenerate(self):
        rep = acf_rep(np.full(100, 2.5), [1, 2, 3])
        assert rep.degenerate
        assert np.array_equal(rep.rho, np.zeros(3))

    def test_lag_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            acf_rep(np.arange(10.0), [10])


class TestDefaultLags:
    def test_five_minute_schedule(self):
        lags = default_lags(300)
        assert lags == list(range(1, 25)) + [36, 48, 60, 72] + [144, 288]
        assert max(lags) == 288  # one day of 5-minute samples

    def test_fifteen_minute_schedule(self):
        lags = default_lags(900)
        assert lags == list(range(1, 9)) + [12, 16, 20, 24] + [48, 96]
        assert max(lags) == 96

    def test_hourly_schedule(self):
        assert default_lags(3600) == [1, 2, 3, 4, 5, 6, 12, 24]

    def test_non_divisor_interval_rejected(self):
        with pytest.raises(ValidationError):
            default_lags(700)


class TestPsd:
    def test_daily_sine_peak_bin(self):
        # 1 cycle/day at 5-minute sampling: 288 steps per period, fs = 12/h
        t = np.arange(4096)
        flow = 2.0 * np.sin(2 * np.pi * t / 288.0) + 3.0
        rep = psd_rep(flow, fs=12.0)
        target = 1.0 / 24.0
        nearest = rep.freqs[np.argmin(np.abs(rep.freqs - target))]
        assert rep.freqs[np.argmax(rep.power)] == nearest

    def test_constant_flow_zero_power(self):
        rep = psd_rep(np.full(512, 9.0), fs=12.0)
        assert np.max(rep.power) == 0.0

    def test_parseval(self):
        t = np.arange(4096)
        flow = 2.0 * np.sin(2 * np.pi * t / 288.0) + 3.0
        rep = psd_rep(flow, fs=12.0)
        variance = np.var(flow)
        integral = rep.power.sum() * (rep.freqs[1] - rep.freqs[0])
        assert abs(integral - variance) / variance < 0.05

    def test_constant_offset_invariance(self):
        rng = np.random.default_rng(5)
        flow = rng.random(1024) * 4.0
        a = psd_rep(flow, fs=12.0)
        b = psd_rep(flow + 123.456, fs=12.0)
        assert np.allclose(a.power, b.power, rtol=1e-6, atol=1e-12)

    def test_power_nonnegative(self):
        rng = np.random.default_rng(6)
        rep = psd_rep(rng.random(700), fs=4.0)
        assert (rep.power >= 0).all()

    def test_short_series_rejected(self):
        with pytest.raises(ValidationError):
            psd_rep(np.arange(100.0), fs=12.0, segment_length=256)


class TestPairwise:
    def test_zero_diagonal_and_identical_vectors(self):
        feats = build_features(np.tile(np.linspace(0, 1, 40), (3, 1)), "histogram", bins=10)
        diss = pairwise_dissimilarity(feats)
        assert np.array_equal(np.diag(diss.d), np.zeros(3))
        assert diss.d.max() == 0.0

    def test_hand_euclidean(self):
        from tmcf.represent import ReprMatrix

        feats = ReprMatrix(
            features=np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 8.0]]), kind="acf"
        )
        diss = pairwise_dissimilarity(feats)
        assert np.allclose(diss.d, [[0, 5, 8], [5, 0, 5], [8, 5, 0]])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        flows = rng.random((6, 200))
        perm = rng.permutation(6)
        for kind in ("histogram", "acf", "psd"):
            feats = build_features(flows, kind, bins=10, lags=[1, 2, 3], fs=12.0,
                                   segment_length=64)
            permuted = build_features(flows[perm], kind, bins=10, lags=[1, 2, 3],
                                      fs=12.0, segment_length=64)
            d = pairwise_dissimilarity(feats).d
            dp = pairwise_dissimilarity(permuted).d
            assert np.array_equal(dp, d[np.ix_(perm, perm)])

    def test_jsd_requires_histograms(self):
        feats = build_features(np.random.default_rng(8).random((3, 100)), "acf",
                               lags=[1, 2])
        with pytest.raises(ValidationError):
            pairwise_dissimilarity(feats, metric="jsd")

    def test_jsd_matrix_within_unit_range(self):
        rng = np.random.default_rng(9)
        feats = build_features(rng.random((8, 300)), "histogram", bins=25)
        diss = pairwise_dissimilarity(feats)
        assert diss.d.min() >= 0.0
        assert diss.d.max() <= 1.0
