import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscp import conformal, data, nn, pretext
from sscp.conformal import (CalibratedConformal, Kind, Normalizer, cqr_calibrate,
                            cqr_interval, crf_interval, crf_score, fit_cqr, fit_crf,
                            fit_icp, fit_ssl_norm, icp_calibrate, quantile_index,
                            sscp_fit, cqr_sscp_fit, ssl_norm_sigma, train_normalizer)
from sscp.errors import (ConfigurationError, EmptyCalibrationError, PositivityError,
                         SplitIntegrityError)


def brute_force_rank_pick(scores, alpha):
    """Independent oracle: k-th smallest by counting, no sort call."""
    n = len(scores)
    k = math.ceil((n + 1) * (1 - alpha))
    if k > n:
        return math.inf
    return min(v for v in scores if sum(1 for u in scores if u <= v) >= k)


class TestQuantileIndex:
    def test_examples(self):
        assert quantile_index(99, 0.1) == 90
        assert quantile_index(10, 0.5) == 6
        assert quantile_index(4, 0.1) is None  # rank 5 > 4

    def test_empty(self):
        with pytest.raises(EmptyCalibrationError):
            quantile_index(0, 0.1)

    @given(n=st.integers(1, 200), a1=st.sampled_from([0.05, 0.1, 0.2, 0.3]),
           a2=st.sampled_from([0.3, 0.5, 0.7, 0.9]))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_alpha(self, n, a1, a2):
        lo_a, hi_a = min(a1, a2), max(a1, a2)
        k_lo = quantile_index(n, lo_a)
        k_hi = quantile_index(n, hi_a)
        if k_lo is not None and k_hi is not None:
            assert k_hi <= k_lo


class TestIcpCalibrate:
    def test_one_to_ten(self):
        scores = np.arange(1.0, 11.0)
        assert icp_calibrate(scores, 0.5) == brute_force_rank_pick(scores, 0.5) == 6.0

    def test_all_equal(self):
        for alpha in (0.05, 0.1, 0.5):  # n=39 keeps the rank below n for all three
            assert icp_calibrate(np.full(39, 3.3), alpha) == 3.3

    def test_overflow_gives_inf(self):
        assert icp_calibrate(np.array([1.0, 2.0, 3.0, 4.0]), 0.1) == math.inf

    def test_empty(self):
        with pytest.raises(EmptyCalibrationError):
            icp_calibrate(np.array([]), 0.1)

    def test_rejects_negative_scores(self):
        with pytest.raises(ConfigurationError):
            icp_calibrate(np.array([1.0, -0.1]), 0.1)

    @given(n=st.integers(1, 30), alpha=st.sampled_from([0.05, 0.1, 0.2]),
           seed=st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, n, alpha, seed):
        scores = np.random.default_rng(seed).random(n) * 10
        assert icp_calibrate(scores, alpha) == brute_force_rank_pick(list(scores), alpha)

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_epsilon_monotone_in_alpha(self, seed):
        scores = np.random.default_rng(seed).random(40)
        eps = [icp_calibrate(scores, a) for a in (0.05, 0.1, 0.2, 0.4)]
        assert all(e1 >= e2 for e1, e2 in zip(eps, eps[1:]))


class TestCrfOps:
    def test_score_examples(self):
        assert crf_score(5.0, 3.0, 2.0) == 1.0
        assert crf_score(4.2, 4.2, 9.0) == 0.0
        assert crf_score(3.0, 1.0, 0.5) == 4.0

    def test_score_positivity_contract(self):
        with pytest.raises(PositivityError):
            crf_score(1.0, 0.0, 0.0)

    def test_interval_examples(self):
        assert crf_interval(1.0, 2.0, 0.5) == (0.0, 2.0)
        lo, hi = crf_interval(np.array([3.0]), 0.0, np.array([1.0]))
        assert lo[0] == hi[0] == 3.0

    def test_unit_sigma_reduces_to_icp(self):
        f, eps = 2.5, 0.7
        assert crf_interval(f, eps, 1.0) == (f - eps, f + eps)

    def test_infinite_epsilon_spans_line(self):
        lo, hi = crf_interval(np.array([1.0]), math.inf, np.array([2.0]))
        assert lo[0] == -math.inf and hi[0] == math.inf


class TestCqrCalibrate:
    def test_score_examples(self):
        # outside above: max(0-3, 3-2) = 1; inside: max(0-1, 1-2) = -1
        assert cqr_calibrate(np.zeros(1), np.full(1, 2.0), np.full(1, 3.0), 0.5) == 1.0

    def test_inside_scores_negative(self):
        scores = np.maximum(np.zeros(1) - 1.0, 1.0 - np.full(1, 2.0))
        assert scores[0] == -1.0

    def test_uniform_margin_shrinks_by_margin(self):
        # all ys inside with margin m; alpha=0.1 on 10 points: rank 10 of 10
        m = 0.25
        lo = np.zeros(10)
        hi = np.full(10, 2.0)
        ys = np.full(10, m)  # min(y - lo, hi - y) = m
        assert cqr_calibrate(lo, hi, ys, 0.1) == -m

    def test_overflow(self):
        assert cqr_calibrate(np.zeros(3), np.ones(3), np.ones(3) * 0.5, 0.05) == math.inf

    @given(n=st.integers(1, 30), alpha=st.sampled_from([0.05, 0.1, 0.2]),
           seed=st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, n, alpha, seed):
        rng = np.random.default_rng(seed)
        lo = rng.normal(size=n)
        hi = lo + rng.random(n) * 2
        ys = rng.normal(size=n)
        scores = np.maximum(lo - ys, ys - hi)
        got = cqr_calibrate(lo, hi, ys, alpha)
        want = brute_force_rank_pick(list(scores), alpha)
        assert got == want


class TestSslNorm:
    def test_floor(self):
        assert ssl_norm_sigma(0.0) == conformal.SSL_NORM_FLOOR
        assert ssl_norm_sigma(1.0, 1e-6) == 1.000001

    def test_scale_invariance_of_coverage(self):
        rng = np.random.default_rng(0)
        resid_cal = np.abs(rng.normal(size=200))
        errs_cal = rng.random(200) + 0.5
        resid_test = np.abs(rng.normal(size=500))
        errs_test = rng.random(500) + 0.5
        covs = []
        for c in (1.0, 2.0):
            eps = icp_calibrate(resid_cal / ssl_norm_sigma(c * errs_cal), 0.1)
            half = eps * ssl_norm_sigma(c * errs_test)
            covs.append(float(np.mean(resid_test <= half)))
        assert covs[0] == covs[1]


class TestNormalizer:
    def test_constant_residuals_learned(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(400, 3))
        targets = np.full(400, 2.0)
        norm = train_normalizer(X, targets, use_ss=False, seed=1)
        preds = norm.predict(rng.normal(size=(100, 3)))
        assert np.all(preds >= norm.floor)
        assert np.all(np.abs(preds - 2.0) < 0.5)

    def test_floor_clamp_on_random_inputs(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 2))
        targets = np.abs(rng.normal(size=200)) * 1e-3
        norm = train_normalizer(X, targets, use_ss=False, seed=2)
        wild = rng.normal(size=(10_000, 2)) * 50
        assert np.all(norm.predict(wild) >= norm.floor)
        assert norm.floor >= 1e-6

    def test_negative_targets_rejected(self):
        with pytest.raises(ConfigurationError):
            train_normalizer(np.zeros((5, 2)), np.array([1.0, -1.0, 0, 0, 0]), False)

    def test_ss_column_equal_to_residual_beats_plain_fit(self):
        # paired run on the step-function generator: a difficulty feature that
        # IS the target must cut held-out MAE
        samples = data.synth_generate(900, seed=3)
        X, y, _ = data.synth_matrices(samples)
        resid = np.abs(y)
        tr, te = np.arange(600), np.arange(600, 900)
        plain = train_normalizer(X[tr], resid[tr], use_ss=False, seed=4)
        augmented = train_normalizer(np.hstack([X[tr], resid[tr, None]]), resid[tr],
                                     use_ss=True, seed=4)
        mae_plain = np.mean(np.abs(plain.predict(X[te]) - resid[te]))
        mae_aug = np.mean(np.abs(
            augmented.predict(np.hstack([X[te], resid[te, None]])) - resid[te]))
        assert mae_aug < mae_plain


def _toy_problem(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = X[:, 0] - 0.5 * X[:, 1] + 0.3 * rng.normal(size=n)
    sp = data.split(n, seed=seed + 1)
    return X, y, sp


class TestPipelines:
    def test_icp_width_constant(self):
        X, y, sp = _toy_problem()
        cc = fit_icp(X, y, sp, alpha=0.1, seed=2)
        widths = cc.width_values(X[sp.test])
        assert float(np.std(widths)) == 0.0
        lo, hi = cc.intervals(X[sp.test])
        assert np.allclose(hi - lo, widths)  # endpoint form agrees up to rounding

    def test_unit_sigma_matches_icp_everywhere(self):
        X, y, sp = _toy_problem(seed=3)
        icp = fit_icp(X, y, sp, alpha=0.1, seed=4)
        f_cal = nn.mlp_forward(icp.f, X[sp.cal])[:, 0]
        scores = crf_score(y[sp.cal], f_cal, np.ones(len(sp.cal)))
        eps = icp_calibrate(scores, 0.1)
        unit = CalibratedConformal(Kind.CRF, 0.1, eps, f=icp.f,
                                   normalizer=Normalizer.constant(1.0))
        lo_a, hi_a = icp.intervals(X[sp.test])
        lo_b, hi_b = unit.intervals(X[sp.test])
        assert np.array_equal(lo_a, lo_b) and np.array_equal(hi_a, hi_b)

    def test_use_ss_off_is_exactly_crf(self):
        X, y, sp = _toy_problem(seed=5)
        f = conformal.train_predictor(X[sp.labeled_train], y[sp.labeled_train], seed=6)
        a = sscp_fit(X, y, sp, None, alpha=0.1, f=f, use_ss=False, seed=7)
        b = fit_crf(X, y, sp, alpha=0.1, f=f, seed=7)
        assert a.kind == Kind.CRF and b.kind == Kind.CRF
        assert a.epsilon == b.epsilon
        lo_a, hi_a = a.intervals(X[sp.test])
        lo_b, hi_b = b.intervals(X[sp.test])
        assert np.array_equal(lo_a, lo_b) and np.array_equal(hi_a, hi_b)

    def test_overlapping_split_rejected(self):
        X, y, sp = _toy_problem(seed=8)
        bad = data.SplitAssignment(sp.train, sp.res, sp.cal,
                                   np.concatenate([sp.test, sp.train[:1]]))
        with pytest.raises(SplitIntegrityError):
            sscp_fit(X, y, bad, pretext.Vime(), seed=9)

    def test_sscp_augmentation_consistency(self):
        # the calibration-time error function is the test-time error function
        X, y, sp = _toy_problem(seed=10)
        cc = sscp_fit(X, y, sp, pretext.Vime(), alpha=0.1, seed=11)
        assert cc.kind == Kind.SSCP
        errs_a = cc.ss_model.errors(X[sp.cal])
        errs_b = cc.ss_model.errors(X[sp.cal])
        assert np.array_equal(errs_a, errs_b)
        lo, hi = cc.intervals(X[sp.test])
        assert np.all(lo <= hi)

    def test_ssl_norm_pipeline(self):
        X, y, sp = _toy_problem(seed=12)
        cc = fit_ssl_norm(X, y, sp, pretext.Autoencoder(), alpha=0.1, seed=13)
        assert cc.kind == Kind.SSL_NORM
        lo, hi = cc.intervals(X[sp.test])
        assert np.all(lo <= hi)
        assert np.isfinite(cc.epsilon)

    def test_normalizer_scale_equivariance(self):
        X, y, sp = _toy_problem(seed=14)
        cc = fit_crf(X, y, sp, alpha=0.1, seed=15)
        f_cal = nn.mlp_forward(cc.f, X[sp.cal])[:, 0]
        sig_cal = cc.sigma_values(X[sp.cal])
        sig_test = cc.sigma_values(X[sp.test])
        f_test = cc.predict_point(X[sp.test])
        base_lo, base_hi = None, None
        for c in (0.1, 1.0, 10.0):
            eps = icp_calibrate(crf_score(y[sp.cal], f_cal, c * sig_cal), 0.1)
            lo, hi = crf_interval(f_test, eps, c * sig_test)
            if base_lo is None:
                base_lo, base_hi = lo, hi
            else:
                assert np.allclose(lo, base_lo, atol=1e-9)
                assert np.allclose(hi, base_hi, atol=1e-9)


class TestCqrPipelines:
    def test_cqr_fit_and_heads_ordered(self):
        X, y, sp = _toy_problem(n=500, seed=16)
        cc = fit_cqr(X, y, sp, alpha=0.1, seed=17)
        assert cc.kind == Kind.CQR
        lo, hi = cc.quantile_heads(X[sp.test])
        assert np.all(lo <= hi)
        assert 0.0 <= cc.crossing_rate <= 1.0
        il, ih = cc.intervals(X[sp.test])
        assert np.all(il <= ih)

    def test_cqr_interval_shift(self):
        lo, hi = cqr_interval(np.array([0.0]), np.array([2.0]), 0.5)
        assert lo[0] == -0.5 and hi[0] == 2.5

    def test_zero_ss_matches_vanilla_cqr(self):
        X, y, sp = _toy_problem(n=500, seed=18)
        a = fit_cqr(X, y, sp, alpha=0.1, seed=19)
        b = cqr_sscp_fit(X, y, sp, pretext.Vime(), use_ss=False, alpha=0.1, seed=19)
        assert a.epsilon == b.epsilon
        lo_a, hi_a = a.intervals(X[sp.test])
        lo_b, hi_b = b.intervals(X[sp.test])
        assert np.array_equal(lo_a, lo_b) and np.array_equal(hi_a, hi_b)

    def test_cqr_sscp_shared_and_independent(self):
        X, y, sp = _toy_problem(n=500, seed=20)
        for mode in (conformal.EncoderMode.SHARED, conformal.EncoderMode.INDEPENDENT):
            cc = cqr_sscp_fit(X, y, sp, pretext.Vime(), encoder_mode=mode,
                              alpha=0.1, seed=21)
            assert cc.kind == Kind.CQR_SSCP
            lo, hi = cc.intervals(X[sp.test])
            assert np.all(lo <= hi)
            if mode == conformal.EncoderMode.SHARED:
                assert cc.ss_model.placeholder_slot
                assert cc.ss_model.head.input_size == X.shape[1] + 1
