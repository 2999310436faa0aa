"""Quasi-objective and weighting tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quasibayes.basis import BasisDesign, build_thin_plate
from quasibayes.objective import (EvaluationError, FirstStage,
                                  estimate_optimal_weights, mhat,
                                  quasi_loglik)
from quasibayes.residuals import NPIVModel, NPQIVModel


def rng(seed=0):
    return np.random.default_rng(seed)


class TestMhat:
    def test_orthogonal_residuals(self):
        B = np.column_stack([np.ones(4), np.array([1.0, 2.0, 3.0, 4.0])])
        fs = FirstStage(design=BasisDesign.from_matrix(B))
        t = np.array([1.0, -1.0, -1.0, 1.0])  # orthogonal to both columns
        np.testing.assert_allclose(mhat(fs, t), np.zeros(4), atol=1e-10)

    def test_in_span(self):
        B = rng(1).standard_normal((10, 3))
        fs = FirstStage(design=BasisDesign.from_matrix(B))
        t = B @ np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(mhat(fs, t), t, atol=1e-10)

    def test_mean_projection(self):
        fs = FirstStage(design=BasisDesign.from_matrix(np.ones((2, 1))))
        np.testing.assert_allclose(mhat(fs, np.array([1.0, 3.0])),
                                   [2.0, 2.0], atol=1e-12)


class TestQuasiLoglik:
    def test_zero_residual(self):
        y = rng(2).standard_normal(20)
        fs = FirstStage(design=BasisDesign.from_matrix(np.ones((20, 1))))
        obj = quasi_loglik(fs, NPIVModel(y=y), y)
        assert obj.value == pytest.approx(0.0, abs=1e-20)
        assert obj.loglik == pytest.approx(0.0, abs=1e-18)

    def test_hand_computation(self):
        # n=2, B=ones, rho=(1,3): mhat=(2,2), value = mean(4,4) = 4
        fs = FirstStage(design=BasisDesign.from_matrix(np.ones((2, 1))))
        y = np.array([1.0, 3.0])
        obj = quasi_loglik(fs, NPIVModel(y=y), np.zeros(2))
        assert obj.value == pytest.approx(4.0, abs=1e-12)
        assert obj.loglik == pytest.approx(-4.0, abs=1e-12)

    def test_nonfinite_rejected(self):
        fs = FirstStage(design=BasisDesign.from_matrix(np.ones((3, 1))))
        with pytest.raises(EvaluationError):
            quasi_loglik(fs, NPIVModel(y=np.zeros(3)),
                         np.array([0.0, np.inf, 0.0]))

    def test_loglik_nonpositive(self):
        r = rng(3)
        for seed in range(5):
            rr = rng(seed)
            pts = rr.uniform(size=25)
            fs = FirstStage(design=build_thin_plate(pts, 5, rr))
            y = rr.standard_normal(25)
            obj = quasi_loglik(fs, NPIVModel(y=y), rr.standard_normal(25))
            assert obj.loglik <= 0.0

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_dual_route_oracle(self, seed):
        # identity weighting via Q matches the explicit normal equations
        r = np.random.default_rng(seed)
        n = int(r.integers(10, 51))
        K = int(r.integers(2, 9))
        B = r.standard_normal((n, K))
        fs = FirstStage(design=BasisDesign.from_matrix(B))
        y = r.standard_normal(n)
        hvals = r.standard_normal(n)
        obj = quasi_loglik(fs, NPIVModel(y=y), hvals)
        rho = y - hvals
        fitted = B @ np.linalg.solve(B.T @ B, B.T @ rho)
        explicit = float(np.mean(fitted ** 2))
        assert abs(obj.value - explicit) < 1e-10

    def test_basis_recombination_invariance(self):
        r = rng(4)
        n, K = 40, 5
        B = r.standard_normal((n, K))
        T = r.standard_normal((K, K)) + 3 * np.eye(K)  # invertible recomb
        y, hvals = r.standard_normal(n), r.standard_normal(n)
        v1 = quasi_loglik(FirstStage(design=BasisDesign.from_matrix(B)),
                          NPIVModel(y=y), hvals).value
        v2 = quasi_loglik(FirstStage(design=BasisDesign.from_matrix(B @ T)),
                          NPIVModel(y=y), hvals).value
        assert abs(v1 - v2) < 1e-8

    def test_weighted_bounds(self):
        # lo * identity value <= weighted value <= hi * identity value
        r = rng(5)
        n = 60
        pts = r.uniform(size=n)
        design = build_thin_plate(pts, 5, r)
        y, hvals = r.standard_normal(n), r.standard_normal(n)
        lo, hi = 0.2, 5.0
        weights = r.uniform(lo, hi, size=n)
        fs_id = FirstStage(design=design)
        fs_w = FirstStage(design=design, weighting="estimated",
                          weights=weights, clamp_lo=lo, clamp_hi=hi)
        v_id = quasi_loglik(fs_id, NPIVModel(y=y), hvals).value
        v_w = quasi_loglik(fs_w, NPIVModel(y=y), hvals).value
        assert lo * v_id - 1e-12 <= v_w <= hi * v_id + 1e-12

    def test_continuous_update_reweights(self):
        r = rng(6)
        n = 80
        pts = r.uniform(size=n)
        design = build_thin_plate(pts, 4, r)
        y = r.standard_normal(n)
        fs = FirstStage(design=design, weighting="continuous_update")
        obj = quasi_loglik(fs, NPIVModel(y=y), np.zeros(n))
        assert np.isfinite(obj.value) and obj.value >= 0.0


class TestOptimalWeights:
    def test_homoscedastic_recovers_inverse_variance(self):
        r = rng(7)
        n, v = 5000, 4.0
        pts = r.uniform(size=n)
        design = build_thin_plate(pts, 5, r)
        fs = FirstStage(design=design)
        resid = np.sqrt(v) * r.standard_normal(n)
        weights, _ = estimate_optimal_weights(fs, resid)
        assert np.median(weights) == pytest.approx(1.0 / v, rel=0.15)

    def test_npqiv_bernoulli_variance(self):
        # NPQIV residual variance is tau(1-tau): weights ~ 1/(tau(1-tau))
        r = rng(8)
        n, tau = 5000, 0.25
        pts = r.uniform(size=n)
        design = build_thin_plate(pts, 5, r)
        fs = FirstStage(design=design)
        y = r.standard_normal(n)
        hvals = np.quantile(y, tau) * np.ones(n)
        resid = NPQIVModel(y=y, tau=tau).evaluate(hvals)
        weights, _ = estimate_optimal_weights(fs, resid)
        target = 1.0 / (tau * (1 - tau))
        assert np.median(weights) == pytest.approx(target, rel=0.15)

    def test_clamp_collapse_recovers_identity(self):
        r = rng(9)
        n = 50
        pts = r.uniform(size=n)
        design = build_thin_plate(pts, 4, r)
        fs = FirstStage(design=design)
        weights, _ = estimate_optimal_weights(fs, r.standard_normal(n),
                                              lo=1.0, hi=1.0)
        np.testing.assert_array_equal(weights, np.ones(n))

    def test_negative_fitted_clamped_and_counted(self):
        # centered basis can fit negative "variances"; they get clamped
        B = np.column_stack([np.ones(4), np.array([-1.0, 1.0, -1.0, 1.0])])
        fs = FirstStage(design=BasisDesign.from_matrix(B))
        resid = np.array([2.0, 0.0, 2.0, 0.0])  # squared: 4,0,4,0
        # fitted squared-resid at +1 coordinates can dip to 0
        weights, n_clamped = estimate_optimal_weights(fs, resid,
                                                      lo=0.05, hi=20.0)
        assert np.all((weights >= 0.05) & (weights <= 20.0))
        assert n_clamped >= 1

    def test_invalid_clamps(self):
        fs = FirstStage(design=BasisDesign.from_matrix(np.ones((3, 1))))
        with pytest.raises(ValueError):
            estimate_optimal_weights(fs, np.zeros(3), lo=0.0, hi=1.0)
        with pytest.raises(ValueError):
            FirstStage(design=BasisDesign.from_matrix(np.ones((3, 1))),
                       weighting="estimated", weights=None)
