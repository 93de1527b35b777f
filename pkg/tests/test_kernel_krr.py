"""Tests for private kernel ridge regression with random Fourier features."""

import math

import numpy as np
import pytest
from scipy import stats

from ldplearn import kernel_krr
from ldplearn.privacy import ParameterError


class TestKernelSpec:
    def test_gaussian_value(self):
        k = kernel_krr.KernelSpec(kind="gaussian", dim=2, lengthscale=1.0)
        assert k.value(np.zeros(2), np.zeros(2)) == pytest.approx(1.0)
        assert k.value(np.array([1.0, 0.0]), np.zeros(2)) == pytest.approx(
            math.exp(-0.5)
        )

    def test_laplacian_value(self):
        k = kernel_krr.KernelSpec(kind="laplacian", dim=2, lengthscale=2.0)
        assert k.value(np.array([1.0, 1.0]), np.zeros(2)) == pytest.approx(
            math.exp(-1.0)
        )

    def test_gram_matches_value(self):
        rng = np.random.default_rng(0)
        X1 = rng.normal(size=(5, 3))
        X2 = rng.normal(size=(4, 3))
        for kind in ("gaussian", "laplacian"):
            k = kernel_krr.KernelSpec(kind=kind, dim=3, lengthscale=1.3)
            G = k.gram(X1, X2)
            for i in range(5):
                for j in range(4):
                    assert G[i, j] == pytest.approx(k.value(X1[i], X2[j]))

    def test_invalid_params(self):
        with pytest.raises(ParameterError):
            kernel_krr.KernelSpec(kind="cubic", dim=2)
        with pytest.raises(ParameterError):
            kernel_krr.KernelSpec(kind="gaussian", dim=2, lengthscale=0.0)


class TestRFF:
    def test_deterministic_in_seed(self):
        k = kernel_krr.KernelSpec(kind="gaussian", dim=3)
        a = kernel_krr.sample_rff(k, 50, seed=4)
        b = kernel_krr.sample_rff(k, 50, seed=4)
        assert np.array_equal(a.S, b.S) and np.array_equal(a.b, b.b)

    def test_gaussian_frequency_scale(self):
        k = kernel_krr.KernelSpec(kind="gaussian", dim=4, lengthscale=2.0)
        rff = kernel_krr.sample_rff(k, 20000, seed=1)
        assert np.std(rff.S) == pytest.approx(0.5, rel=0.02)

    def test_phase_uniform(self):
        k = kernel_krr.KernelSpec(kind="gaussian", dim=1)
        rff = kernel_krr.sample_rff(k, 10000, seed=2)
        stat = stats.kstest(rff.b / (2 * math.pi), "uniform")
        assert stat.pvalue > 0.01

    def test_standard_scaling_estimates_kernel(self):
        k = kernel_krr.KernelSpec(kind="gaussian", dim=3, lengthscale=1.0)
        rff = kernel_krr.sample_rff(k, 40000, seed=3)
        rng = np.random.default_rng(5)
        for _ in range(5):
            x1, x2 = rng.normal(size=(2, 3)) * 0.5
            approx = float(rff.feature(x1) @ rff.feature(x2))
            assert approx == pytest.approx(k.value(x1, x2), abs=0.02)

    def test_half_scaling_estimates_half_kernel(self):
        k = kernel_krr.KernelSpec(kind="laplacian", dim=2, lengthscale=1.0)
        rff = kernel_krr.sample_rff(k, 60000, seed=6, scaling="half")
        rng = np.random.default_rng(7)
        x1, x2 = rng.normal(size=(2, 2)) * 0.3
        approx = float(rff.feature(x1) @ rff.feature(x2))
        assert approx == pytest.approx(0.5 * k.value(x1, x2), abs=0.02)

    def test_features_batch_matches_single(self):
        k = kernel_krr.KernelSpec(kind="gaussian", dim=3)
        rff = kernel_krr.sample_rff(k, 16, seed=8)
        X = np.random.default_rng(9).normal(size=(6, 3))
        F = rff.features(X)
        for i in range(6):
            assert np.allclose(F[i], rff.feature(X[i]))

    def test_invalid_scaling(self):
        k = kernel_krr.KernelSpec(kind="gaussian", dim=2)
        with pytest.raises(ParameterError):
            kernel_krr.sample_rff(k, 10, seed=0, scaling="third")


class TestKRRConfig:
    def test_default_feature_count(self):
        cfg = kernel_krr.KRRConfig(epsilon=1.0, delta=0.1, n=400)
        assert cfg.resolve_dp(9) == math.ceil(math.sqrt(9 * 400))

    def test_explicit_dp(self):
        cfg = kernel_krr.KRRConfig(epsilon=1.0, delta=0.1, n=400, d_p=128)
        assert cfg.resolve_dp(9) == 128

    def test_noise_uses_half_budget(self):
        cfg = kernel_krr.KRRConfig(epsilon=2.0, delta=0.2, n=10, sensitivity=1.0)
        expected = math.sqrt(2.0 * math.log(1.25 / 0.1))
        assert cfg.noise_std == pytest.approx(expected)

    def test_invalid_regularization(self):
        with pytest.raises(ParameterError):
            kernel_krr.KRRConfig(epsilon=1.0, delta=0.1, n=10, C=0.0)


class TestPipeline:
    def _data(self, n, d, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, d))
        X /= np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1.0)
        y = np.clip(np.sin(X[:, 0] * 3.0) + 0.05 * rng.normal(size=n), -1, 1)
        return X, y

    def test_test_mode_matches_normal_equations(self):
        X, y = self._data(50, 3, 0)
        k = kernel_krr.KernelSpec(kind="gaussian", dim=3)
        cfg = kernel_krr.KRRConfig(
            epsilon=1.0, delta=0.1, n=50, C=10.0, d_p=40, seed=1, test_mode=True
        )
        w, rff, diag = kernel_krr.krr_pipeline(X, y, k, cfg)
        F = rff.features(X)
        # the pipeline rescales features whose norm exceeds 1 (standard
        # scaling hovers near norm 1), so equivalence is on clipped features
        norms = np.linalg.norm(F, axis=1, keepdims=True)
        F_clipped = F / np.maximum(norms, 1.0)
        assert diag["clip_count"] == int(np.sum(norms > 1.0))
        w_exact = kernel_krr.rff_ridge_exact(F_clipped, y, 10.0)
        assert np.max(np.abs(w - w_exact)) < 1e-8

    def test_budget_audit(self):
        X, y = self._data(30, 2, 1)
        k = kernel_krr.KernelSpec(kind="gaussian", dim=2)
        cfg = kernel_krr.KRRConfig(epsilon=1.5, delta=0.3, n=30, d_p=16, seed=2)
        _, _, diag = kernel_krr.krr_pipeline(X, y, k, cfg)
        total = diag["budget_audit"]["total"]
        assert abs(total["epsilon"] - 1.5) < 1e-12
        assert abs(total["delta"] - 0.3) < 1e-12

    def test_deterministic(self):
        X, y = self._data(30, 2, 2)
        k = kernel_krr.KernelSpec(kind="gaussian", dim=2)
        cfg = lambda: kernel_krr.KRRConfig(epsilon=1.0, delta=0.1, n=30, d_p=16, seed=3)
        w1, _, _ = kernel_krr.krr_pipeline(X, y, k, cfg())
        w2, _, _ = kernel_krr.krr_pipeline(X, y, k, cfg())
        assert np.array_equal(w1, w2)

    def test_row_count_mismatch(self):
        X, y = self._data(30, 2, 3)
        k = kernel_krr.KernelSpec(kind="gaussian", dim=2)
        cfg = kernel_krr.KRRConfig(epsilon=1.0, delta=0.1, n=31, d_p=16)
        with pytest.raises(ParameterError):
            kernel_krr.krr_pipeline(X, y, k, cfg)

    def test_exact_oracle_interpolates_at_high_regularization(self):
        # with tiny ridge, exact KRR predictions approach training labels
        X, y = self._data(40, 2, 4)
        k = kernel_krr.KernelSpec(kind="gaussian", dim=2, lengthscale=0.5)
        preds = kernel_krr.exact_krr_predict(X, y, X, k, C=1e6)
        assert np.max(np.abs(preds - y)) < 0.05

    def test_rff_ridge_approaches_exact_krr(self):
        # the feature-space solution converges to the Gram-space solution
        # as the feature count grows (noiseless, standard scaling)
        X, y = self._data(60, 2, 5)
        X_test, _ = self._data(20, 2, 6)
        k = kernel_krr.KernelSpec(kind="gaussian", dim=2)
        oracle = kernel_krr.exact_krr_predict(X, y, X_test, k, C=50.0)
        gaps = []
        for d_p in (64, 4096):
            cfg = kernel_krr.KRRConfig(
                epsilon=1.0, delta=0.1, n=60, C=50.0, d_p=d_p, seed=7, test_mode=True
            )
            w, rff, _ = kernel_krr.krr_pipeline(X, y, k, cfg)
            preds = rff.features(X_test) @ w
            gaps.append(float(np.max(np.abs(preds - oracle))))
        assert gaps[1] < gaps[0]
        assert gaps[1] < 0.05
