"""Tests for the private sparse linear-regression pipeline."""

import math

import numpy as np
import pytest

from ldplearn import numerics, sparse_linreg
from ldplearn.privacy import ParameterError, stream


def _config(**kw):
    base = dict(epsilon=1.0, delta=0.1, n=500, d=40, seed=0)
    base.update(kw)
    return sparse_linreg.LinRegConfig(**base)


class TestConfig:
    def test_default_projection_dim(self):
        cfg = _config(n=500, d=400)
        assert cfg.m == math.ceil(math.sqrt(500 * 1.0 * math.log(400)))

    def test_projection_dim_capped(self):
        cfg = _config(n=10**6, d=40)
        assert cfg.m == 40

    def test_explicit_m_respected(self):
        assert _config(m=7).m == 7

    def test_half_budget(self):
        cfg = _config(epsilon=2.0, delta=0.2)
        assert cfg.half_budget.epsilon == pytest.approx(1.0)
        assert cfg.half_budget.delta == pytest.approx(0.1)

    def test_noise_std_uses_half_budget(self):
        cfg = _config(epsilon=1.0, delta=0.1, sensitivity=1.0)
        expected = math.sqrt(2.0 * math.log(1.25 / 0.05)) * 2.0
        assert cfg.noise_std == pytest.approx(expected)

    def test_test_mode_noiseless(self):
        assert _config(test_mode=True).noise_std == 0.0


class TestEncoding:
    def test_client_encode_test_mode(self):
        cfg = _config(test_mode=True)
        phi = cfg.projection()
        x = np.zeros(cfg.d)
        x[0] = 0.4
        z, v, audit = sparse_linreg.client_encode(x, 0.3, phi, cfg, stream(0, 1))
        assert np.allclose(z, phi.matrix @ x)
        assert v == 0.3
        audit.check()

    def test_client_encode_audit_totals(self):
        cfg = _config()
        phi = cfg.projection()
        _, _, audit = sparse_linreg.client_encode(
            np.zeros(cfg.d), 0.0, phi, cfg, stream(0, 1)
        )
        total = audit.total()
        assert abs(total.epsilon - cfg.epsilon) < 1e-12
        assert abs(total.delta - cfg.delta) < 1e-12

    def test_encode_all_matches_projection_in_test_mode(self):
        cfg = _config(test_mode=True)
        phi = cfg.projection()
        rng = stream(1, 2)
        X = rng.normal(size=(cfg.n, cfg.d)) * 0.1
        y = rng.uniform(-1, 1, size=cfg.n)
        Z, v, clip_count = sparse_linreg.encode_all(X, y, phi, cfg)
        assert np.allclose(Z, X @ phi.matrix.T)
        assert np.array_equal(v, y)
        assert clip_count == 0

    def test_encode_all_clips_labels(self):
        cfg = _config(test_mode=True)
        phi = cfg.projection()
        X = np.zeros((cfg.n, cfg.d))
        y = np.full(cfg.n, 3.0)
        _, v, _ = sparse_linreg.encode_all(X, y, phi, cfg)
        assert np.all(v == 1.0)


class TestObjective:
    def test_noiseless_objective_is_exact_second_moment(self):
        rng = stream(2, 3)
        Z = rng.normal(size=(50, 6))
        v = rng.normal(size=50)
        Q, c = sparse_linreg.build_objective(Z, v, 0.0)
        assert np.allclose(Q, Z.T @ Z)
        assert np.allclose(c, Z.T @ v)

    def test_debias_shifts_by_noise_variance(self):
        rng = stream(2, 4)
        Z = rng.normal(size=(200, 4))
        Qn, _ = sparse_linreg.build_objective(Z, np.zeros(200), 0.5)
        raw = Z.T @ Z - 200 * 0.25 * np.eye(4)
        assert np.allclose(Qn, numerics.psd_project(raw))

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            sparse_linreg.build_objective(np.zeros((0, 3)), np.zeros(0), 0.1)

    def test_debias_unbiasedness_monte_carlo(self):
        # the mean of Z^T Z - n sigma^2 I over independent noise draws
        # approaches the clean second moment
        rng = stream(5, 6)
        n, m, sigma = 400, 5, 0.8
        F = rng.normal(size=(n, m)) * 0.3
        target = F.T @ F
        reps = 300
        acc = np.zeros((m, m))
        for _ in range(reps):
            Z = F + rng.normal(0.0, sigma, size=F.shape)
            acc += Z.T @ Z - n * sigma**2 * np.eye(m)
        err = np.max(np.abs(acc / reps - target))
        # per-entry MC std is ~ sigma^2 sqrt(n) / sqrt(reps) up to constants
        assert err < 6 * sigma**2 * math.sqrt(n) / math.sqrt(reps)


class TestSolve:
    def test_matches_direct_solver_in_test_mode(self):
        # identity projection (m = d), no noise: the private path reduces to
        # plain L1-constrained least squares
        n, d = 300, 8
        rng = stream(7, 8)
        X = rng.normal(size=(n, d)) * 0.3
        w_true = np.zeros(d)
        w_true[[0, 3]] = [0.6, -0.4]
        y = X @ w_true + 0.01 * rng.normal(size=n)
        cfg = _config(n=n, d=d, m=d, test_mode=True, fw_iters=20000, fw_gap_tol=1e-10)

        class _Identity:
            matrix = np.eye(d)
            cols = d

        Q, c = sparse_linreg.build_objective(X, y, 0.0)
        w, gap = sparse_linreg.solve(Q, c, n, _Identity(), iters=20000, gap_tol=1e-10)
        w_direct = sparse_linreg.l1_constrained_lsq(X, y)
        obj_fw = sparse_linreg.empirical_risk(w, X, y)
        obj_direct = sparse_linreg.empirical_risk(w_direct, X, y)
        assert abs(obj_fw - obj_direct) < 1e-4

    def test_zero_data_returns_zero_objective(self):
        n, d = 50, 5
        X = np.zeros((n, d))
        y = np.zeros(n)

        class _Identity:
            matrix = np.eye(d)
            cols = d

        Q, c = sparse_linreg.build_objective(X, y, 0.0)
        w, _ = sparse_linreg.solve(Q, c, n, _Identity())
        assert sparse_linreg.empirical_risk(w, X, y) == pytest.approx(0.0)


class TestPipeline:
    def test_run_pipeline_diagnostics_and_audit(self):
        cfg = _config(n=200, d=20)
        rng = stream(9, 1)
        X = rng.normal(size=(200, 20)) * 0.2
        y = rng.uniform(-0.5, 0.5, size=200)
        w, diag = sparse_linreg.run_pipeline(X, y, cfg)
        assert np.abs(w).sum() <= 1.0 + 1e-12
        assert diag["m"] == cfg.m
        total = diag["budget_audit"]["total"]
        assert abs(total["epsilon"] - cfg.epsilon) < 1e-12
        assert abs(total["delta"] - cfg.delta) < 1e-12

    def test_run_pipeline_deterministic(self):
        rng = stream(9, 2)
        X = rng.normal(size=(200, 20)) * 0.2
        y = rng.uniform(-0.5, 0.5, size=200)
        w1, _ = sparse_linreg.run_pipeline(X, y, _config(n=200, d=20, seed=5))
        w2, _ = sparse_linreg.run_pipeline(X, y, _config(n=200, d=20, seed=5))
        assert np.array_equal(w1, w2)

    def test_shape_mismatch(self):
        cfg = _config(n=10, d=4)
        with pytest.raises(ParameterError):
            sparse_linreg.run_pipeline(np.zeros((11, 4)), np.zeros(11), cfg)

    def test_excess_risk_nonnegative_for_feasible_w(self):
        rng = stream(9, 3)
        X = rng.normal(size=(100, 6)) * 0.3
        y = rng.uniform(-1, 1, size=100)
        w = np.zeros(6)
        assert sparse_linreg.excess_risk(w, X, y) >= -1e-9
