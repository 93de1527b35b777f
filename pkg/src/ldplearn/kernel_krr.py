"""LDP kernel ridge regression via random Fourier features.

Shift-invariant kernels are approximated by randomized cosine features;
each user privatizes the feature vector and label at half budgets, and the
server solves the debiased, ridge-regularized quadratic in closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ldplearn import numerics
from ldplearn.privacy import (
    BudgetAudit,
    ParameterError,
    PrivacyBudget,
    noise_sigma,
    stream,
)

log = logging.getLogger(__name__)

_RFF_TAG = 401
_ENCODE_TAG = 402


@dataclass(frozen=True)
class KernelSpec:
    """Shift-invariant kernel: 'gaussian' (lengthscale) or 'laplacian' (scale)."""

    kind: str
    dim: int
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplacian"):
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        if self.lengthscale <= 0:
            raise ParameterError("lengthscale must be positive")

    def value(self, x1: np.ndarray, x2: np.ndarray) -> float:
        """Closed-form kernel value k(x1 - x2)."""
        delta = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
        if self.kind == "gaussian":
            return float(np.exp(-0.5 * np.dot(delta, delta) / self.lengthscale**2))
        return float(np.exp(-np.abs(delta).sum() / self.lengthscale))

    def gram(self, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
        X1 = np.asarray(X1, dtype=float)
        X2 = np.asarray(X2, dtype=float)
        if self.kind == "gaussian":
            sq = (
                np.sum(X1 * X1, axis=1)[:, None]
                + np.sum(X2 * X2, axis=1)[None, :]
                - 2.0 * X1 @ X2.T
            )
            return np.exp(-0.5 * np.maximum(sq, 0.0) / self.lengthscale**2)
        d1 = np.abs(X1[:, None, :] - X2[None, :, :]).sum(axis=2)
        return np.exp(-d1 / self.lengthscale)


@dataclass(frozen=True)
class RFFMap:
    """Random Fourier feature map: x -> scale * cos(S x + b).

    ``scaling`` 'standard' uses sqrt(2/d_p) (unbiased for the kernel);
    'half' uses sqrt(1/d_p), whose inner products estimate k/2.
    """

    S: np.ndarray  # (d_p, d) frequency samples
    b: np.ndarray  # (d_p,) phases in [0, 2pi]
    scaling: str = "standard"

    @property
    def d_p(self) -> int:
        return self.S.shape[0]

    @property
    def scale(self) -> float:
        if self.scaling == "standard":
            return math.sqrt(2.0 / self.d_p)
        return math.sqrt(1.0 / self.d_p)

    def feature(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.cos(self.S @ np.asarray(x, dtype=float) + self.b)

    def features(self, X: np.ndarray) -> np.ndarray:
        return self.scale * np.cos(np.asarray(X, dtype=float) @ self.S.T + self.b)


def sample_rff(kernel: KernelSpec, d_p: int, seed: int, scaling: str = "standard") -> RFFMap:
    """Draw the frequency/phase samples matching the kernel's Fourier transform."""
    if d_p < 1:
        raise ParameterError("d_p must be >= 1")
    if scaling not in ("standard", "half"):
        raise ParameterError(f"unknown scaling {scaling!r}")
    rng = stream(seed, _RFF_TAG)
    if kernel.kind == "gaussian":
        S = rng.normal(0.0, 1.0 / kernel.lengthscale, size=(d_p, kernel.dim))
    else:
        S = rng.standard_cauchy(size=(d_p, kernel.dim)) / kernel.lengthscale
    b = rng.uniform(0.0, 2.0 * math.pi, size=d_p)
    return RFFMap(S=S, b=b, scaling=scaling)


@dataclass
class KRRConfig:
    epsilon: float
    delta: float
    n: int
    C: float = 1.0
    d_p: Optional[int] = None  # default ceil(sqrt(d * n * eps^2))
    seed: int = 0
    sensitivity: float = 1.0
    scaling: str = "standard"
    test_mode: bool = False

    def __post_init__(self):
        self.budget = PrivacyBudget(self.epsilon, self.delta)
        if self.C <= 0:
            raise ParameterError("regularization constant C must be positive")

    def resolve_dp(self, d: int) -> int:
        if self.d_p is not None:
            return self.d_p
        return max(1, math.ceil(math.sqrt(d * self.n * self.epsilon**2)))

    @property
    def half_budget(self) -> PrivacyBudget:
        return self.budget.split(0.5)

    @property
    def noise_std(self) -> float:
        if self.test_mode:
            return 0.0
        return noise_sigma(self.half_budget, self.sensitivity)


def encode_features(
    F: np.ndarray, y: np.ndarray, config: KRRConfig
) -> tuple[np.ndarray, np.ndarray, int]:
    """Privatize feature vectors and labels at half budgets (vectorized).

    Features with L2 norm above 1 are rescaled first (the standard scaling
    can exceed the unit ball slightly); the clip count is returned.
    """
    F = np.asarray(F, dtype=float)
    norms = np.linalg.norm(F, axis=1)
    clip_count = int(np.sum(norms > 1.0))
    F = F * np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)[:, None]
    v = np.clip(np.asarray(y, dtype=float), -1.0, 1.0)
    sigma = config.noise_std
    if sigma > 0:
        rng = stream(config.seed, _ENCODE_TAG)
        F = F + rng.normal(0.0, sigma, size=F.shape)
        v = v + rng.normal(0.0, sigma, size=v.shape)
    return F, v, clip_count


def krr_pipeline(
    X: np.ndarray, y: np.ndarray, kernel: KernelSpec, config: KRRConfig
) -> tuple[np.ndarray, RFFMap, dict]:
    """End-to-end private RFF ridge regression.

    Builds Q = Proj_PSD(Z^T Z - n sigma^2 I) and solves the strongly convex
    objective (C/2n) w^T Q w - (C/n) v^T Z w + 0.5 ||w||^2 in closed form:
    w = ((C/n) Q + I)^{-1} (C/n) Z^T v.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n != config.n:
        raise ParameterError(f"config.n = {config.n} but data has {n} rows")
    d_p = config.resolve_dp(X.shape[1])
    rff = sample_rff(kernel, d_p, config.seed, scaling=config.scaling)
    F = rff.features(X)
    Z, v, clip_count = encode_features(F, y, config)
    Q = numerics.psd_project(Z.T @ Z - n * config.noise_std**2 * np.eye(d_p))
    rhs = (config.C / n) * (Z.T @ v)
    A = (config.C / n) * Q + np.eye(d_p)
    try:
        w = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise numerics.NumericalError("ridge linear solve failed") from exc
    residual = float(np.linalg.norm(A @ w - rhs))
    audit = BudgetAudit(declared=config.budget)
    audit.charge("rff-feature", config.half_budget)
    audit.charge("label", config.half_budget)
    audit.check()
    diagnostics = {
        "d_p": d_p,
        "noise_std": config.noise_std,
        "clip_count": clip_count,
        "solve_residual": residual,
        "budget_audit": audit.to_dict(),
    }
    return w, rff, diagnostics


def exact_krr_predict(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    kernel: KernelSpec,
    C: float,
) -> np.ndarray:
    """Non-private exact-Gram oracle: predictions of the minimizer of
    (C/2n) sum (f(x_i) - y_i)^2 + 0.5 ||f||_H^2."""
    n = X_train.shape[0]
    K = kernel.gram(X_train, X_train)
    alpha = np.linalg.solve(K + (n / C) * np.eye(n), np.asarray(y_train, dtype=float))
    return kernel.gram(X_test, X_train) @ alpha


def rff_ridge_exact(F: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    """Non-private RFF ridge via normal equations on the given features."""
    n, d_p = F.shape
    A = (C / n) * (F.T @ F) + np.eye(d_p)
    return np.linalg.solve(A, (C / n) * (F.T @ y))
