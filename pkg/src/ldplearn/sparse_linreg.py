"""LDP sparse linear regression.

Users project features through a shared sub-Gaussian matrix, privatize the
projected features and the label at half budgets each, and the server
minimizes a debiased PSD-projected quadratic surrogate over the L1 ball.
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
    clip_l2,
    noise_sigma,
    privatize_scalar,
    privatize_vector,
    stream,
)

log = logging.getLogger(__name__)

_ENCODE_TAG = 301


@dataclass
class LinRegConfig:
    epsilon: float
    delta: float
    n: int
    d: int
    m: Optional[int] = None  # default ceil(sqrt(n eps^2 ln d)), capped at d
    seed: int = 0
    sensitivity: float = 1.0
    test_mode: bool = False
    fw_iters: int = 2000
    fw_gap_tol: float = 1e-6

    def __post_init__(self):
        self.budget = PrivacyBudget(self.epsilon, self.delta)
        if self.m is None:
            self.m = math.ceil(math.sqrt(self.n * self.epsilon**2 * math.log(self.d)))
        self.m = max(1, min(self.m, self.d))

    @property
    def half_budget(self) -> PrivacyBudget:
        return self.budget.split(0.5)

    @property
    def noise_std(self) -> float:
        """Per-entry noise scale of each half-budget mechanism invocation."""
        if self.test_mode:
            return 0.0
        return noise_sigma(self.half_budget, self.sensitivity)

    def projection(self) -> numerics.ProjectionOperator:
        return numerics.sample_projection("regression-phi", self.m, self.d, self.seed)


def client_encode(
    x: np.ndarray,
    y: float,
    phi: numerics.ProjectionOperator,
    config: LinRegConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, BudgetAudit]:
    """One user's private pair (z, v) at half budget each."""
    x = clip_l2(np.asarray(x, dtype=float))
    if x.shape != (phi.cols,):
        raise ParameterError(f"expected dim-{phi.cols} vector, got shape {x.shape}")
    half = config.half_budget
    z = privatize_vector(
        phi.matrix @ x, half, rng, sensitivity=config.sensitivity,
        test_mode=config.test_mode,
    )
    v = privatize_scalar(
        y, half, rng, sensitivity=config.sensitivity, test_mode=config.test_mode
    )
    audit = BudgetAudit(declared=config.budget)
    audit.charge("projected-feature", half)
    audit.charge("label", half)
    audit.check()
    return z, v, audit


def encode_all(
    X: np.ndarray, y: np.ndarray, phi: numerics.ProjectionOperator, config: LinRegConfig
) -> tuple[np.ndarray, np.ndarray, int]:
    """Vectorized encoding of all users.  Returns (Z, v, clip_count).

    clip_count is the number of projected features whose L2 norm exceeded 1
    and were rescaled (expected to be rare for unit-ball data).
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    X = X * np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)[:, None]
    P = X @ phi.matrix.T
    pnorms = np.linalg.norm(P, axis=1)
    clip_count = int(np.sum(pnorms > 1.0))
    P = P * np.where(pnorms > 1.0, 1.0 / np.maximum(pnorms, 1e-300), 1.0)[:, None]
    v = np.clip(np.asarray(y, dtype=float), -1.0, 1.0)
    sigma = config.noise_std
    if sigma > 0:
        rng = stream(config.seed, _ENCODE_TAG)
        P = P + rng.normal(0.0, sigma, size=P.shape)
        v = v + rng.normal(0.0, sigma, size=v.shape)
    return P, v, clip_count


def build_objective(Z: np.ndarray, v: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Debiased quadratic: Q = Proj_PSD(Z^T Z - n sigma^2 I), c = Z^T v."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ParameterError("Z must be a non-empty n x m matrix")
    n, m = Z.shape
    Q = numerics.psd_project(Z.T @ Z - n * sigma**2 * np.eye(m))
    c = Z.T @ np.asarray(v, dtype=float)
    return Q, c


def solve(
    Q: np.ndarray,
    c: np.ndarray,
    n: int,
    phi: numerics.ProjectionOperator,
    iters: int = 2000,
    gap_tol: float = 1e-6,
) -> tuple[np.ndarray, float]:
    """Minimize (1/2n)(Phi^T w)^T Q (Phi^T w) - (1/n) c^T Phi^T w over ||w||_1 <= 1.

    Frank-Wolfe in the ambient d-dimensional variable with the gradient
    pulled back through the projection.
    """
    M = phi.matrix  # (m, d)
    A_eff = (M.T @ Q @ M) / n
    b_eff = -(M.T @ c) / n
    w, gap = numerics.frank_wolfe_l1(A_eff, b_eff, radius=1.0, iters=iters, gap_tol=gap_tol)
    if gap > gap_tol:
        log.info("Frank-Wolfe hit the iteration cap with gap %.3g", gap)
    return w, gap


def empirical_risk(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """L(w; D) = (1/2n) sum (x_i^T w - y_i)^2."""
    r = X @ w - y
    return float(0.5 * np.mean(r * r))


def l1_constrained_lsq(
    X: np.ndarray, y: np.ndarray, radius: float = 1.0, iters: int = 3000, tol: float = 1e-12
) -> np.ndarray:
    """Non-private oracle: accelerated projected gradient on the raw data."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    L = np.linalg.norm(X, 2) ** 2 / n
    if L == 0:
        return np.zeros(d)
    w = np.zeros(d)
    z = w.copy()
    t = 1.0
    prev_obj = math.inf
    for _ in range(iters):
        g = X.T @ (X @ z - y) / n
        w_new = numerics.project_l1_ball(z - g / L, radius)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, t = w_new, t_new
        obj = empirical_risk(w, X, y)
        if prev_obj - obj < tol and prev_obj >= obj:
            break
        prev_obj = min(prev_obj, obj)
    return w


def excess_risk(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """L(w; D) - L(w*; D) with w* from the non-private oracle solver."""
    w_star = l1_constrained_lsq(X, y)
    return empirical_risk(w, X, y) - empirical_risk(w_star, X, y)


def run_pipeline(X: np.ndarray, y: np.ndarray, config: LinRegConfig) -> tuple[np.ndarray, dict]:
    """End-to-end private regression.  Returns (w_priv, diagnostics)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape != (config.n, config.d):
        raise ParameterError(f"expected data shape ({config.n}, {config.d})")
    phi = config.projection()
    Z, v, clip_count = encode_all(X, y, phi, config)
    Q, c = build_objective(Z, v, config.noise_std)
    w, gap = solve(Q, c, config.n, phi, iters=config.fw_iters, gap_tol=config.fw_gap_tol)
    audit = BudgetAudit(declared=config.budget)
    audit.charge("projected-feature", config.half_budget)
    audit.charge("label", config.half_budget)
    audit.check()
    diagnostics = {
        "m": config.m,
        "noise_std": config.noise_std,
        "fw_gap": gap,
        "clip_count": clip_count,
        "w_l1": float(np.abs(w).sum()),
        "budget_audit": audit.to_dict(),
    }
    return w, diagnostics
