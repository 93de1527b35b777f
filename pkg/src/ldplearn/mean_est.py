"""LDP sparse mean estimation: projected noisy reports, median-of-means
aggregation in L1, and L1-gauge recovery.

Each user sends y_i = G x_i + r_i with r_i ~ N(0, (sensitivity^2 *
2 ln(1.25/delta)/eps^2) I_p) for a shared seeded projection G with i.i.d.
N(0, 1/p) entries.  The server groups reports by index, takes group means,
selects the median-of-means center in L1, and recovers the mean by the
minimum-L1 program with residual bound c0 * p * ln(n d / delta)/eps *
sqrt(m/n).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ldplearn import numerics
from ldplearn.privacy import (
    BudgetAudit,
    ParameterError,
    PrivacyBudget,
    clip_l2,
    noise_sigma,
    stream,
)

log = logging.getLogger(__name__)

_REPORT_TAG = 201


@dataclass
class MeanEstConfig:
    """Configuration for the mean-estimation pipeline.

    ``lam`` is the L1 bound on the population mean; the projection dimension
    p = min(ceil(lam * eps * sqrt(n)), d) and group count
    m = min(ceil(18 ln(1/delta)), n) are derived.  ``sensitivity`` defaults
    to 1 (the collection procedure's verbatim noise scale); set 2 for the
    worst-case-sensitivity convention.
    """

    lam: float
    epsilon: float
    delta: float
    n: int
    d: int
    c0: float = 100.0
    seed: int = 0
    sensitivity: float = 1.0
    test_mode: bool = False

    def __post_init__(self):
        self.budget = PrivacyBudget(self.epsilon, self.delta)
        if self.lam <= 0:
            raise ParameterError("lam must be positive")
        if self.n < 1 or self.d < 1:
            raise ParameterError("n and d must be >= 1")

    @property
    def p(self) -> int:
        p_raw = math.ceil(self.lam * self.epsilon * math.sqrt(self.n))
        if p_raw > self.d:
            log.warning("projection dim %d capped at d = %d", p_raw, self.d)
        return max(1, min(p_raw, self.d))

    @property
    def m(self) -> int:
        m_raw = math.ceil(18.0 * math.log(1.0 / self.delta))
        if m_raw > self.n:
            log.warning("group count %d capped at n = %d", m_raw, self.n)
        return max(1, min(m_raw, self.n))

    @property
    def noise_std(self) -> float:
        if self.test_mode:
            return 0.0
        return noise_sigma(self.budget, self.sensitivity)

    @property
    def sigma_bar(self) -> float:
        """Residual bound of the recovery program (zero in test mode)."""
        if self.test_mode:
            return 0.0
        return (
            self.c0
            * self.p
            * math.log(self.n * self.d / self.delta)
            / self.epsilon
            * math.sqrt(self.m / self.n)
        )

    def projection(self) -> numerics.ProjectionOperator:
        return numerics.sample_projection("mean-g", self.p, self.d, self.seed)


def client_report(
    x: np.ndarray,
    G: numerics.ProjectionOperator,
    config: MeanEstConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One user's noisy projected report y = G x + r."""
    x = np.asarray(x, dtype=float)
    if x.shape != (G.cols,):
        raise ParameterError(f"expected dim-{G.cols} vector, got shape {x.shape}")
    x = clip_l2(x)
    y = G.matrix @ x
    if config.noise_std > 0:
        y = y + rng.normal(0.0, config.noise_std, size=y.shape)
    return y


def collect_reports(
    data: np.ndarray, G: numerics.ProjectionOperator, config: MeanEstConfig
) -> np.ndarray:
    """Vectorized collection of all n reports (one derived noise stream).

    Equivalent in distribution to per-user :func:`client_report` calls with
    distinct streams; deterministic in the experiment seed.
    """
    X = np.asarray(data, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    X = X * scale[:, None]
    Y = X @ G.matrix.T
    if config.noise_std > 0:
        rng = stream(config.seed, _REPORT_TAG)
        Y = Y + rng.normal(0.0, config.noise_std, size=Y.shape)
    return Y


def group_means(reports: np.ndarray, m: int) -> np.ndarray:
    """Contiguous index groups of size floor(n/m); the remainder is dropped."""
    reports = np.asarray(reports, dtype=float)
    n = reports.shape[0]
    if m < 1 or m > n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={n}")
    size = n // m
    used = reports[: m * size].reshape(m, size, -1)
    return used.mean(axis=1)


def median_of_means(means: np.ndarray) -> tuple[np.ndarray, float]:
    """Select the center whose ceil(m/2)-th smallest L1 distance is minimal.

    Distances include the zero distance to the point itself; ties break to
    the lowest index.  Returns (selected mean, its covering radius).
    """
    M = np.asarray(means, dtype=float)
    m = M.shape[0]
    if m == 1:
        return M[0].copy(), 0.0
    dists = np.abs(M[:, None, :] - M[None, :, :]).sum(axis=2)
    dists.sort(axis=1)
    k = math.ceil(m / 2)
    radii = dists[:, k - 1]
    j_star = int(np.argmin(radii))
    return M[j_star].copy(), float(radii[j_star])


def estimate_mean(data: np.ndarray, config: MeanEstConfig) -> tuple[np.ndarray, dict]:
    """Full pipeline: collect, group, select, recover.  Returns (z, diagnostics)."""
    X = np.asarray(data, dtype=float)
    if X.shape != (config.n, config.d):
        raise ParameterError(f"expected data shape ({config.n}, {config.d})")
    G = config.projection()
    reports = collect_reports(X, G, config)
    means = group_means(reports, config.m)
    u, r_star = median_of_means(means)
    sigma_bar = config.sigma_bar
    try:
        z = numerics.l1_recovery(G.matrix, u, sigma_bar)
    except numerics.RecoveryInfeasibleError as exc:
        log.warning(
            "recovery bound %.4g infeasible; re-solving at minimal residual %.4g",
            sigma_bar,
            exc.min_residual,
        )
        sigma_bar = exc.min_residual * (1 + 1e-9) + 1e-12
        z = numerics.l1_recovery(G.matrix, u, sigma_bar)
    audit = BudgetAudit(declared=config.budget)
    audit.charge("projected-gaussian-report", config.budget, copies=1)
    audit.check()
    diagnostics = {
        "p": config.p,
        "m": config.m,
        "noise_std": config.noise_std,
        "sigma_bar": sigma_bar,
        "r_star": r_star,
        "recovery_residual": float(np.abs(G.matrix @ z - u).sum()),
        "estimate_l1": float(np.abs(z).sum()),
        "budget_audit": audit.to_dict(),
    }
    return z, diagnostics
