"""Shared numerical kernels.

Random projection operators, PSD projection, the L1-constrained linear
inverse recovery program, Frank-Wolfe over the L1 ball, projected SGD with
an inexact gradient oracle, and simplex/ball projections.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from ldplearn.privacy import ParameterError, stream

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Linear algebra failure (eigensolver, linear solve, LP)."""


class RecoveryInfeasibleError(NumericalError):
    """The recovery program's residual bound is below the attainable minimum."""

    def __init__(self, sigma_bar: float, min_residual: float):
        self.sigma_bar = sigma_bar
        self.min_residual = min_residual
        super().__init__(
            f"recovery infeasible: residual bound {sigma_bar:.6g} below "
            f"minimal achievable L1 residual {min_residual:.6g}"
        )


# ---------------------------------------------------------------------------
# Random projections
# ---------------------------------------------------------------------------

_PROJ_TAG = {"mean-g": 101, "regression-phi": 102}


@dataclass(frozen=True)
class ProjectionOperator:
    """Seeded random projection matrix, shape (rows, cols) = (target, ambient).

    kind "mean-g": entries i.i.d. N(0, 1/rows); kind "regression-phi":
    entries i.i.d. N(0, 1/rows).  Regenerable bit-identically from the seed.
    """

    kind: str
    rows: int
    cols: int
    seed: int

    def __post_init__(self):
        if self.kind not in _PROJ_TAG:
            raise ParameterError(f"unknown projection kind {self.kind!r}")
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("projection dims must be >= 1")

    @cached_property
    def matrix(self) -> np.ndarray:
        rng = stream(self.seed, _PROJ_TAG[self.kind])
        scale = 1.0 / math.sqrt(self.rows)
        return rng.normal(0.0, scale, size=(self.rows, self.cols))

    def project(self, x: np.ndarray) -> np.ndarray:
        """Map ambient vectors (last axis cols) to the target space."""
        return np.asarray(x) @ self.matrix.T

    def pull_back(self, v: np.ndarray) -> np.ndarray:
        """Adjoint map, target space back to ambient."""
        return np.asarray(v) @ self.matrix


def sample_projection(kind: str, rows: int, cols: int, seed: int) -> ProjectionOperator:
    return ProjectionOperator(kind=kind, rows=rows, cols=cols, seed=seed)


# ---------------------------------------------------------------------------
# PSD projection
# ---------------------------------------------------------------------------

def psd_project(M: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: zero out negative eigenvalues."""
    M = np.asarray(M, dtype=float)
    sym_gap = np.max(np.abs(M - M.T)) if M.size else 0.0
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if sym_gap > 1e-10 * scale:
        raise ParameterError(f"psd_project: matrix not symmetric (gap {sym_gap:.3g})")
    M = 0.5 * (M + M.T)
    try:
        vals, vecs = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigendecomposition failed (order {M.shape[0]}, "
            f"fro norm {np.linalg.norm(M):.3g})"
        ) from exc
    vals = np.maximum(vals, 0.0)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# L1-constrained recovery (basis pursuit with an L1 residual bound)
# ---------------------------------------------------------------------------

def min_l1_residual(G: np.ndarray, u: np.ndarray) -> float:
    """Minimal achievable ||G z - u||_1 over all z (an LP)."""
    p, d = G.shape
    # variables: z (free, d), t (p); minimize 1^T t s.t. -t <= Gz - u <= t
    c = np.concatenate([np.zeros(d), np.ones(p)])
    A_ub = np.block([[G, -np.eye(p)], [-G, -np.eye(p)]])
    b_ub = np.concatenate([u, -u])
    bounds = [(None, None)] * d + [(0, None)] * p
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise NumericalError(f"min-residual LP failed: {res.message}")
    return float(res.fun)


def l1_recovery(
    G: np.ndarray,
    u: np.ndarray,
    sigma_bar: float,
    tol: float = 1e-9,
) -> np.ndarray:
    """Solve min ||z||_1 subject to ||G z - u||_1 <= sigma_bar.

    For the L1-ball gauge of any radius, minimizing ||z||_1 is equivalent to
    minimizing the gauge, so the radius never enters the program.  Raises
    :class:`RecoveryInfeasibleError` when sigma_bar is below the attainable
    minimum residual.
    """
    G = np.asarray(G, dtype=float)
    u = np.asarray(u, dtype=float)
    if sigma_bar < 0:
        raise ParameterError("sigma_bar must be >= 0")
    p, d = G.shape
    # variables: z+ (d), z- (d), t (p)
    c = np.concatenate([np.ones(2 * d), np.zeros(p)])
    A_res = np.block(
        [
            [G, -G, -np.eye(p)],
            [-G, G, -np.eye(p)],
        ]
    )
    b_res = np.concatenate([u, -u])
    A_sum = np.concatenate([np.zeros(2 * d), np.ones(p)])[None, :]
    A_ub = np.vstack([A_res, A_sum])
    b_ub = np.concatenate([b_res, [sigma_bar]])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    if res.status == 2:  # infeasible
        raise RecoveryInfeasibleError(sigma_bar, min_l1_residual(G, u))
    if not res.success:
        raise NumericalError(f"recovery LP failed: {res.message}")
    z = res.x[:d] - res.x[d : 2 * d]
    residual = float(np.abs(G @ z - u).sum())
    if residual > sigma_bar + max(tol, 1e-7 * (1.0 + sigma_bar)):
        raise NumericalError(
            f"recovery postcondition violated: residual {residual:.6g} "
            f"> bound {sigma_bar:.6g}"
        )
    return z


# ---------------------------------------------------------------------------
# Frank-Wolfe over the L1 ball
# ---------------------------------------------------------------------------

def frank_wolfe_l1(
    A: np.ndarray,
    b: np.ndarray,
    radius: float,
    iters: int = 1000,
    gap_tol: float = 1e-6,
    grad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    quad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[np.ndarray, float]:
    """Minimize 0.5 w^T A w + b^T w over {||w||_1 <= radius}.

    Exact line search (closed form for quadratics); the linear oracle picks
    the lowest-index coordinate of maximal |gradient|.  Returns the final
    iterate and the last duality gap.  ``grad_fn``/``quad_fn`` may override
    the matrix products (used when A is only available as an operator).
    """
    if radius <= 0:
        raise ParameterError("radius must be positive")
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    b = np.asarray(b, dtype=float)
    d = b.shape[0]
    if grad_fn is None:
        A = np.asarray(A, dtype=float)
        grad_fn = lambda w: A @ w + b
        quad_fn = lambda v: A @ v
    w = np.zeros(d)
    gap = math.inf
    for _ in range(iters):
        g = grad_fn(w)
        i = int(np.argmax(np.abs(g)))  # ties: lowest index
        s = np.zeros(d)
        s[i] = -radius * np.sign(g[i]) if g[i] != 0 else radius
        direction = s - w
        gap = float(-g @ direction)
        if gap < 0 and gap > -1e-12:
            gap = 0.0
        if gap <= gap_tol:
            break
        Ad = quad_fn(direction)
        denom = float(direction @ Ad)
        if denom <= 0:
            gamma = 1.0
        else:
            gamma = min(1.0, max(0.0, float(-g @ direction) / denom))
        if gamma == 0.0:
            break
        w = w + gamma * direction
    return w, gap


# ---------------------------------------------------------------------------
# Ball projections
# ---------------------------------------------------------------------------

def project_l2_ball(w: np.ndarray, radius: float = 1.0) -> np.ndarray:
    norm = float(np.linalg.norm(w))
    if norm > radius:
        return w * (radius / norm)
    return w


def project_l1_ball(w: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto the L1 ball (sort-based thresholding)."""
    if np.abs(w).sum() <= radius:
        return w
    u = np.sort(np.abs(w))[::-1]
    css = np.cumsum(u)
    k = np.nonzero(u * np.arange(1, len(u) + 1) > (css - radius))[0][-1]
    theta = (css[k] - radius) / (k + 1.0)
    return np.sign(w) * np.maximum(np.abs(w) - theta, 0.0)


# ---------------------------------------------------------------------------
# Projected SGD with an inexact stochastic gradient oracle
# ---------------------------------------------------------------------------

def inexact_sgd(
    grad_fn: Callable[[np.ndarray, int], np.ndarray],
    steps: int,
    beta: float,
    sigma: float,
    w0: Optional[np.ndarray] = None,
    dim: Optional[int] = None,
    radius: float = 1.0,
    c0: float = 1.0,
    avg_fraction: float = 0.5,
) -> np.ndarray:
    """Projected stochastic gradient over the L2 ball of ``radius``.

    Step size min(1/beta, c0 / (sigma sqrt(k))) with Polyak-Ruppert
    averaging over the trailing ``avg_fraction`` of iterates.  The oracle
    may be biased (bias gamma) and noisy (variance sigma^2); the averaged
    iterate then satisfies an O(sigma/sqrt(k) + gamma) excess-risk envelope
    on smooth convex objectives.  Non-finite gradients skip the step.
    """
    if w0 is None:
        if dim is None:
            raise ParameterError("inexact_sgd needs w0 or dim")
        w0 = np.zeros(dim)
    w = np.asarray(w0, dtype=float).copy()
    w = project_l2_ball(w, radius)
    avg_start = max(0, int(steps * (1.0 - avg_fraction)))
    avg = np.zeros_like(w)
    count = 0
    for k in range(1, steps + 1):
        g = np.asarray(grad_fn(w, k), dtype=float)
        if not np.all(np.isfinite(g)):
            log.warning("inexact_sgd: non-finite gradient at step %d, skipped", k)
        else:
            if sigma > 0:
                eta = min(1.0 / beta if beta > 0 else math.inf, c0 / (sigma * math.sqrt(k)))
            else:
                eta = 1.0 / beta if beta > 0 else c0 / math.sqrt(k)
            w = project_l2_ball(w - eta * g, radius)
        if k > avg_start:
            avg += w
            count += 1
    if count == 0:
        return w
    return avg / count
