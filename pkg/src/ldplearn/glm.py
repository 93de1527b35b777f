"""Smooth generalized-linear-model learning under non-interactive LDP.

The loss family is l(w; x, y) = -y h1(r x^T w) + h2(r x^T w) with smooth
h1, h2.  The nonlinear gradient coefficient is approximated by a truncated
Chebyshev expansion; each user ships fresh private copies of (x, y) sized
so that products of noisy inner products give a conditionally unbiased
estimate of the polynomial gradient; the server runs projected SGD on the
resulting inexact stochastic oracle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial import chebyshev as npcheb

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

DEGREE_CAP = 30  # monomial coefficients grow ~2^p; beyond this the
                 # conversion and the noisy product estimator are useless

_COLLECT_TAG = 501


# ---------------------------------------------------------------------------
# Loss family
# ---------------------------------------------------------------------------

@dataclass
class SGLLSpec:
    """A smooth generalized linear loss instance.

    ``h1``/``h2`` and their derivatives are vectorized callables; ``mu1``
    and ``mu2`` are the smoothness profile functions of (k, r); ``beta`` is
    the smoothness constant of the loss in w over unit-ball data/weights.
    """

    h1: Callable[[np.ndarray], np.ndarray]
    h2: Callable[[np.ndarray], np.ndarray]
    d_h1: Callable[[np.ndarray], np.ndarray]
    d_h2: Callable[[np.ndarray], np.ndarray]
    mu1: Callable[[float, float], float]
    mu2: Callable[[float, float], float]
    r: float
    beta: float
    sigma0: float = 1.0
    name: str = "sgll"

    def f1(self, x):
        """Gradient coefficient of the label term: h1'(r x)."""
        return self.d_h1(self.r * np.asarray(x, dtype=float))

    def f2(self, x):
        """Gradient coefficient of the data term: h2'(r x)."""
        return self.d_h2(self.r * np.asarray(x, dtype=float))

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        s = self.r * (np.asarray(X) @ w)
        return float(np.mean(-np.asarray(y) * self.h1(s) + self.h2(s)))

    def grad(self, w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
        s = self.r * float(np.dot(x, w))
        m = self.d_h2(s) - y * self.d_h1(s)
        return self.r * m * np.asarray(x, dtype=float)


def logistic_spec(r: float, sigma0: float = 1.0) -> SGLLSpec:
    """Logistic regression as a smooth GLL: h1(x) = x/2,
    h2(x) = x/2 + ln(1 + e^{-x})."""
    if r <= 0:
        raise ParameterError("r must be positive")
    return SGLLSpec(
        h1=lambda x: 0.5 * x,
        h2=lambda x: 0.5 * x + np.logaddexp(0.0, -x),
        d_h1=lambda x: 0.5 * np.ones_like(np.asarray(x, dtype=float)),
        d_h2=lambda x: 0.5 * np.tanh(0.5 * np.asarray(x, dtype=float)),
        mu1=lambda k, rr: rr * math.sqrt(4.0 * k * math.pi**3),
        mu2=lambda k, rr: rr * k / math.e,
        r=r,
        beta=r * r / 4.0,
        sigma0=sigma0,
        name="logistic",
    )


# ---------------------------------------------------------------------------
# Chebyshev machinery
# ---------------------------------------------------------------------------

@dataclass
class ChebyshevApprox:
    """Degree-p expansion with both Chebyshev and monomial coefficients.

    ``a`` holds the orthogonality-integral coefficients a_0..a_p; evaluation
    uses a_0/2 + sum_{k>=1} a_k T_k.  ``c`` holds the equivalent monomial
    coefficients c_0..c_p.
    """

    degree: int
    a: np.ndarray
    c: np.ndarray
    sup_error: float = math.nan

    def eval_chebyshev(self, x) -> np.ndarray:
        coeffs = self.a.copy()
        coeffs[0] *= 0.5
        return npcheb.chebval(np.asarray(x, dtype=float), coeffs)

    def eval_monomial(self, x) -> np.ndarray:
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.c)


def chebyshev_fit(
    f: Callable[[np.ndarray], np.ndarray],
    p: int,
    grid_points: int = 1000,
) -> ChebyshevApprox:
    """Chebyshev coefficients of f on [-1, 1] via node quadrature.

    Uses N = 4(p+1) Chebyshev points, which resolves the first p+1
    coefficients to near machine precision for smooth f.  The sup-norm
    error of the truncated expansion is measured on a uniform grid.
    """
    if p < 0:
        raise ParameterError("degree must be >= 0")
    if p > DEGREE_CAP:
        raise ParameterError(
            f"degree {p} exceeds the cap {DEGREE_CAP}: the Chebyshev-to-monomial "
            "conversion is too ill-conditioned beyond it"
        )
    N = 4 * (p + 1)
    theta = math.pi * (np.arange(N) + 0.5) / N
    nodes = np.cos(theta)
    vals = np.asarray(f(nodes), dtype=float)
    if vals.shape != nodes.shape:
        vals = np.broadcast_to(vals, nodes.shape).astype(float)
    if not np.all(np.isfinite(vals)):
        raise ParameterError("chebyshev_fit: function returned non-finite values")
    k = np.arange(p + 1)
    a = (2.0 / N) * (np.cos(np.outer(k, theta)) @ vals)
    c = cheb_to_monomial(a)
    approx = ChebyshevApprox(degree=p, a=a, c=c)
    grid = np.linspace(-1.0, 1.0, grid_points)
    approx.sup_error = float(np.max(np.abs(approx.eval_chebyshev(grid) - f(grid))))
    return approx


def cheb_to_monomial(a: np.ndarray) -> np.ndarray:
    """Monomial coefficients of a_0/2 + sum a_k T_k (exact for p <= cap)."""
    a = np.asarray(a, dtype=float)
    p = len(a) - 1
    if p > DEGREE_CAP:
        raise ParameterError(
            f"degree {p} exceeds the conversion cap {DEGREE_CAP} "
            "(basis-change coefficients grow like 2^p)"
        )
    coeffs = a.copy()
    coeffs[0] *= 0.5
    return npcheb.cheb2poly(coeffs)


def truncation_degree(
    spec: SGLLSpec,
    alpha: float,
    c: float = 2.0,
    rule: str = "tight",
    which: str = "f2",
    max_c: float = 64.0,
) -> tuple[int, int, ChebyshevApprox]:
    """Pick (k, p) so the degree-p expansion meets sup error alpha.

    k = ceil(c ln(1/alpha)); rule 'tight' sets p = ceil(k + 2 mu2(k; r)),
    rule 'slack' uses ceil(k + e mu2(k; r)).  The returned approximation is
    certified on a grid; c is doubled (and logged) until the target is met.
    """
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    if rule not in ("tight", "slack"):
        raise ParameterError(f"unknown rule {rule!r}")
    f = spec.f1 if which == "f1" else spec.f2
    factor = 2.0 if rule == "tight" else math.e
    c_cur = c
    while True:
        k = max(1, math.ceil(c_cur * math.log(1.0 / alpha)))
        p = math.ceil(k + factor * spec.mu2(k, spec.r))
        if p > DEGREE_CAP:
            raise ParameterError(
                f"required degree {p} exceeds the cap {DEGREE_CAP}; "
                "use a larger target error alpha"
            )
        approx = chebyshev_fit(f, p)
        if approx.sup_error <= alpha:
            return k, p, approx
        if c_cur >= max_c:
            raise ParameterError(
                f"sup error {approx.sup_error:.3g} still above {alpha:.3g} at c={c_cur}"
            )
        log.info(
            "truncation_degree: sup error %.3g > %.3g at c=%g, escalating",
            approx.sup_error,
            alpha,
            c_cur,
        )
        c_cur *= 2.0


def gradient_coefficients(spec: SGLLSpec, p: int) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Monomial coefficient arrays (c1, c2) for both gradient terms at
    degree p, plus their measured sup errors."""
    a1 = chebyshev_fit(spec.f1, p)
    a2 = chebyshev_fit(spec.f2, p)
    return a1.c, a2.c, a1.sup_error, a2.sup_error


# ---------------------------------------------------------------------------
# Collection (client side)
# ---------------------------------------------------------------------------

@dataclass
class ClientSynopsis:
    """One user's transmitted bundle of fresh private copies.

    z0: one noisy copy of x at a quarter of the budget; zy: p+1 noisy label
    copies; zx: p(p+1)/2 noisy copies of x feeding the product estimator.
    """

    z0: np.ndarray
    zy: np.ndarray
    zx: np.ndarray  # shape (p(p+1)/2, d)
    p: int
    audit: Optional[BudgetAudit] = None


def synopsis_budgets(budget: PrivacyBudget, p: int) -> tuple[PrivacyBudget, PrivacyBudget, Optional[PrivacyBudget]]:
    """Per-copy budgets (z0, each label copy, each data copy).

    Split: eps/4 for z0, eps/(4(p+1)) per label copy, eps/(p(p+1)) per data
    copy; total exactly eps.  For p = 0 there are no data copies and the
    two remaining shares are eps/2 each.
    """
    if p < 0:
        raise ParameterError("degree p must be >= 0")
    if p == 0:
        return budget.split(0.5), budget.split(0.5), None
    return (
        budget.split(0.25),
        budget.split(1.0 / (4.0 * (p + 1))),
        budget.split(1.0 / (p * (p + 1))),
    )


def client_collect(
    x: np.ndarray,
    y: float,
    p: int,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    sensitivity: float = 1.0,
    test_mode: bool = False,
) -> ClientSynopsis:
    """Produce one user's synopsis of fresh private copies."""
    x = clip_l2(np.asarray(x, dtype=float))
    b0, by, b1 = synopsis_budgets(budget, p)
    z0 = privatize_vector(x, b0, rng, sensitivity=sensitivity, test_mode=test_mode)
    zy = np.array(
        [
            privatize_scalar(y, by, rng, sensitivity=sensitivity, test_mode=test_mode)
            for _ in range(p + 1)
        ]
    )
    n_copies = p * (p + 1) // 2
    zx = np.empty((n_copies, x.shape[0]))
    for j in range(n_copies):
        zx[j] = privatize_vector(x, b1, rng, sensitivity=sensitivity, test_mode=test_mode)
    audit = BudgetAudit(declared=budget)
    audit.charge("data-copy-z0", b0)
    audit.charge("label-copies", by, copies=p + 1)
    if n_copies:
        audit.charge("data-copies", b1, copies=n_copies)
    audit.check()
    return ClientSynopsis(z0=z0, zy=zy, zx=zx, p=p, audit=audit)


@dataclass
class SynopsisBatch:
    """All n synopses as arrays (vectorized collection for the harness)."""

    Z0: np.ndarray  # (n, d)
    Zy: np.ndarray  # (n, p+1)
    Zx: np.ndarray  # (n, p(p+1)/2, d)
    p: int

    def __len__(self) -> int:
        return self.Z0.shape[0]

    def user(self, i: int) -> ClientSynopsis:
        return ClientSynopsis(z0=self.Z0[i], zy=self.Zy[i], zx=self.Zx[i], p=self.p)


def collect_batch(
    X: np.ndarray,
    y: np.ndarray,
    p: int,
    budget: PrivacyBudget,
    seed: int,
    sensitivity: float = 1.0,
    test_mode: bool = False,
) -> SynopsisBatch:
    """Vectorized collection of all users' synopses (one derived stream)."""
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    X = X * np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)[:, None]
    yc = np.clip(np.asarray(y, dtype=float), -1.0, 1.0)
    n, d = X.shape
    n_copies = p * (p + 1) // 2
    b0, by, b1 = synopsis_budgets(budget, p)
    if test_mode:
        s0 = sy = s1 = 0.0
    else:
        s0 = noise_sigma(b0, sensitivity)
        sy = noise_sigma(by, sensitivity)
        s1 = noise_sigma(b1, sensitivity) if b1 is not None else 0.0
    rng = stream(seed, _COLLECT_TAG)
    Z0 = X + rng.normal(0.0, s0, size=(n, d)) if s0 > 0 else X.copy()
    Zy = yc[:, None] + (
        rng.normal(0.0, sy, size=(n, p + 1)) if sy > 0 else np.zeros((n, p + 1))
    )
    Zx = np.repeat(X[:, None, :], n_copies, axis=1) if n_copies else np.empty((n, 0, d))
    if n_copies and s1 > 0:
        Zx = Zx + rng.normal(0.0, s1, size=Zx.shape)
    return SynopsisBatch(Z0=Z0, Zy=Zy, Zx=Zx, p=p)


# ---------------------------------------------------------------------------
# Gradient oracle (server side)
# ---------------------------------------------------------------------------

def copy_blocks(p: int) -> list[tuple[int, int]]:
    """Disjoint index blocks of the data copies: block j (1-based) holds
    copies j(j-1)/2 .. j(j+1)/2 - 1 and feeds the j-th power estimate."""
    return [(j * (j - 1) // 2, j * (j + 1) // 2) for j in range(1, p + 1)]


def inexact_gradient(
    w: np.ndarray,
    synopsis: ClientSynopsis,
    c1: np.ndarray,
    c2: np.ndarray,
    r: float,
) -> np.ndarray:
    """Unbiased estimate of the polynomial surrogate gradient.

    t_0 = 1 and t_j is the product of w^T z over the j-th disjoint block of
    fresh copies; term k pairs t_k with the k-th fresh label copy, keeping
    every factor independent.  Conditionally on (x, y, w) the expectation
    equals r * m_hat(w; x, y) * x.
    """
    p = synopsis.p
    if len(c1) != p + 1 or len(c2) != p + 1:
        raise ParameterError(
            f"coefficient arrays must have length p+1 = {p + 1}, "
            f"got {len(c1)} and {len(c2)}"
        )
    inner = synopsis.zx @ w if synopsis.zx.size else np.empty(0)
    t = np.empty(p + 1)
    t[0] = 1.0
    for j, (lo, hi) in enumerate(copy_blocks(p), start=1):
        t[j] = float(np.prod(inner[lo:hi]))
    powers = r ** (np.arange(p + 1) + 1.0)
    scalar = float(np.sum((c2 - c1 * synopsis.zy) * t * powers))
    return scalar * synopsis.z0


def approx_gradient(
    w: np.ndarray, x: np.ndarray, y: float, c1: np.ndarray, c2: np.ndarray, r: float
) -> np.ndarray:
    """The noiseless polynomial surrogate gradient r * m_hat(w; x, y) * x."""
    s = float(np.dot(x, w))
    k = np.arange(len(c1))
    m_hat = float(np.sum((c2 - c1 * y) * (r * s) ** k))
    return r * m_hat * np.asarray(x, dtype=float)


def batch_gradients(
    w: np.ndarray, batch: SynopsisBatch, c1: np.ndarray, c2: np.ndarray, r: float
) -> np.ndarray:
    """All users' oracle gradients at a common w (vectorized)."""
    p = batch.p
    n = len(batch)
    inner = batch.Zx @ w if batch.Zx.size else np.empty((n, 0))
    t = np.empty((n, p + 1))
    t[:, 0] = 1.0
    for j, (lo, hi) in enumerate(copy_blocks(p), start=1):
        t[:, j] = np.prod(inner[:, lo:hi], axis=1)
    powers = r ** (np.arange(p + 1) + 1.0)
    scal = np.sum((c2[None, :] - c1[None, :] * batch.Zy) * t * powers[None, :], axis=1)
    return scal[:, None] * batch.Z0


# ---------------------------------------------------------------------------
# Learning loop
# ---------------------------------------------------------------------------

def learn(
    batch: SynopsisBatch,
    spec: SGLLSpec,
    c1: np.ndarray,
    c2: np.ndarray,
    w1: Optional[np.ndarray] = None,
    sigma: Optional[float] = None,
    c0: float = 1.0,
    avg_fraction: float = 0.5,
) -> np.ndarray:
    """Drive projected SGD with one user synopsis per step.

    ``sigma`` (oracle standard deviation, step-size tuning only) is
    estimated from the first few hundred gradients at w1 when not given.
    """
    n = len(batch)
    d = batch.Z0.shape[1]
    if w1 is None:
        w1 = np.zeros(d)
    if n == 0:
        return np.asarray(w1, dtype=float).copy()
    if sigma is None:
        probe = min(n, 200)
        sub = SynopsisBatch(
            Z0=batch.Z0[:probe], Zy=batch.Zy[:probe], Zx=batch.Zx[:probe], p=batch.p
        )
        g = batch_gradients(np.asarray(w1, dtype=float), sub, c1, c2, spec.r)
        sigma = float(np.sqrt(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1))))

    def grad_fn(w: np.ndarray, k: int) -> np.ndarray:
        return inexact_gradient(w, batch.user(k - 1), c1, c2, spec.r)

    return numerics.inexact_sgd(
        grad_fn,
        steps=n,
        beta=spec.beta,
        sigma=sigma,
        w0=np.asarray(w1, dtype=float),
        radius=1.0,
        c0=c0,
        avg_fraction=avg_fraction,
    )
