"""Gaussian mechanism for local differential privacy, with budget accounting.

The mechanism adds N(0, sigma^2 I) noise to an L2-clipped vector, where
sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon.  The ``sensitivity``
switch selects between the worst-case L2 sensitivity of 2 between two
unit-ball vectors (the safe default for the standalone mechanism) and the
value 1 used verbatim by the collection pipelines; see the pipeline modules
for which convention they default to.

Budgets compose additively: running k mechanisms at (eps_i, delta_i) on the
same datum costs (sum eps_i, sum delta_i).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ParameterError(ValueError):
    """Invalid privacy or mechanism parameter."""


class InputError(ValueError):
    """Malformed mechanism input (non-finite, wrong shape)."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair. epsilon > 0, 0 < delta < 1."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not (0 < self.delta < 1):
            raise ParameterError(f"delta must be in (0, 1), got {self.delta}")

    def split(self, fraction: float) -> "PrivacyBudget":
        """Budget scaled by ``fraction`` (both coordinates)."""
        return PrivacyBudget(self.epsilon * fraction, self.delta * fraction)


def compose(budgets: Sequence[PrivacyBudget]) -> PrivacyBudget:
    """Sequential composition: coordinate-wise sum of (epsilon, delta)."""
    budgets = list(budgets)
    if not budgets:
        raise ParameterError("compose() needs a non-empty list of budgets")
    eps = math.fsum(b.epsilon for b in budgets)
    delta = math.fsum(b.delta for b in budgets)
    return PrivacyBudget(eps, delta)


def noise_sigma(budget: PrivacyBudget, sensitivity: float) -> float:
    """Gaussian noise scale: sensitivity * sqrt(2 ln(1.25/delta)) / epsilon."""
    if sensitivity not in (1, 2, 1.0, 2.0):
        raise ParameterError(f"sensitivity must be 1 or 2, got {sensitivity}")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon


def clip_l2(x: np.ndarray) -> np.ndarray:
    """Rescale x to the unit L2 ball if it lies outside."""
    norm = float(np.linalg.norm(x))
    if norm > 1.0:
        return x / norm
    return x


def privatize_vector(
    x: np.ndarray,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    sensitivity: float = 2.0,
    test_mode: bool = False,
) -> np.ndarray:
    """L2-clip x to the unit ball and add N(0, sigma^2 I) noise.

    With ``test_mode`` the noise scale is forced to zero; the result carries
    no privacy guarantee and must never be used in a pipeline claiming one.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InputError("privatize_vector: input has non-finite entries")
    x = clip_l2(x)
    if test_mode:
        return x.copy()
    sigma = noise_sigma(budget, sensitivity)
    return x + rng.normal(0.0, sigma, size=x.shape)


def privatize_scalar(
    y: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    sensitivity: float = 2.0,
    test_mode: bool = False,
) -> float:
    """Scalar case: clip y to [-1, 1], add N(0, sigma^2) noise."""
    if not math.isfinite(y):
        raise InputError("privatize_scalar: input is non-finite")
    y = min(1.0, max(-1.0, float(y)))
    if test_mode:
        return y
    sigma = noise_sigma(budget, sensitivity)
    return y + float(rng.normal(0.0, sigma))


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Deterministic per-user / per-copy noise stream.

    Streams derived from the same (seed, ids) reproduce the identical
    sequence; distinct id tuples give statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(ids)))


@dataclass
class BudgetAudit:
    """Ledger of per-copy budget charges for one user's synopsis.

    ``total()`` composes every recorded charge; pipelines assert the result
    equals the user-declared budget to within 1e-12.
    """

    declared: PrivacyBudget
    entries: list = field(default_factory=list)

    def charge(self, mechanism: str, budget: PrivacyBudget, copies: int = 1) -> None:
        self.entries.append((mechanism, budget, copies))

    def total(self) -> PrivacyBudget:
        budgets = []
        for _, budget, copies in self.entries:
            budgets.extend([budget] * copies)
        return compose(budgets)

    def check(self, tol: float = 1e-12) -> None:
        total = self.total()
        if (
            abs(total.epsilon - self.declared.epsilon) > tol
            or abs(total.delta - self.declared.delta) > tol
        ):
            raise ParameterError(
                f"budget audit mismatch: declared ({self.declared.epsilon}, "
                f"{self.declared.delta}), spent ({total.epsilon}, {total.delta})"
            )

    def to_dict(self) -> dict:
        total = self.total()
        return {
            "declared": {"epsilon": self.declared.epsilon, "delta": self.declared.delta},
            "total": {"epsilon": total.epsilon, "delta": total.delta},
            "mechanisms": [
                {
                    "mechanism": name,
                    "epsilon": b.epsilon,
                    "delta": b.delta,
                    "copies": copies,
                }
                for name, b, copies in self.entries
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)
