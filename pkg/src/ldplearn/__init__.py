"""Non-interactive local differential privacy: estimation and learning.

Subpackages cover the Gaussian LDP mechanism with budget accounting
(:mod:`ldplearn.privacy`), shared numerical kernels
(:mod:`ldplearn.numerics`), the four end-to-end pipelines
(:mod:`ldplearn.mean_est`, :mod:`ldplearn.sparse_linreg`,
:mod:`ldplearn.kernel_krr`, :mod:`ldplearn.glm`) and the experiment
harness (:mod:`ldplearn.harness`).
"""

from ldplearn.privacy import PrivacyBudget, compose, noise_sigma

__all__ = ["PrivacyBudget", "compose", "noise_sigma"]

__version__ = "0.1.0"
