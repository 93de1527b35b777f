"""Synthetic data generation and experiment orchestration.

Configs are INI files (strict: unknown sections or keys are errors).  Each
grid cell (n, epsilon) x replication produces one CSV record; runs are
resumable by (seed, cell) key and fully deterministic given the config and
root seed.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ldplearn import glm, kernel_krr, mean_est, numerics, sparse_linreg
from ldplearn.privacy import ParameterError, PrivacyBudget, stream

log = logging.getLogger(__name__)

RESULT_FIELDS = [
    "task",
    "n",
    "d",
    "epsilon",
    "replication",
    "metric",
    "value",
    "audit_epsilon",
    "audit_delta",
]

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Data generators
# ---------------------------------------------------------------------------

def gen_sparse_mean_data(
    n: int, d: int, s: int, lam: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """s-sparse mean with ||mu||_1 = lam; samples stay in the unit ball.

    Points are mu plus a symmetric perturbation of radius 1 - ||mu||_2, so
    the population mean is exactly mu and no clipping ever occurs.
    """
    if s > d:
        raise ParameterError("sparsity s cannot exceed d")
    rng = stream(seed, 1)
    support = rng.choice(d, size=s, replace=False)
    signs = rng.choice([-1.0, 1.0], size=s)
    mu = np.zeros(d)
    mu[support] = signs * lam / s
    mu_norm = float(np.linalg.norm(mu))
    if mu_norm > 1.0:
        raise ParameterError(f"(lam={lam}, s={s}) puts the mean outside the unit ball")
    radius = 1.0 - mu_norm
    direction = rng.normal(size=(n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # radii for a symmetric, zero-mean perturbation within the ball
    radii = radius * rng.uniform(0.0, 1.0, size=n) ** (1.0 / d)
    X = mu[None, :] + direction * radii[:, None]
    return X, mu


def gen_sparse_linreg_data(
    n: int, d: int, s: int, noise: float, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Planted s-sparse model with ||w*||_1 = 1; x in the unit ball,
    y = clip(x^T w* + noise, [-1, 1])."""
    if s > d:
        raise ParameterError("sparsity s cannot exceed d")
    rng = stream(seed, 2)
    support = rng.choice(d, size=s, replace=False)
    signs = rng.choice([-1.0, 1.0], size=s)
    w_star = np.zeros(d)
    w_star[support] = signs / s
    X = rng.normal(size=(n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X *= rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)
    y = np.clip(X @ w_star + noise * rng.normal(size=n), -1.0, 1.0)
    return X, y, w_star


def gen_logistic_data(
    n: int, d: int, r: float, margin: float, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Labels from the logistic model at score r * x^T w_star.

    ``margin`` in [0, 1) mixes a +-w_star component into otherwise uniform
    directions, concentrating scores away from zero.
    """
    if not (0 <= margin < 1):
        raise ParameterError("margin must be in [0, 1)")
    rng = stream(seed, 3)
    w_star = rng.normal(size=d)
    w_star /= np.linalg.norm(w_star)
    u = rng.normal(size=(n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    side = rng.choice([-1.0, 1.0], size=n)
    X = (1.0 - margin) * u + margin * side[:, None] * w_star[None, :]
    norms = np.linalg.norm(X, axis=1)
    X = X / np.maximum(norms, 1e-300)[:, None] * np.minimum(norms, 1.0)[:, None]
    prob = 1.0 / (1.0 + np.exp(-r * (X @ w_star)))
    y = np.where(rng.uniform(size=n) < prob, 1.0, -1.0)
    return X, y, w_star


def logistic_fit(
    X: np.ndarray, y: np.ndarray, r: float, iters: int = 500
) -> np.ndarray:
    """Non-private reference fit: projected gradient on the logistic loss
    over the unit L2 ball."""
    n, d = X.shape
    w = np.zeros(d)
    L = r * r / 4.0 * float(np.mean(np.sum(X * X, axis=1))) + 1e-12
    step = 1.0 / L
    for _ in range(iters):
        s = r * (X @ w)
        m = 0.5 * np.tanh(0.5 * s) - 0.5 * y
        g = r * (X.T @ m) / n
        w = numerics.project_l2_ball(w - step * g, 1.0)
    return w


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

_EXPERIMENT_KEYS = {
    "task",
    "n_grid",
    "eps_grid",
    "d",
    "delta",
    "replications",
    "seed",
    "out",
    "test_mode",
    "paper_exact",
}
_TASK_KEYS = {
    "mean": {"lam", "s", "c0", "sensitivity"},
    "linreg": {"s", "noise", "m", "sensitivity", "fw_iters"},
    "krr": {"kernel", "lengthscale", "reg_c", "dp_grid", "s", "noise", "n_test"},
    "glm-logistic": {"r", "margin", "p", "gamma", "c", "c0", "n_heldout", "sensitivity"},
}


@dataclass
class ExperimentConfig:
    task: str
    n_grid: list[int]
    eps_grid: list[float]
    d: int
    delta: float
    replications: int
    seed: int
    out: Path
    test_mode: bool = False
    paper_exact: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in _TASK_KEYS:
            raise ParameterError(f"unknown task {self.task!r}")
        if not self.n_grid or not self.eps_grid:
            raise ParameterError("n_grid and eps_grid must be non-empty")
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")


def load_config(path: str | Path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse a strict INI config; unknown sections or keys raise."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ParameterError(f"config file {path} not found or unreadable")
    if "experiment" not in parser:
        raise ParameterError("config must have an [experiment] section")
    exp = dict(parser["experiment"])
    unknown = set(exp) - _EXPERIMENT_KEYS
    if unknown:
        raise ParameterError(f"unknown keys in [experiment]: {sorted(unknown)}")
    task = exp.get("task")
    if task not in _TASK_KEYS:
        raise ParameterError(f"unknown or missing task {task!r}")
    params: dict = {}
    for section in parser.sections():
        if section == "experiment":
            continue
        if section != task:
            raise ParameterError(f"unexpected section [{section}] for task {task}")
        sec = dict(parser[section])
        unknown = set(sec) - _TASK_KEYS[task]
        if unknown:
            raise ParameterError(f"unknown keys in [{section}]: {sorted(unknown)}")
        params = sec
    config = ExperimentConfig(
        task=task,
        n_grid=[int(v) for v in exp.get("n_grid", "").split()],
        eps_grid=[float(v) for v in exp.get("eps_grid", "").split()],
        d=int(exp.get("d", "10")),
        delta=float(exp.get("delta", "0.1")),
        replications=int(exp.get("replications", "1")),
        seed=int(exp.get("seed", "0")),
        out=Path(exp.get("out", "results")),
        test_mode=exp.get("test_mode", "false").lower() == "true",
        paper_exact=exp.get("paper_exact", "false").lower() == "true",
        params=params,
    )
    for key, value in (overrides or {}).items():
        setattr(config, key, value)
    return config


# ---------------------------------------------------------------------------
# Cell runners
# ---------------------------------------------------------------------------

def _cell_seed(root: int, n_idx: int, eps_idx: int, rep: int) -> int:
    ss = np.random.SeedSequence(root, spawn_key=(n_idx, eps_idx, rep))
    return int(ss.generate_state(1)[0])


def _run_mean_cell(cfg: ExperimentConfig, n: int, eps: float, rep: int, seed: int) -> list[tuple[str, float, dict]]:
    p = cfg.params
    lam = float(p.get("lam", 1.0))
    s = int(p.get("s", 5))
    c0 = float(p.get("c0", 100.0))
    sens = 1.0 if cfg.paper_exact else float(p.get("sensitivity", 1.0))
    X, mu = gen_sparse_mean_data(n, cfg.d, s, lam, seed)
    config = mean_est.MeanEstConfig(
        lam=lam, epsilon=eps, delta=cfg.delta, n=n, d=cfg.d, c0=c0,
        seed=seed, sensitivity=sens, test_mode=cfg.test_mode,
    )
    z, diag = mean_est.estimate_mean(X, config)
    err = float(np.linalg.norm(z - mu))
    return [("l2_error", err, diag)]


def _run_linreg_cell(cfg, n, eps, rep, seed):
    p = cfg.params
    s = int(p.get("s", 3))
    noise = float(p.get("noise", 0.1))
    sens = 1.0 if cfg.paper_exact else float(p.get("sensitivity", 1.0))
    m = int(p["m"]) if "m" in p else None
    X, y, _ = gen_sparse_linreg_data(n, cfg.d, s, noise, seed)
    config = sparse_linreg.LinRegConfig(
        epsilon=eps, delta=cfg.delta, n=n, d=cfg.d, m=m, seed=seed,
        sensitivity=sens, test_mode=cfg.test_mode,
        fw_iters=int(p.get("fw_iters", 2000)),
    )
    w, diag = sparse_linreg.run_pipeline(X, y, config)
    # the non-private oracle is deterministic in the data, shared per cell
    risk = sparse_linreg.excess_risk(w, X, y)
    return [("excess_risk", risk, diag)]


def _run_krr_cell(cfg, n, eps, rep, seed):
    p = cfg.params
    kern = kernel_krr.KernelSpec(
        kind=p.get("kernel", "gaussian"),
        dim=cfg.d,
        lengthscale=float(p.get("lengthscale", 1.0)),
    )
    reg_c = float(p.get("reg_c", 100.0))
    n_test = int(p.get("n_test", 100))
    s = int(p.get("s", 3))
    noise = float(p.get("noise", 0.1))
    dp_grid = [int(v) for v in p.get("dp_grid", "").split()] or [None]
    X, y, _ = gen_sparse_linreg_data(n + n_test, cfg.d, s, noise, seed)
    X_train, y_train = X[:n], y[:n]
    X_test = X[n:]
    oracle_pred = kernel_krr.exact_krr_predict(X_train, y_train, X_test, kern, reg_c)
    results = []
    for d_p in dp_grid:
        config = kernel_krr.KRRConfig(
            epsilon=eps, delta=cfg.delta, n=n, C=reg_c, d_p=d_p, seed=seed,
            scaling="half" if cfg.paper_exact else "standard",
            test_mode=cfg.test_mode,
        )
        w, rff, diag = kernel_krr.krr_pipeline(X_train, y_train, kern, config)
        preds = rff.features(X_test) @ w
        gap = float(np.max(np.abs(preds - oracle_pred)))
        rmse = float(np.sqrt(np.mean((preds - y[n:]) ** 2)))
        diag = dict(diag, rmse=rmse)
        results.append((f"pred_sup_gap_dp{diag['d_p']}", gap, diag))
    return results


def _run_glm_cell(cfg, n, eps, rep, seed):
    p = cfg.params
    r = float(p.get("r", 1.0))
    margin = float(p.get("margin", 0.5))
    n_heldout = int(p.get("n_heldout", 10000))
    spec = glm.logistic_spec(r)
    budget = PrivacyBudget(eps, cfg.delta)
    if "p" in p:
        degree = int(p["p"])
    else:
        gamma = float(p.get("gamma", 0.1))
        c = float(p.get("c", 2.0))
        k = max(1, math.ceil(c * math.log(4.0 * r / gamma)))
        degree = math.ceil(k + 2.0 * spec.mu2(k, r))
    c1, c2, a1_err, a2_err = glm.gradient_coefficients(spec, degree)
    # train and held-out splits must share the planted direction
    X_all, y_all, _ = gen_logistic_data(n + n_heldout, cfg.d, r, margin, seed)
    X, y = X_all[:n], y_all[:n]
    Xh, yh = X_all[n:], y_all[n:]
    batch = glm.collect_batch(
        X, y, degree, budget, seed,
        sensitivity=1.0 if cfg.paper_exact else float(p.get("sensitivity", 1.0)),
        test_mode=cfg.test_mode,
    )
    w_priv = glm.learn(batch, spec, c1, c2, c0=float(p.get("c0", 1.0)))
    w_ref = logistic_fit(Xh, yh, r)
    excess = spec.loss(w_priv, Xh, yh) - spec.loss(w_ref, Xh, yh)
    diag = {"p": degree, "sup_err_f1": a1_err, "sup_err_f2": a2_err}
    return [("population_excess_risk", excess, diag)]


_RUNNERS = {
    "mean": _run_mean_cell,
    "linreg": _run_linreg_cell,
    "krr": _run_krr_cell,
    "glm-logistic": _run_glm_cell,
}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run every grid cell x replication; returns (and persists) records.

    Results are flushed per record; rerunning with the same config resumes,
    skipping cells already present in the output file.
    """
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / f"{cfg.task}_results.csv"
    diag_path = out_dir / f"{cfg.task}_diagnostics.json"
    done: set[tuple] = set()
    records: list[dict] = []
    if out_csv.exists():
        with open(out_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                done.add((int(row["n"]), float(row["epsilon"]), int(row["replication"]), row["metric"]))
                records.append(row)
    write_header = not out_csv.exists()
    diagnostics = []
    with open(out_csv, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        if write_header:
            writer.writeheader()
        for n_idx, n in enumerate(cfg.n_grid):
            for eps_idx, eps in enumerate(cfg.eps_grid):
                for rep in range(cfg.replications):
                    seed = _cell_seed(cfg.seed, n_idx, eps_idx, rep)
                    probe = (n, eps, rep)
                    if any(key[:3] == probe for key in done):
                        continue
                    start = time.monotonic()
                    try:
                        results = _RUNNERS[cfg.task](cfg, n, eps, rep, seed)
                    except Exception as exc:  # per-cell failure, run continues
                        log.error("cell n=%d eps=%g rep=%d failed: %s", n, eps, rep, exc)
                        results = [("error", math.nan, {"error": str(exc)})]
                    wall = time.monotonic() - start
                    for metric, value, diag in results:
                        audit = diag.get("budget_audit", {}).get("total", {})
                        record = {
                            "task": cfg.task,
                            "n": n,
                            "d": cfg.d,
                            "epsilon": repr(eps),
                            "replication": rep,
                            "metric": metric,
                            "value": repr(float(value)),
                            "audit_epsilon": repr(audit.get("epsilon", eps)),
                            "audit_delta": repr(audit.get("delta", cfg.delta)),
                        }
                        writer.writerow(record)
                        records.append(record)
                        diagnostics.append(
                            {
                                "n": n,
                                "epsilon": eps,
                                "replication": rep,
                                "metric": metric,
                                "wall_time": round(wall, 3),
                                **diag,
                            }
                        )
                    fh.flush()
    if diagnostics:
        existing = []
        if diag_path.exists():
            existing = json.loads(diag_path.read_text())
        diag_path.write_text(json.dumps(existing + diagnostics, indent=1, default=str))
    return records


def rate_fit(ns: np.ndarray, errors: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of log(error) vs log(n), with its standard error."""
    x = np.log(np.asarray(ns, dtype=float))
    z = np.log(np.asarray(errors, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, z, rcond=None)
    slope = float(coef[0])
    dof = len(x) - 2
    if dof > 0 and len(res):
        s2 = float(res[0]) / dof
        stderr = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    else:
        stderr = math.nan
    return slope, stderr


def rate_fit_csv(path: str | Path, metric: Optional[str] = None) -> tuple[float, float]:
    """Fit the log-log slope of per-n median metric values in a result CSV."""
    by_n: dict[int, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if metric is not None and row["metric"] != metric:
                continue
            if row["metric"] == "error":
                continue
            by_n.setdefault(int(row["n"]), []).append(float(row["value"]))
    if len(by_n) < 2:
        raise ParameterError("rate fit needs at least two distinct n values")
    ns = sorted(by_n)
    medians = [float(np.median(by_n[n])) for n in ns]
    return rate_fit(np.array(ns), np.array(medians))
