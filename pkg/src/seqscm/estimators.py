"""Linear effect estimators fit on the observed columns of a benchmark dataset.

Covariates are categorical value indices; they enter every design as one-hot
dummies with the first observed level dropped.  All fits solve the normal
equations and switch to a tiny ridge penalty when the system is rank
deficient or badly conditioned.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .benchmark import BenchmarkDataset, OutcomeTarget, observed_outcome
from .errors import EmptyArmError, SingleArmError, ValidationError
from .fileio import atomic_write_csv

RIDGE = 1e-8
COND_LIMIT = 1e12


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.labels):
            raise ValueError("design values and labels disagree")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("design matrix has non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class OlsFit:
    coef: np.ndarray
    stderr: np.ndarray
    cov: np.ndarray
    cond: float
    ridge: bool
    n: int
    d: int


def ols(X: np.ndarray, y: np.ndarray, ridge: float = RIDGE, cond_limit: float = COND_LIMIT) -> OlsFit:
    """Least squares through ``X'X b = X'y``; ridge ``λ`` when ``X'X`` is (near) singular."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    xtx = X.T @ X
    xty = X.T @ y
    try:
        cond = float(np.linalg.cond(xtx))
    except np.linalg.LinAlgError:
        cond = math.inf
    use_ridge = n < d or not math.isfinite(cond) or cond > cond_limit
    a = xtx + ridge * np.eye(d) if use_ridge else xtx
    try:
        coef = np.linalg.solve(a, xty)
    except np.linalg.LinAlgError:
        use_ridge = True
        a = xtx + ridge * np.eye(d)
        coef = np.linalg.solve(a, xty)
    resid = y - X @ coef
    dof = n - (np.linalg.matrix_rank(X) if use_ridge else d)
    sigma2 = float(resid @ resid) / dof if dof > 0 else math.nan
    cov = sigma2 * np.linalg.inv(a)
    stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return OlsFit(coef, stderr, cov, cond, use_ridge, n, d)


def one_hot(
    X: np.ndarray,
    names: Sequence[str],
    levels: Sequence[np.ndarray] | None = None,
) -> tuple[np.ndarray, tuple[str, ...], list[np.ndarray]]:
    """Dummy-code integer columns, dropping each column's first level.

    ``levels`` defaults to the sorted observed values, so a design built on a
    subset can reuse the full data's coding.
    """
    X = np.asarray(X, dtype=np.int64).reshape(len(X), -1)
    if levels is None:
        levels = [np.unique(X[:, j]) for j in range(X.shape[1])]
    blocks, labels = [], []
    for j, name in enumerate(names):
        for lv in levels[j][1:]:
            blocks.append((X[:, j] == lv).astype(np.float64))
            labels.append(f"{name}={int(lv)}")
    mat = np.column_stack(blocks) if blocks else np.zeros((X.shape[0], 0))
    return mat, tuple(labels), list(levels)


@dataclass(frozen=True)
class EstimatorOutput:
    method: str
    ate: float
    cate: np.ndarray
    unit_ids: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.cate)):
            raise ValidationError(f"{self.method}: non-finite CATE predictions")

    def to_csv(self, path: str | os.PathLike) -> Path:
        return atomic_write_csv(path, ["unit_id", "cate_hat"], zip(self.unit_ids.tolist(), self.cate.tolist()))


def _prepare(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int]):
    a0, a1 = arms
    if a0 == a1 or not (0 <= a0 < dataset.n_arms and 0 <= a1 < dataset.n_arms):
        raise ValidationError(f"invalid arm pair {arms} for {dataset.n_arms} treatment values")
    y = observed_outcome(dataset, target)
    in_pair = (dataset.t == a0) | (dataset.t == a1)
    if int(in_pair.sum()) < 2:
        raise SingleArmError("need at least two units in the compared arms")
    treated = (dataset.t == a1).astype(np.float64)
    if not (dataset.t[in_pair] == a0).any() or not (dataset.t[in_pair] == a1).any():
        raise SingleArmError(f"dataset has units in only one of the arms {arms}")
    return y, in_pair, treated


def _single_fit(dataset, target, arms, method: str, adjust: bool) -> EstimatorOutput:
    y, rows, treated = _prepare(dataset, target, arms)
    cols = [np.ones(len(dataset)), treated]
    labels = ["intercept", "t"]
    if adjust:
        dummies, dl, _ = one_hot(dataset.X[rows], dataset.covariate_names)
        full = np.zeros((len(dataset), dummies.shape[1]))
        full[rows] = dummies
        cols.append(full)
        labels += dl
    design = DesignMatrix(np.column_stack(cols), tuple(labels))
    fit = ols(design.values[rows], y[rows])
    ate = float(fit.coef[1])
    # without interactions f(x, 1) - f(x, 0) is the treatment coefficient for every unit
    return EstimatorOutput(
        method=method,
        ate=ate,
        cate=np.full(len(dataset), ate),
        unit_ids=dataset.unit_ids,
        diagnostics={"cond": fit.cond, "ridge": fit.ridge, "stderr": float(fit.stderr[1]), "n": fit.n, "d": fit.d},
    )


def fit_t_only_ols(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int] = (0, 1)) -> EstimatorOutput:
    """Outcome on ``{1, t}``; the slope is the treated-minus-control mean difference."""
    return _single_fit(dataset, target, arms, "t_only_ols", adjust=False)


def fit_adjusted_ols(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int] = (0, 1)) -> EstimatorOutput:
    """Outcome on ``{1, t, covariate dummies}``; the ATE is the coefficient on ``t``."""
    return _single_fit(dataset, target, arms, "linreg", adjust=True)


def fit_linear_s(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int] = (0, 1)) -> EstimatorOutput:
    """S-learner with a linear base model; shares the adjusted OLS fit, so its CATE is constant."""
    return _single_fit(dataset, target, arms, "linear_s", adjust=True)


def fit_linear_t(dataset: BenchmarkDataset, target: OutcomeTarget, arms: tuple[int, int] = (0, 1)) -> EstimatorOutput:
    """One regression per arm on ``{1, covariate dummies}``; CATE is the prediction gap."""
    a0, a1 = arms
    if a0 == a1 or not (0 <= a0 < dataset.n_arms and 0 <= a1 < dataset.n_arms):
        raise ValidationError(f"invalid arm pair {arms} for {dataset.n_arms} treatment values")
    y = observed_outcome(dataset, target)
    rows = (dataset.t == a0) | (dataset.t == a1)
    dummies, _, _ = one_hot(dataset.X, dataset.covariate_names, _levels(dataset.X[rows]))
    X = np.column_stack([np.ones(len(dataset)), dummies])
    fits = []
    for a in (a0, a1):
        mask = dataset.t == a
        if not mask.any():
            raise EmptyArmError(f"no units with treatment value {a}")
        fits.append(ols(X[mask], y[mask]))
    f0, f1 = fits
    cate = X @ f1.coef - X @ f0.coef
    xbar = X[rows].mean(axis=0)
    se = math.sqrt(max(float(xbar @ f1.cov @ xbar + xbar @ f0.cov @ xbar), 0.0))
    return EstimatorOutput(
        method="linear_t",
        ate=float(cate[rows].mean()),
        cate=cate,
        unit_ids=dataset.unit_ids,
        diagnostics={
            "cond": max(f0.cond, f1.cond),
            "ridge": f0.ridge or f1.ridge,
            "stderr": se,
            "n": [f0.n, f1.n],
            "d": X.shape[1],
        },
    )


def _levels(X: np.ndarray) -> list[np.ndarray]:
    return [np.unique(X[:, j]) for j in range(X.shape[1])]


Estimator = Callable[[BenchmarkDataset, OutcomeTarget, tuple[int, int]], EstimatorOutput]

ESTIMATORS: dict[str, Estimator] = {
    "t_only_ols": fit_t_only_ols,
    "linreg": fit_adjusted_ols,
    "linear_s": fit_linear_s,
    "linear_t": fit_linear_t,
}
ALIASES = {"adjusted_ols": "linreg", "ols": "t_only_ols", "s_learner": "linear_s", "t_learner": "linear_t"}


def get_estimator(name: str) -> Estimator:
    key = ALIASES.get(name, name)
    if key not in ESTIMATORS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(ESTIMATORS)}")
    return ESTIMATORS[key]


def estimate(
    dataset: BenchmarkDataset,
    method: str,
    target: OutcomeTarget,
    arms: tuple[int, int] = (0, 1),
) -> EstimatorOutput:
    return get_estimator(method)(dataset, target, arms)
