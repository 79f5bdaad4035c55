"""Regressors from frozen feature vectors to target-space coordinates."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datasets import FoldSchedule
from .errors import DataError, ValidationError

BETA_GRID = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)
RIDGE_JITTER = 1e-8


@dataclass
class RegressionProblem:
    """Aligned features ``X`` (m, p), targets ``Y`` (m, dim) and per-row folds."""

    X: np.ndarray
    Y: np.ndarray
    folds: Optional[np.ndarray] = None
    ids: Optional[List[str]] = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValidationError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if self.folds is not None:
            self.folds = np.asarray(self.folds, dtype=np.int64)
            if self.folds.shape != (self.X.shape[0],):
                raise ValidationError("one fold label per row is required")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    def rows(self, folds: Sequence[int]) -> "RegressionProblem":
        if self.folds is None:
            raise DataError("problem has no fold labels")
        mask = np.isin(self.folds, list(folds))
        return RegressionProblem(self.X[mask], self.Y[mask], self.folds[mask],
                                 None if self.ids is None else [i for i, k in zip(self.ids, mask) if k])


@dataclass(frozen=True)
class LinearModel:
    """Affine predictor ``X @ weights + intercept``."""

    weights: np.ndarray
    intercept: np.ndarray
    kind: str = "linear"
    beta: Optional[float] = None
    feature_mean: Optional[np.ndarray] = None
    feature_scale: Optional[np.ndarray] = None

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.shape[0]:
            raise ValidationError(f"model expects {self.weights.shape[0]} features, got {X.shape[1]}")
        return X @ self.weights + self.intercept

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> dict:
        out = {"kind": self.kind, "beta": self.beta, "weights": self.weights.tolist(),
               "intercept": self.intercept.tolist()}
        if self.feature_mean is not None:
            out["feature_mean"] = self.feature_mean.tolist()
            out["feature_scale"] = self.feature_scale.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "LinearModel":
        opt = lambda k: None if obj.get(k) is None else np.asarray(obj[k], dtype=np.float64)
        w = np.asarray(obj["weights"], dtype=np.float64)
        return cls(weights=w.reshape(len(w), -1), intercept=np.asarray(obj["intercept"], dtype=np.float64),
                   kind=obj.get("kind", "linear"), beta=obj.get("beta"),
                   feature_mean=opt("feature_mean"), feature_scale=opt("feature_scale"))


LassoModel = LinearModel


def save_model(path, model: LinearModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_model(path) -> LinearModel:
    with open(path, encoding="utf-8") as fh:
        return LinearModel.from_json(json.load(fh))


def zero_baseline(dim: int, n_features: int = 0) -> LinearModel:
    """Predicts the origin for every input."""
    return LinearModel(np.zeros((n_features, dim)), np.zeros(dim), kind="zero")


def _require_rows(problem: RegressionProblem) -> None:
    if problem.m < 1:
        raise DataError("regression problem has no rows")


def fit_linear(problem: RegressionProblem) -> LinearModel:
    """Least squares with intercept via centred normal equations.

    A ridge of ``1e-8`` on the Gram diagonal keeps rank-deficient problems
    solvable.
    """
    _require_rows(problem)
    X, Y = problem.X, problem.Y
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - x_mean, Y - y_mean
    gram = Xc.T @ Xc
    gram[np.diag_indices_from(gram)] += RIDGE_JITTER
    w = np.linalg.solve(gram, Xc.T @ Yc)
    return LinearModel(w, y_mean - x_mean @ w, kind="linear")


@dataclass
class LassoTrace:
    """Objective values after every sweep, per output dimension."""

    objectives: List[List[float]] = field(default_factory=list)
    sweeps: List[int] = field(default_factory=list)


def lasso_objective(Z: np.ndarray, y: np.ndarray, w: np.ndarray, beta: float) -> float:
    """``(1/2m)||y - Zw||^2 + beta * ||w||_1`` for centred ``Z`` and ``y``."""
    r = y - Z @ w
    return float(r @ r) / (2 * len(y)) + beta * float(np.abs(w).sum())


def _soft_threshold(v: float, t: float) -> float:
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def _coordinate_descent(Z: np.ndarray, y: np.ndarray, beta: float, tol: float, max_sweeps: int):
    """Lasso on centred, unit-variance columns using the Gram matrix."""
    m, p = Z.shape
    gram = Z.T @ Z / m
    corr = Z.T @ y / m
    diag = np.diag(gram).copy()
    w = np.zeros(p)
    objectives = [lasso_objective(Z, y, w, beta)]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            # partial residual correlation excluding coordinate j
            rho = corr[j] - gram[j] @ w + diag[j] * w[j]
            new = _soft_threshold(rho, beta) / diag[j]
            change = abs(new - w[j])
            if change:
                w[j] = new
                max_change = max(max_change, change)
        obj = lasso_objective(Z, y, w, beta)
        if obj > objectives[-1] + 1e-12 * max(1.0, abs(objectives[-1])):
            raise ArithmeticError(f"lasso objective increased in sweep {sweeps}")
        objectives.append(obj)
        if max_change < tol:
            break
    return w, objectives, sweeps


def standardize(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Column means, standard deviations, kept-column mask and the standardized matrix."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    Z = (X[:, keep] - mean[keep]) / scale[keep]
    return mean, scale, keep, Z


def fit_lasso(problem: RegressionProblem, beta: float, tol: float = 1e-8, max_sweeps: int = 10_000,
              trace: Optional[LassoTrace] = None) -> LinearModel:
    """L1-penalised least squares per output dimension.

    Features are standardized internally (constant columns get zero weight)
    and the coefficients are mapped back to the original feature scale.  The
    intercept is not penalised, so a very large ``beta`` predicts the
    training means.
    """
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    _require_rows(problem)
    X, Y = problem.X, problem.Y
    mean, scale, keep, Z = standardize(X)
    y_mean = Y.mean(axis=0)
    W = np.zeros((X.shape[1], Y.shape[1]))
    for k in range(Y.shape[1]):
        if Z.shape[1] == 0:
            continue
        w, objectives, sweeps = _coordinate_descent(Z, Y[:, k] - y_mean[k], beta, tol, max_sweeps)
        W[keep, k] = w / scale[keep]
        if trace is not None:
            trace.objectives.append(objectives)
            trace.sweeps.append(sweeps)
    intercept = y_mean - mean @ W
    safe_scale = np.where(keep, scale, 1.0)
    return LinearModel(W, intercept, kind="lasso", beta=float(beta), feature_mean=mean, feature_scale=safe_scale)


def kkt_residual(problem: RegressionProblem, model: LinearModel) -> float:
    """Largest violation of the lasso subgradient conditions, in standardized units."""
    mean, scale, keep, Z = standardize(problem.X)
    worst = 0.0
    for k in range(problem.Y.shape[1]):
        w = model.weights[keep, k] * scale[keep]
        y = problem.Y[:, k] - problem.Y[:, k].mean()
        grad = Z.T @ (y - Z @ w) / problem.m
        nz = w != 0
        worst = max(worst,
                    float(np.max(np.abs(grad[nz] - model.beta * np.sign(w[nz])), initial=0.0)),
                    float(np.max(np.abs(grad[~nz]) - model.beta, initial=0.0)))
    return worst


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2))


@dataclass
class BetaSelection:
    best_beta: float
    validation_mse: Dict[float, float]
    test_mse: List[float]
    models: List[LinearModel]


def select_beta(problem, grid: Sequence[float] = BETA_GRID, schedule: Optional[FoldSchedule] = None) -> BetaSelection:
    """Pick the beta with the lowest mean validation MSE across rotations.

    ``problem`` is one :class:`RegressionProblem` or a list with one problem
    per rotation (features from a network trained for that rotation).
    Ties go to the smaller beta.  Test MSE and fitted models are reported
    for the selected beta only.
    """
    grid = sorted(float(b) for b in grid)
    if not grid:
        raise ValidationError("beta grid is empty")
    schedule = schedule or FoldSchedule.standard(5)
    rotations = schedule.rotations
    problems = problem if isinstance(problem, (list, tuple)) else [problem] * len(rotations)
    if len(problems) != len(rotations):
        raise ValidationError(f"{len(problems)} problems for {len(rotations)} rotations")
    scores = {}
    for beta in grid:
        errs = []
        for prob, rot in zip(problems, rotations):
            train = prob.rows(rot.train)
            check_training_rows(train, rot.train)
            val = prob.rows([rot.validation])
            model = fit_lasso(train, beta)
            errs.append(mse(model.predict(val.X), val.Y))
        scores[beta] = float(np.mean(errs))
    best = min(grid, key=lambda b: (scores[b], b))
    models, tests = [], []
    for prob, rot in zip(problems, rotations):
        model = fit_lasso(prob.rows(rot.train), best)
        test = prob.rows([rot.test])
        models.append(model)
        tests.append(mse(model.predict(test.X), test.Y))
    return BetaSelection(best, scores, tests, models)


def check_training_rows(problem: RegressionProblem, allowed_folds: Sequence[int]) -> None:
    """Guard: a fit may only see rows from its training folds."""
    if problem.folds is not None and not np.isin(problem.folds, list(allowed_folds)).all():
        raise DataError("regression fit received rows outside the training folds")


# -- feature CSV ---------------------------------------------------------

def write_features(path, ids: Sequence[str], X: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"f{j}" for j in range(X.shape[1]))])
        for sid, row in zip(ids, X):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def read_features(path) -> Tuple[List[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise DataError(f"{path}: missing header row")
    return [r[0] for r in rows[1:]], np.array([[float(v) for v in r[1:]] for r in rows[1:]])
