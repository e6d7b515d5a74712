"""L2-regularized logistic regression, baselines, metrics and cross-validation.

The objective is the summed log-loss plus ``||w||^2 / (2C)`` with the intercept
left unpenalized, i.e. the same scaling as liblinear/scikit-learn so fitted
magnitudes are comparable with published tables.
"""

from __future__ import annotations

import datetime as _dt
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateDataError, EmptyDatasetError, UndefinedMetricError
from .features import FEATURE_GROUPS, FEATURE_NAMES


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    users: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be 2-D with one row per label")
        if self.users and len(self.users) != len(self.y):
            raise ValueError("users must align with labels")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return len(self.y)

    def subset(self, rows) -> "Dataset":
        users = [self.users[i] for i in rows] if self.users else []
        return Dataset(self.X[rows], self.y[rows], users)

    def columns(self, cols) -> "Dataset":
        return Dataset(self.X[:, list(cols)], self.y, list(self.users))


@dataclass
class ModelParams:
    intercept: float
    coefficients: np.ndarray
    C: float = 1.0
    feature_names: tuple = FEATURE_NAMES
    converged: bool = True
    n_iter: int = 0
    loss_history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate(([self.intercept], self.coefficients))

    def to_json(self, trained_at: str | None = None) -> str:
        doc = {
            "intercept": float(self.intercept),
            "coefficients": [float(c) for c in self.coefficients],
            "C": float(self.C),
            "feature_names": list(self.feature_names),
            "trained_at": trained_at or trained_at_now(),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        doc = json.loads(text)
        return cls(doc["intercept"], np.array(doc["coefficients"], dtype=float), doc["C"], tuple(doc["feature_names"]))


def trained_at_now() -> str:
    """UTC timestamp, honoring SOURCE_DATE_EPOCH for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
    else:
        moment = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def penalized_loss(theta, X, y, C: float, sample_weight=None) -> float:
    """Summed log-loss plus ``||w||^2 / (2C)``; ``theta[0]`` is the intercept."""
    z = _design(X) @ theta
    # log(1 + e^z) - y z, written to stay finite for large |z|
    per = np.logaddexp(0.0, z) - y * z
    if sample_weight is not None:
        per = per * sample_weight
    return float(per.sum() + theta[1:] @ theta[1:] / (2.0 * C))


def penalized_gradient(theta, X, y, C: float, sample_weight=None) -> np.ndarray:
    A = _design(X)
    r = sigmoid(A @ theta) - y
    if sample_weight is not None:
        r = r * sample_weight
    g = A.T @ r
    g[1:] += theta[1:] / C
    return g


def penalized_hessian(theta, X, y, C: float, sample_weight=None) -> np.ndarray:
    A = _design(X)
    p = sigmoid(A @ theta)
    s = p * (1.0 - p)
    if sample_weight is not None:
        s = s * sample_weight
    H = A.T @ (A * s[:, None])
    H[np.diag_indices_from(H)] += np.r_[0.0, np.full(A.shape[1] - 1, 1.0 / C)]
    return H


def train_logistic(
    data: Dataset,
    C: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 1000,
    positive_weight: float = 1.0,
    feature_names: Sequence[str] | None = None,
) -> ModelParams:
    """Fit by Newton steps with Armijo backtracking, starting from theta = 0.

    Once the expected decrease falls below the loss's float resolution, full
    Newton steps are taken without a line search.  Stops when the gradient's
    max-norm is at most ``tol``, after ``max_iter`` iterations, or when the line
    search stalls; ``converged`` records whether ``tol`` was met.
    """
    X, y = data.X, data.y
    if len(y) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if y.min() == y.max():
        raise DegenerateDataError("training data must contain both classes")
    if C <= 0:
        raise ValueError("C must be positive")
    weight = None if positive_weight == 1.0 else np.where(y == 1, positive_weight, 1.0)

    theta = np.zeros(X.shape[1] + 1)
    loss = penalized_loss(theta, X, y, C, weight)
    history = [loss]
    converged = False
    updates = 0
    for _ in range(max_iter):
        g = penalized_gradient(theta, X, y, C, weight)
        if np.max(np.abs(g)) <= tol:
            converged = True
            break
        H = penalized_hessian(theta, X, y, C, weight)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        decrement = g @ step
        if not np.isfinite(decrement) or decrement <= 0:
            step, decrement = g, g @ g
        if decrement < 1e-10 * max(1.0, abs(loss)):
            # expected decrease is below the loss's float resolution: take the full step
            theta = theta - step
            loss = penalized_loss(theta, X, y, C, weight)
        else:
            t = 1.0
            while t >= 1e-12:
                candidate = theta - t * step
                new_loss = penalized_loss(candidate, X, y, C, weight)
                if new_loss <= loss - 1e-4 * t * decrement:
                    break
                t *= 0.5
            else:
                break
            theta, loss = candidate, new_loss
        updates += 1
        history.append(loss)
    else:
        converged = np.max(np.abs(penalized_gradient(theta, X, y, C, weight))) <= tol
    names = tuple(feature_names) if feature_names is not None else _default_names(X.shape[1])
    return ModelParams(theta[0], theta[1:].copy(), C, names, converged, updates, history)


def _default_names(n: int) -> tuple:
    return FEATURE_NAMES if n == len(FEATURE_NAMES) else tuple(f"x{i + 1}" for i in range(n))


def predict_proba(params: ModelParams, X) -> np.ndarray | float:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return float(sigmoid(np.array([params.intercept + X @ params.coefficients]))[0])
    return sigmoid(params.intercept + X @ params.coefficients)


def predict_class(params: ModelParams, X, cutoff: float = 0.5):
    """1 where the probability reaches ``cutoff`` (boundary counts as positive)."""
    if not 0.0 < cutoff < 1.0:
        raise ValueError("cutoff must lie in (0, 1)")
    p = predict_proba(params, X)
    if isinstance(p, float):
        return int(p >= cutoff)
    return (p >= cutoff).astype(int)


def wald_summary(params: ModelParams, data: Dataset) -> list[tuple[str, float, float, float]]:
    """(name, estimate, standard error, two-sided p-value) from the inverse Hessian."""
    H = penalized_hessian(params.theta, data.X, data.y, params.C)
    cov = np.linalg.pinv(H)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    rows = []
    for name, est, s in zip(("intercept",) + tuple(params.feature_names), params.theta, se):
        p = math.erfc(abs(est / s) / math.sqrt(2.0)) if s > 0 else float("nan")
        rows.append((name, float(est), float(s), p))
    return rows


def mcfadden_r2(params: ModelParams, data: Dataset) -> float:
    y = data.y
    p = np.clip(predict_proba(params, data.X), 1e-15, 1 - 1e-15)
    ll = np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    base = y.mean()
    ll0 = len(y) * (base * math.log(base) + (1 - base) * math.log(1 - base))
    return float(1.0 - ll / ll0)


# --- classifiers sharing one fit/predict surface -----------------------------


class LogisticClassifier:
    name = "logistic"

    def __init__(self, C: float = 1.0, cutoff: float = 0.5, tol: float = 1e-8, max_iter: int = 1000):
        self.C, self.cutoff, self.tol, self.max_iter = C, cutoff, tol, max_iter
        self.params: ModelParams | None = None

    def fit(self, data: Dataset, rng=None):
        self.params = train_logistic(data, self.C, self.tol, self.max_iter)
        return self

    def scores(self, X):
        return predict_proba(self.params, X)

    def predict(self, X):
        return predict_class(self.params, X, self.cutoff)


class NoHiddenBaseline:
    """Baseline 1: always predicts no hidden visit; has no score."""

    name = "baseline_deterministic"

    def fit(self, data: Dataset, rng=None):
        return self

    def scores(self, X):
        return None

    def predict(self, X):
        return np.zeros(len(X), dtype=int)


def baseline_deterministic(x) -> int:
    return 0


def baseline_probabilistic(p: float, seed) -> Callable[[int], np.ndarray]:
    """Sampler emitting 1 with probability ``p``; ``sample(n)`` draws n bits."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def sample(n: int) -> np.ndarray:
        return (rng.random(n) < p).astype(int)

    return sample


class MarginalBaseline:
    """Baseline 2: samples predictions from the training marginal."""

    name = "baseline_probabilistic"

    def __init__(self):
        self.p = None
        self._sampler = None
        self._last = None

    def fit(self, data: Dataset, rng=None):
        self.p = float(data.y.mean())
        self._sampler = baseline_probabilistic(self.p, rng if rng is not None else 0)
        return self

    def predict(self, X):
        self._last = self._sampler(len(X))
        return self._last

    def scores(self, X):
        # the sampled bits are the only ranking this model produces
        return self._last if self._last is not None and len(self._last) == len(X) else self.predict(X)


# --- metrics -------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float | None
    roc_auc: float | None
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("accuracy", "precision", "recall", "f1", "roc_auc")}


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    return tp, fp, tn, fn


def evaluate(y_true, y_pred, y_scores=None) -> Metrics:
    """Positive-class metrics.  Precision is 0 when nothing is predicted
    positive; F1 is None when precision + recall is 0; AUC is None without
    scores or when only one class is present."""
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        raise EmptyDatasetError("cannot evaluate empty predictions")
    if len(y_pred) != len(y_true) or (y_scores is not None and len(y_scores) != len(y_true)):
        raise ValueError("inputs must have equal length")
    tp, fp, tn, fn = confusion(y_true, y_pred)
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else None
    auc = None
    if y_scores is not None:
        try:
            auc = roc_auc(y_true, y_scores)
        except UndefinedMetricError:
            auc = None
    return Metrics((tp + tn) / n, precision, recall, f1, auc, tp, fp, tn, fn)


def average_ranks(values) -> np.ndarray:
    """1-based ranks, ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=float)
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    starts = np.r_[0, boundaries]
    ends = np.r_[boundaries, len(values)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with average ranks for ties."""
    y_true = np.asarray(y_true, dtype=int)
    n_pos = int(y_true.sum())
    n_neg = len(y_true) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes")
    ranks = average_ranks(scores)
    u = ranks[y_true == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --- cross-validation and ablation ----------------------------------------------------


@dataclass
class CVResult:
    folds: list
    mean: dict
    std: dict


def kfold_indices(n: int, k: int, seed) -> list[np.ndarray]:
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"need at least k={k} observations, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def _summarize(folds: Sequence[Metrics]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for key in ("accuracy", "precision", "recall", "f1", "roc_auc"):
        vals = [getattr(m, key) for m in folds if getattr(m, key) is not None]
        mean[key] = float(np.mean(vals)) if vals else None
        std[key] = float(np.std(vals)) if vals else None
    return mean, std


def cross_validate(data: Dataset, k: int, seed, trainer: Callable[[], object]) -> CVResult:
    """k-fold CV; ``trainer()`` returns a fresh classifier with fit/predict/scores.

    Fold assignment depends only on ``seed``; each fold's classifier gets its
    own generator derived from the seed and fold number.
    """
    folds = kfold_indices(len(data), k, seed)
    results = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        model = trainer().fit(data.subset(train_idx), rng=np.random.default_rng([int(seed), i]))
        X_test = data.X[test_idx]
        y_pred = model.predict(X_test)
        results.append(evaluate(data.y[test_idx], y_pred, model.scores(X_test)))
    mean, std = _summarize(results)
    return CVResult(results, mean, std)


def group_combinations(groups: Iterable[str] = ("spatial", "temporal", "personal")) -> list[tuple]:
    groups = tuple(groups)
    combos = []
    for r in range(len(groups), 0, -1):
        combos.extend(itertools.combinations(groups, r))
    return combos


def ablate(data: Dataset, combos: Iterable[Sequence[str]] | None = None, k: int = 10, seed=0, C: float = 1.0,
           cutoff: float = 0.5) -> list[tuple[tuple, float, float | None]]:
    """Cross-validated (accuracy, ROC AUC) of the logistic model per feature-group set."""
    rows = []
    for combo in combos if combos is not None else group_combinations():
        combo = tuple(combo)
        if not combo:
            raise ValueError("feature group set must be non-empty")
        cols = sorted(c for g in combo for c in FEATURE_GROUPS[g])
        res = cross_validate(data.columns(cols), k, seed, lambda: LogisticClassifier(C, cutoff))
        rows.append((combo, res.mean["accuracy"], res.mean["roc_auc"]))
    return rows
