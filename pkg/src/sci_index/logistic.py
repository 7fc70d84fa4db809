"""Maximum-likelihood logistic regression by IRLS, with stratified k-fold CV."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .evaluation import ScoredSet

log = logging.getLogger(__name__)

FEATURE_NAMES = ("pr", "one_minus_ts", "one_minus_hhi")
SEPARATION_RIDGE = 1e-6
COEF_CAP = 1e3


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    iterations: int = 0
    ridge: float = 0.0
    separation_warning: bool = False
    feature_names: tuple = FEATURE_NAMES

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coefficients + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def as_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": dict(zip(self.feature_names, self.coefficients.tolist())),
            "iterations": self.iterations,
            "ridge": self.ridge,
            "separation_warning": self.separation_warning,
        }


def _irls(X1: np.ndarray, y: np.ndarray, ridge: float, tol: float, max_iter: int):
    n, p = X1.shape
    beta = np.zeros(p)
    penalty = np.full(p, ridge)
    penalty[0] = 0.0  # intercept is never penalized
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        eta = X1 @ beta
        mu = expit(eta)
        grad = X1.T @ (y - mu) - penalty * beta
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            return beta, it - 1, grad_norm
        wts = mu * (1.0 - mu)
        H = (X1 * wts[:, None]).T @ X1 + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        # step halving keeps the log-likelihood nondecreasing
        ll_old = _loglik(X1, y, beta) - 0.5 * np.dot(penalty * beta, beta)
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            ll_new = _loglik(X1, y, cand) - 0.5 * np.dot(penalty * cand, cand)
            if ll_new >= ll_old - 1e-12 * max(1.0, abs(ll_old)):
                break
            t *= 0.5
        beta = beta + t * step
        if np.max(np.abs(beta)) > COEF_CAP:
            raise _Separated(beta, it)
    raise ConvergenceError(
        "IRLS did not converge",
        {"iterations": max_iter, "grad_norm": grad_norm, "beta": beta.tolist()},
    )


class _Separated(Exception):
    def __init__(self, beta, it):
        self.beta = beta
        self.it = it


def _separates(eta: np.ndarray, y: np.ndarray) -> bool:
    return bool(np.all(eta[y == 1] > 0) and np.all(eta[y == 0] < 0))


def _loglik(X1: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X1 @ beta
    # log(1 + exp(eta)) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(
    X,
    y,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 0.0,
    feature_names: Optional[tuple] = None,
) -> LogisticModel:
    """Fit by Newton/IRLS until the score vector norm drops below ``tol``.

    Perfect separation (coefficients diverging past COEF_CAP) triggers a
    refit with a tiny ridge penalty and sets ``separation_warning``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    X1 = np.column_stack([np.ones(X.shape[0]), X])
    names = feature_names or (FEATURE_NAMES if X.shape[1] == 3 else tuple(f"x{i}" for i in range(X.shape[1])))
    separated = False
    try:
        beta, iters, _ = _irls(X1, y, ridge, tol, max_iter)
        # a hyperplane that splits the classes exactly means no finite MLE;
        # the score can still vanish numerically before COEF_CAP is reached
        if ridge == 0.0 and _separates(X1 @ beta, y):
            raise _Separated(beta, iters)
    except _Separated:
        log.warning("perfect separation detected; refitting with ridge %g", SEPARATION_RIDGE)
        separated = True
        ridge = max(ridge, SEPARATION_RIDGE)
        try:
            beta, iters, _ = _irls(X1, y, ridge, tol, max_iter)
        except _Separated as exc:
            beta, iters = np.clip(exc.beta, -COEF_CAP, COEF_CAP), exc.it
    return LogisticModel(
        coefficients=beta[1:].copy(),
        intercept=float(beta[0]),
        iterations=iters,
        ridge=ridge,
        separation_warning=separated,
        feature_names=names,
    )


def stratified_folds(labels, k: int, seed: int) -> np.ndarray:
    """Fold id per row; within each class rows are shuffled then dealt round-robin."""
    labels = np.asarray(labels, dtype=int)
    folds = np.empty(labels.size, dtype=int)
    rng = np.random.default_rng(seed)
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return folds


@dataclass
class CvResult:
    model: LogisticModel
    out_of_fold: ScoredSet
    fold_models: list = field(default_factory=list)
    folds: Optional[np.ndarray] = None


def fit_logistic_cv(X, y, k_folds: int = 5, seed: int = 0, **fit_kw) -> CvResult:
    """Pooled out-of-fold probabilities plus a final full-data fit."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    folds = stratified_folds(y, k_folds, seed)
    oof = np.empty(y.size)
    models = []
    for f in range(k_folds):
        test = folds == f
        train = ~test
        if len(np.unique(y[train])) < 2 or len(np.unique(y[test])) < 2:
            raise ValueError(f"fold {f} lacks one of the classes")
        m = fit_logistic(X[train], y[train], **fit_kw)
        oof[test] = m.predict_proba(X[test])
        models.append(m)
    final = fit_logistic(X, y, **fit_kw)
    return CvResult(final, ScoredSet(oof, y, "logistic_cv"), models, folds)
