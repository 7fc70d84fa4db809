"""ROC analysis, bootstrap intervals, Youden calibration and dataset scorers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .dgp import Dataset
from .metrics import SciComponents, Weights

DEFAULT_BOOTSTRAP = 1000


class SingleClassError(ValueError):
    """ROC quantities need both labels present."""


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    score_name: str = "score"

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if scores.shape != labels.shape or scores.ndim != 1:
            raise ValueError("scores and labels must be 1-d arrays of equal length")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.scores.size

    def require_both_classes(self) -> None:
        n1 = int(self.labels.sum())
        if n1 == 0 or n1 == self.labels.size:
            raise SingleClassError(f"'{self.score_name}' has a single class")


@dataclass(frozen=True)
class RocResult:
    auc: float
    ci_low: float
    ci_high: float
    tau_star: float
    tpr: float
    fpr: float
    n_boot: int = 0

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "tau_star": self.tau_star,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "n_boot": self.n_boot,
        }


def _auc(scores: np.ndarray, labels: np.ndarray) -> float:
    ranks = rankdata(scores)
    n1 = labels.sum()
    n0 = labels.size - n1
    return float((ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auc(s: ScoredSet) -> float:
    """Mann-Whitney AUC with ties counted one half."""
    s.require_both_classes()
    return _auc(s.scores, s.labels)


def roc_curve(s: ScoredSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rates for the rule ``score > threshold``, thresholds descending.

    The first point is (0, 0) at threshold = max score; tied scores move
    together, so the trapezoidal area equals :func:`auc`.
    """
    s.require_both_classes()
    order = np.argsort(-s.scores, kind="mergesort")
    sc = s.scores[order]
    y = s.labels[order]
    last_of_group = np.r_[sc[1:] != sc[:-1], True]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(1 - y)[last_of_group]
    n1, n0 = y.sum(), y.size - y.sum()
    uniq = sc[last_of_group]
    # threshold t_k classifies everything strictly above it as positive
    thresholds = np.r_[uniq[0], uniq[1:], -np.inf]
    tpr = np.r_[0.0, tp / n1]
    fpr = np.r_[0.0, fp / n0]
    return fpr, tpr, thresholds


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def youden_threshold(s: ScoredSet) -> tuple[float, float, float]:
    """Threshold maximizing TPR - FPR for ``score > tau``.

    The classification changes only at observed scores, so the returned
    tau is the midpoint of the gap that realizes the optimum. Ties in J go
    to the larger threshold.
    """
    fpr, tpr, _ = roc_curve(s)
    uniq = np.unique(s.scores)[::-1]  # descending
    j = tpr - fpr
    best = float(j.max())
    # roc index k >= 1 means "predict positive for the k highest unique scores"
    k = int(np.flatnonzero(j >= best - 1e-15)[0])
    if k == 0:
        tau = float(uniq[0])
    elif k >= uniq.size:
        tau = float(uniq[-1]) - 1.0
    else:
        tau = 0.5 * float(uniq[k - 1] + uniq[k])
    return tau, float(tpr[k]), float(fpr[k])


def rates_at(s: ScoredSet, tau: float) -> tuple[float, float]:
    pos = s.scores[s.labels == 1]
    neg = s.scores[s.labels == 0]
    return float(np.mean(pos > tau)), float(np.mean(neg > tau))


def bootstrap_ci(
    s: ScoredSet,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile interval of AUC over label-stratified resamples.

    Resample b draws from its own stream ``(seed, b)``.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be >= 100")
    s.require_both_classes()
    pos = np.flatnonzero(s.labels == 1)
    neg = np.flatnonzero(s.labels == 0)
    labels = np.r_[np.ones(pos.size, dtype=int), np.zeros(neg.size, dtype=int)]
    stats = np.empty(n_boot)
    for b in range(n_boot):
        rng = np.random.default_rng([seed, b])
        idx = np.r_[rng.choice(pos, pos.size), rng.choice(neg, neg.size)]
        stats[b] = _auc(s.scores[idx], labels)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return float(lo), float(hi)


def evaluate(s: ScoredSet, n_boot: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> RocResult:
    point = auc(s)
    if n_boot:
        lo, hi = bootstrap_ci(s, n_boot, seed)
    else:
        lo = hi = math.nan
    tau, tpr, fpr = youden_threshold(s)
    return RocResult(point, lo, hi, tau, tpr, fpr, n_boot)


# ---------------------------------------------------------------------------
# scorers


@dataclass
class ComponentTable:
    """Per-path components for a dataset, computed once and reused by scorers."""

    dgp: list[str]
    labels: np.ndarray
    pr: np.ndarray
    ts: np.ndarray
    hhi: np.ndarray
    sci: np.ndarray
    no_trade: np.ndarray

    @classmethod
    def from_components(cls, dgp: list[str], labels, comps: list[SciComponents]) -> "ComponentTable":
        return cls(
            dgp=list(dgp),
            labels=np.asarray(labels, dtype=int),
            pr=np.array([c.pr for c in comps]),
            ts=np.array([c.ts for c in comps]),
            hhi=np.array([c.hhi_flow for c in comps]),
            sci=np.array([c.sci for c in comps]),
            no_trade=np.array([c.no_trade for c in comps]),
        )

    @classmethod
    def from_dataset(cls, data: Dataset, window_bins: Optional[int] = None) -> "ComponentTable":
        comps = [p.components(window_bins) for p in data.paths]
        return cls.from_components([p.dgp_name for p in data.paths], data.labels(), comps)

    def __len__(self) -> int:
        return self.sci.size

    def factors(self) -> np.ndarray:
        """(n, 3) matrix of (PR, 1 - TS, 1 - HHI); no-trade rows are zero."""
        f = np.column_stack([self.pr, 1.0 - self.ts, 1.0 - self.hhi])
        f[self.no_trade] = 0.0
        return f

    def mask(self, names) -> np.ndarray:
        keep = set(names)
        return np.array([d in keep for d in self.dgp])

    def select(self, names) -> "ComponentTable":
        m = self.mask(names)
        return ComponentTable(
            [d for d, k in zip(self.dgp, m) if k],
            self.labels[m],
            self.pr[m],
            self.ts[m],
            self.hhi[m],
            self.sci[m],
            self.no_trade[m],
        )


def _table(data) -> ComponentTable:
    return data if isinstance(data, ComponentTable) else ComponentTable.from_dataset(data)


def score_sci(data, weights: Optional[Weights] = None) -> ScoredSet:
    t = _table(data)
    if weights is None:
        return ScoredSet(t.sci.copy(), t.labels, "sci")
    f = t.factors()
    a = np.array(weights.as_tuple())
    return ScoredSet(np.prod(f**a, axis=1), t.labels, "sci_weighted")


def score_additive(data) -> ScoredSet:
    t = _table(data)
    return ScoredSet(t.factors().mean(axis=1), t.labels, "additive")


COMPONENTS = {"pr": 0, "one_minus_ts": 1, "one_minus_hhi": 2}


def score_component(data, which: str) -> ScoredSet:
    if which not in COMPONENTS:
        raise ValueError(f"unknown component '{which}' (use one of {sorted(COMPONENTS)})")
    t = _table(data)
    return ScoredSet(t.factors()[:, COMPONENTS[which]], t.labels, which)
