"""Index mathematics: logit transforms, the three components, the baseline,
weighted and time-varying SCI, and the alarm rule.

All functions are pure. Probabilities are never clipped here; clipping is the
job of the simulator and the trade ingest.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import expit

EPS_NO_TRADE = 1e-9
DEFAULT_BIN_MINUTES = 5
SUSTAINED_MINUTES = 60

FlowsLike = Union[Mapping[str, float], Sequence[float], np.ndarray]


class MetricDomainError(ValueError):
    """Input outside the domain of an index formula."""


class InsufficientDataError(ValueError):
    """Not enough observations for the requested statistic."""


class NoTradeError(ValueError):
    """Window carries no price movement, no volume or no trader flow."""


# ---------------------------------------------------------------------------
# transforms


def logit(p):
    """Log-odds of a probability. Accepts scalars or arrays; rejects 0 and 1."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise MetricDomainError("logit requires 0 < p < 1")
    out = np.log(arr / (1.0 - arr))
    return float(out) if out.ndim == 0 else out


def inverse_logit(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise MetricDomainError("inverse_logit requires finite input")
    out = expit(arr)
    return float(out) if out.ndim == 0 else out


def logit_returns(path) -> np.ndarray:
    values = np.asarray(path, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise InsufficientDataError("logit path needs at least 2 points")
    return np.diff(values)


def variance_ratio(path, k: int) -> float:
    """Lo-MacKinlay style ratio on non-overlapping k-period returns.

    Kept as a reference diagnostic: it needs at least two non-overlapping
    k-period returns (len(path) >= 2k + 1), which short rolling windows
    cannot supply.
    """
    values = np.asarray(path, dtype=float)
    if k < 1:
        raise MetricDomainError("k must be >= 1")
    if values.size < 2 * k + 1:
        raise InsufficientDataError(
            f"variance ratio with k={k} needs >= {2 * k + 1} points, got {values.size}"
        )
    one = np.diff(values)
    n_blocks = (values.size - 1) // k
    multi = values[k : n_blocks * k + 1 : k] - values[0 : (n_blocks - 1) * k + 1 : k]
    v1 = np.var(one, ddof=1)
    vk = np.var(multi, ddof=1)
    if v1 == 0.0:
        raise InsufficientDataError("one-period returns have zero variance")
    return float(vk / (k * v1))


# ---------------------------------------------------------------------------
# components


def persistence_ratio(path, t: Optional[int] = None, w: Optional[int] = None) -> float:
    """Net over gross logit movement on the window (t - w, t].

    ``t`` defaults to the last index and ``w`` to the whole path. Raises
    NoTradeError when gross movement falls below EPS_NO_TRADE.
    """
    values = np.asarray(path, dtype=float)
    if t is None:
        t = values.size - 1
    if w is None:
        w = t
    if w < 1:
        raise InsufficientDataError("window needs at least one increment")
    if t - w < 0 or t >= values.size:
        raise InsufficientDataError(f"window ({t - w}, {t}] outside path of length {values.size}")
    seg = values[t - w : t + 1]
    gross = float(np.sum(np.abs(np.diff(seg))))
    if gross < EPS_NO_TRADE:
        raise NoTradeError("gross logit movement below epsilon")
    net = abs(float(seg[-1] - seg[0]))
    # triangle inequality guarantees net <= gross; rounding can overshoot by an ulp
    return min(net / gross, 1.0)


def two_sidedness(buy: float, sell: float) -> float:
    if buy < 0 or sell < 0:
        raise MetricDomainError("volumes must be nonnegative")
    total = buy + sell
    if total <= 0:
        raise NoTradeError("zero volume")
    return 1.0 - abs(buy - sell) / total


def _flow_values(flows: FlowsLike) -> np.ndarray:
    if isinstance(flows, Mapping):
        return np.fromiter(flows.values(), dtype=float, count=len(flows))
    return np.asarray(flows, dtype=float)


def hhi_flow(flows: FlowsLike) -> float:
    """Herfindahl index of absolute per-trader net flow.

    ``flows`` is either a trader -> signed flow mapping or a bare array of
    flows. Zero-flow traders are dropped, so the result lies in [1/N, 1]
    for N traders with nonzero flow.
    """
    mags = np.abs(_flow_values(flows))
    mags = mags[mags > 0]
    total = mags.sum()
    if mags.size == 0 or total <= 0:
        raise NoTradeError("zero trader flow")
    shares = mags / total
    return float(min(np.dot(shares, shares), 1.0))


# ---------------------------------------------------------------------------
# composite


def _check_components(pr: float, ts: float, hhi: float) -> None:
    if not 0.0 <= pr <= 1.0:
        raise MetricDomainError(f"pr={pr} outside [0, 1]")
    if not 0.0 <= ts <= 1.0:
        raise MetricDomainError(f"ts={ts} outside [0, 1]")
    if not 0.0 < hhi <= 1.0:
        raise MetricDomainError(f"hhi={hhi} outside (0, 1]")


def sci(pr: float, ts: float, hhi: float) -> float:
    _check_components(pr, ts, hhi)
    return pr * (1.0 - ts) * (1.0 - hhi)


@dataclass(frozen=True)
class Weights:
    """Cobb-Douglas exponents on (PR, 1 - TS, 1 - HHI)."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha1", "alpha2", "alpha3"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise MetricDomainError(f"{name} must be positive, got {value}")

    @classmethod
    def normalized(cls, alpha1: float, alpha2: float, alpha3: float) -> "Weights":
        """Rescale so the exponents sum to 3."""
        total = alpha1 + alpha2 + alpha3
        if not total > 0:
            raise MetricDomainError("weights must be positive")
        scale = 3.0 / total
        w = cls(alpha1 * scale, alpha2 * scale, alpha3 * scale)
        if abs(w.alpha1 + w.alpha2 + w.alpha3 - 3.0) > 1e-9:
            raise MetricDomainError("normalization failed")
        return w

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha1, self.alpha2, self.alpha3)


BALANCED = Weights(1.0, 1.0, 1.0)
PERSISTENCE_WEIGHTED = Weights(1.5, 1.0, 0.5)
BREADTH_WEIGHTED = Weights(0.5, 1.0, 1.5)


def weighted_sci(pr: float, ts: float, hhi: float, weights: Weights = BALANCED) -> float:
    _check_components(pr, ts, hhi)
    a1, a2, a3 = weights.as_tuple()
    return pr**a1 * (1.0 - ts) ** a2 * (1.0 - hhi) ** a3


@dataclass(frozen=True)
class SciComponents:
    """Component triple plus composite. Undefined components are NaN."""

    pr: float
    ts: float
    hhi_flow: float
    sci: float
    no_trade: bool = False
    reason: str = ""

    def weighted(self, weights: Weights) -> float:
        if self.no_trade:
            return 0.0
        return weighted_sci(self.pr, self.ts, self.hhi_flow, weights)

    def factors(self) -> tuple[float, float, float]:
        return (self.pr, 1.0 - self.ts, 1.0 - self.hhi_flow)

    def as_dict(self) -> dict:
        return {
            "pr": self.pr,
            "ts": self.ts,
            "hhi_flow": self.hhi_flow,
            "sci": self.sci,
            "no_trade": self.no_trade,
            "reason": self.reason,
        }


def _no_trade(reason: str, pr=math.nan, ts=math.nan, hhi=math.nan) -> SciComponents:
    return SciComponents(pr=pr, ts=ts, hhi_flow=hhi, sci=0.0, no_trade=True, reason=reason)


def components_from_window(prices, buy: float, sell: float, flows: FlowsLike) -> SciComponents:
    """SCI over a whole logit window with pre-summed volumes and flows."""
    values = np.asarray(prices, dtype=float)
    gross = float(np.sum(np.abs(np.diff(values))))
    if gross < EPS_NO_TRADE:
        return _no_trade("no price movement")
    pr = min(abs(float(values[-1] - values[0])) / gross, 1.0)
    if buy + sell <= 0:
        return _no_trade("zero volume", pr=pr)
    ts = 1.0 - abs(buy - sell) / (buy + sell)
    try:
        hhi = hhi_flow(flows)
    except NoTradeError:
        return _no_trade("zero trader flow", pr=pr, ts=ts)
    return SciComponents(pr=pr, ts=ts, hhi_flow=hhi, sci=pr * (1.0 - ts) * (1.0 - hhi))


def aggregate_flows(
    flows: Mapping[str, float], clustering: Mapping[str, str]
) -> dict[str, float]:
    """Collapse wallet flows onto clusters.

    A cluster's participation is the sum of its members' absolute flows, so
    merging wallets can only raise the concentration index. Wallets absent
    from ``clustering`` stay on their own.
    """
    out: dict[str, float] = {}
    for wallet, value in flows.items():
        key = clustering.get(wallet, wallet)
        out[key] = out.get(key, 0.0) + abs(value)
    return out


def compute_sci_for_shock(
    prices,
    volumes: Sequence[tuple[float, float]],
    flows: FlowsLike,
    shock_time: int = 0,
    window: Optional[int] = None,
    clustering: Optional[Mapping[str, str]] = None,
) -> SciComponents:
    """Score one shock.

    ``prices`` is a logit path; ``volumes[b]`` holds (buy, sell) for the bin
    between price indices b and b + 1; ``flows`` are trader net flows over the
    window. The window covers price indices [shock_time, shock_time + window].
    """
    values = np.asarray(prices, dtype=float)
    if window is None:
        window = values.size - 1 - shock_time
    if window < 1:
        raise InsufficientDataError("window must cover at least one bin")
    end = shock_time + window
    if shock_time < 0 or end >= values.size or end > len(volumes):
        raise InsufficientDataError(
            f"window [{shock_time}, {end}] outside data ({values.size} prices, {len(volumes)} bins)"
        )
    vol = np.asarray(volumes[shock_time:end], dtype=float).reshape(-1, 2)
    if clustering is not None:
        if not isinstance(flows, Mapping):
            raise TypeError("clustering needs flows keyed by wallet id")
        flows = aggregate_flows(flows, clustering)
    buy, sell = vol.sum(axis=0)
    return components_from_window(values[shock_time : end + 1], float(buy), float(sell), flows)


def rolling_sci(
    prices,
    volumes: Sequence[tuple[float, float]],
    flows_by_bin: Sequence[FlowsLike],
    w: int,
) -> list[Optional[SciComponents]]:
    """Time-varying SCI on trailing windows (t - w, t].

    Entry t is None until a full window exists (t < w). Flows for a window
    are summed trader-wise over its bins; array inputs must share a trader
    order across bins.
    """
    values = np.asarray(prices, dtype=float)
    if w < 1:
        raise InsufficientDataError("rolling window needs w >= 1 increments (w + 1 >= 2 prices)")
    n = values.size
    if len(volumes) < n - 1 or len(flows_by_bin) < n - 1:
        raise InsufficientDataError("volumes and flows must cover every bin")
    vol = np.asarray(volumes[: n - 1], dtype=float).reshape(-1, 2)
    mapping_input = n > 1 and isinstance(flows_by_bin[0], Mapping)
    out: list[Optional[SciComponents]] = [None] * n
    for t in range(w, n):
        lo = t - w
        buy, sell = vol[lo:t].sum(axis=0)
        if mapping_input:
            summed: dict[str, float] = {}
            for b in range(lo, t):
                for k, v in flows_by_bin[b].items():
                    summed[k] = summed.get(k, 0.0) + v
            window_flows: FlowsLike = summed
        else:
            window_flows = np.sum(np.asarray(flows_by_bin[lo:t], dtype=float), axis=0)
        out[t] = components_from_window(values[lo : t + 1], float(buy), float(sell), window_flows)
    return out


# ---------------------------------------------------------------------------
# alarm rule


@dataclass(frozen=True)
class AlarmSummary:
    onset: Optional[int]
    duration_minutes: float
    decay_minutes: Optional[float]
    peak_index: Optional[int]
    peak_value: float
    sustained: bool

    def as_dict(self) -> dict:
        return {
            "onset": self.onset,
            "duration_minutes": self.duration_minutes,
            "decay_minutes": self.decay_minutes,
            "peak_index": self.peak_index,
            "peak_value": self.peak_value,
            "sustained": self.sustained,
        }


def alarm_summary(
    series: Sequence[Optional[float]],
    tau: float,
    bin_minutes: float = DEFAULT_BIN_MINUTES,
    sustained_minutes: float = SUSTAINED_MINUTES,
) -> AlarmSummary:
    """Summarize the indicator SCI(t) > tau.

    Undefined entries (None or NaN) count as below threshold. Decay time runs
    from the first bin holding the series maximum to the first later bin at
    or below tau; it is None when there is no alarm or the series never falls
    back.
    """
    if len(series) == 0:
        raise InsufficientDataError("empty series")
    vals = np.array([math.nan if v is None else float(v) for v in series])
    defined = ~np.isnan(vals)
    above = defined & (vals > tau)
    duration = float(above.sum()) * bin_minutes
    if not above.any():
        peak = int(np.nanargmax(vals)) if defined.any() else None
        return AlarmSummary(
            onset=None,
            duration_minutes=0.0,
            decay_minutes=None,
            peak_index=peak,
            peak_value=float(vals[peak]) if peak is not None else math.nan,
            sustained=False,
        )
    onset = int(np.argmax(above))
    peak = int(np.nanargmax(vals))
    decay = None
    for j in range(peak + 1, len(vals)):
        if not above[j]:
            decay = (j - peak) * bin_minutes
            break
    return AlarmSummary(
        onset=onset,
        duration_minutes=duration,
        decay_minutes=decay,
        peak_index=peak,
        peak_value=float(vals[peak]),
        sustained=duration > sustained_minutes,
    )


# ---------------------------------------------------------------------------
# regime reading


def regime_verdict(components: SciComponents, tau: float, ts_disagreement: float = 0.5) -> str:
    """Coarse regime label used in the illustrative decomposition.

    Above-threshold moves read as informed updating; below threshold, high
    two-sidedness reads as disagreement, anything else as liquidity pressure.
    """
    if components.sci > tau:
        return "informed updating"
    if not math.isnan(components.ts) and components.ts >= ts_disagreement:
        return "disagreement"
    return "liquidity pressure"
