"""Trade tapes: parsing, tick-rule side classification, 5-minute binning and
per-wallet post-shock flows.

Trade file (CSV with header, ``#`` comment lines allowed)::

    ts_ms,price,size,side,wallet

``side`` is optional (B / S / blank). ``wallet`` may be blank for volume
that cannot be attributed to a trader; such trades count toward buy/sell
volume but not toward trader flows. Bins are half-open [start, end) in UTC
epoch milliseconds.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import Optional, TextIO, Union

import numpy as np

from .dgp import PRICE_CLIP, SimulatedPath
from .metrics import SciComponents, compute_sci_for_shock, logit

log = logging.getLogger(__name__)

BUY, SELL, UNKNOWN = "buy", "sell", "unknown"
_SIDE_CODES = {"b": BUY, "buy": BUY, "s": SELL, "sell": SELL, "": UNKNOWN, "u": UNKNOWN, "unknown": UNKNOWN}
MAX_MALFORMED_SHARE = 0.01
MS_PER_MINUTE = 60_000
DEFAULT_TRADE_BOOTSTRAP = 500


class IngestError(ValueError):
    def __init__(self, message: str, source: str = "", line: Optional[int] = None):
        where = source + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}" if where else message)
        self.source = source
        self.line = line


@dataclass(frozen=True, slots=True)
class TradeRecord:
    ts_ms: int
    price: float
    size: float
    side: str = UNKNOWN
    wallet: str = ""


@dataclass(frozen=True)
class ShockSpec:
    shock_time: int
    window_minutes: int = 240
    bin_minutes: int = 5

    def __post_init__(self):
        if self.window_minutes <= 0 or self.bin_minutes <= 0:
            raise ValueError("window and bin lengths must be positive")
        if self.window_minutes % self.bin_minutes:
            raise ValueError("window_minutes must be a multiple of bin_minutes")

    @property
    def n_bins(self) -> int:
        return self.window_minutes // self.bin_minutes

    @property
    def bin_ms(self) -> int:
        return self.bin_minutes * MS_PER_MINUTE

    @property
    def end(self) -> int:
        return self.shock_time + self.window_minutes * MS_PER_MINUTE

    def bin_of(self, ts_ms: int) -> Optional[int]:
        if ts_ms < self.shock_time or ts_ms >= self.end:
            return None
        return (ts_ms - self.shock_time) // self.bin_ms


@dataclass
class ParseDiagnostics:
    malformed: list[tuple[int, str]] = field(default_factory=list)
    n_rows: int = 0
    n_clipped: int = 0
    reordered: bool = False
    has_side_column: bool = False


def _open(source) -> tuple[TextIO, str, bool]:
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, newline="", encoding="utf-8"), str(source), True
        except OSError as exc:
            raise IngestError(f"cannot read trade file ({exc.strerror})", str(source)) from exc
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return source, getattr(source, "name", "<stream>"), False
    return io.StringIO("".join(line if line.endswith("\n") else line + "\n" for line in source)), "<lines>", False


def parse_trades(source, diagnostics: Optional[ParseDiagnostics] = None) -> list[TradeRecord]:
    """Read a trade CSV into time-ordered records.

    Malformed rows are skipped and logged with line numbers; more than 1% of
    malformed rows is a hard error. Prices outside [0.01, 0.99] are clipped
    and counted.
    """
    diag = diagnostics if diagnostics is not None else ParseDiagnostics()
    fh, name, owned = _open(source)
    try:
        rows = [(i, line) for i, line in enumerate(fh, start=1)]
    finally:
        if owned:
            fh.close()
    rows = [(i, line) for i, line in rows if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        return []
    header_line, header = rows[0]
    cols = [c.strip().lower() for c in next(csv.reader([header]))]
    for required in ("ts_ms", "price", "size", "wallet"):
        if required not in cols:
            raise IngestError(f"missing column '{required}' in header", name, header_line)
    idx = {c: cols.index(c) for c in cols}
    diag.has_side_column = "side" in idx
    trades = []
    lo, hi = PRICE_CLIP
    for lineno, line in rows[1:]:
        diag.n_rows += 1
        fields = next(csv.reader([line]))
        try:
            if len(fields) != len(cols):
                raise ValueError(f"expected {len(cols)} fields, got {len(fields)}")
            ts = int(fields[idx["ts_ms"]])
            price = float(fields[idx["price"]])
            size = float(fields[idx["size"]])
            if not (0.0 <= price <= 1.0):
                raise ValueError(f"price {price} outside [0, 1]")
            if not (size > 0 and math.isfinite(size)):
                raise ValueError(f"size {size} must be positive")
            side = UNKNOWN
            if diag.has_side_column:
                code = fields[idx["side"]].strip().lower()
                if code not in _SIDE_CODES:
                    raise ValueError(f"unknown side '{fields[idx['side']]}'")
                side = _SIDE_CODES[code]
            wallet = fields[idx["wallet"]].strip()
        except ValueError as exc:
            diag.malformed.append((lineno, str(exc)))
            log.warning("%s:%d: skipping malformed row (%s)", name, lineno, exc)
            continue
        if price < lo or price > hi:
            diag.n_clipped += 1
            price = min(max(price, lo), hi)
        trades.append(TradeRecord(ts, price, size, side, wallet))
    if diag.n_rows and len(diag.malformed) > MAX_MALFORMED_SHARE * diag.n_rows:
        first = ", ".join(f"line {n}: {why}" for n, why in diag.malformed[:5])
        raise IngestError(
            f"{len(diag.malformed)} of {diag.n_rows} rows malformed (> 1%); first: {first}", name
        )
    if diag.n_clipped:
        log.warning("%s: clipped %d prices to [%g, %g]", name, diag.n_clipped, lo, hi)
    if any(trades[i].ts_ms > trades[i + 1].ts_ms for i in range(len(trades) - 1)):
        diag.reordered = True
        log.warning("%s: timestamps out of order; stable-sorted", name)
        trades.sort(key=lambda t: t.ts_ms)
    if not diag.has_side_column:
        trades = tick_rule_classify(trades)
    return trades


def tick_rule_classify(trades: Sequence[TradeRecord]) -> list[TradeRecord]:
    """Fill unknown sides: uptick against the last differing price is a buy,
    downtick a sell. Trades before the first price change stay unknown.
    Sides already present are kept."""
    out = []
    last_price: Optional[float] = None
    last_diff_sign = 0
    for t in trades:
        if last_price is not None and t.price != last_price:
            last_diff_sign = 1 if t.price > last_price else -1
        if t.side == UNKNOWN and last_diff_sign != 0:
            t = replace(t, side=BUY if last_diff_sign > 0 else SELL)
        out.append(t)
        last_price = t.price
    return out


def _in_window(trades: Iterable[TradeRecord], shock: ShockSpec):
    for t in trades:
        b = shock.bin_of(t.ts_ms)
        if b is not None:
            yield b, t


def bin_series(trades: Sequence[TradeRecord], shock: ShockSpec) -> tuple[np.ndarray, np.ndarray]:
    """Logit price path (n_bins + 1 points) and per-bin (buy, sell) volumes.

    Point 0 is the last trade strictly before the shock (the first in-window
    trade if none); point b + 1 is the last trade in bin b, forward-filled
    through empty bins.
    """
    n = shock.n_bins
    last = [None] * n
    volumes = np.zeros((n, 2))
    anchor = None
    any_in = False
    for t in trades:
        if t.ts_ms < shock.shock_time:
            anchor = t.price
            continue
        b = shock.bin_of(t.ts_ms)
        if b is None:
            continue
        if not any_in and anchor is None:
            anchor = t.price
        any_in = True
        last[b] = t.price
        if t.side == BUY:
            volumes[b, 0] += t.size
        elif t.side == SELL:
            volumes[b, 1] += t.size
    if not any_in:
        raise IngestError("no trades inside the shock window")
    prices = np.empty(n + 1)
    prices[0] = anchor
    for b in range(n):
        prices[b + 1] = last[b] if last[b] is not None else prices[b]
    return logit(np.clip(prices, *PRICE_CLIP)), volumes


def trader_flows(trades: Sequence[TradeRecord], shock: ShockSpec) -> dict[str, float]:
    """Signed net size per wallet over the window; unknown sides and blank wallets skipped."""
    flows: dict[str, float] = {}
    for _, t in _in_window(trades, shock):
        if not t.wallet or t.side == UNKNOWN:
            continue
        flows[t.wallet] = flows.get(t.wallet, 0.0) + (t.size if t.side == BUY else -t.size)
    return flows


def flows_by_bin(trades: Sequence[TradeRecord], shock: ShockSpec) -> list[dict[str, float]]:
    out: list[dict[str, float]] = [{} for _ in range(shock.n_bins)]
    for b, t in _in_window(trades, shock):
        if not t.wallet or t.side == UNKNOWN:
            continue
        out[b][t.wallet] = out[b].get(t.wallet, 0.0) + (t.size if t.side == BUY else -t.size)
    return out


def sci_from_trades(
    trades: Sequence[TradeRecord],
    shock: ShockSpec,
    clustering=None,
) -> SciComponents:
    """Full tape -> SCI pipeline. ``clustering`` is a ClusterMap or wallet -> cluster mapping."""
    prices, volumes = bin_series(trades, shock)
    flows = trader_flows(trades, shock)
    if clustering is not None and hasattr(clustering, "apply"):
        flows = clustering.apply(flows)
        clustering = None
    return compute_sci_for_shock(prices, volumes, flows, 0, shock.n_bins, clustering)


def trade_bootstrap(
    trades: Sequence[TradeRecord],
    shock: ShockSpec,
    n_boot: int = DEFAULT_TRADE_BOOTSTRAP,
    seed: int = 0,
    clustering=None,
    level: float = 0.95,
) -> dict:
    """Percentile CI of SCI from resampling in-window trades with replacement.

    Pre-shock trades are kept as-is so the anchor price is unchanged.
    """
    before = [t for t in trades if t.ts_ms < shock.shock_time]
    inside = [t for _, t in _in_window(trades, shock)]
    if not inside:
        raise IngestError("no trades inside the shock window")
    values = np.empty(n_boot)
    for b in range(n_boot):
        rng = np.random.default_rng([seed, b])
        pick = np.sort(rng.integers(0, len(inside), len(inside)))
        sample = before + [inside[i] for i in pick]
        values[b] = sci_from_trades(sample, shock, clustering).sci
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return {"n_boot": n_boot, "ci_low": float(lo), "ci_high": float(hi), "mean": float(values.mean())}


# ---------------------------------------------------------------------------
# synthetic tapes


def tape_from_path(
    path: SimulatedPath, shock_time: int = 0, bin_minutes: int = 5
) -> list[TradeRecord]:
    """Replay a simulated path as a trade tape that re-ingests to the same SCI.

    Each trader trades once per bin, in proportion to a common per-bin
    schedule, with net flow equal to a common multiple of its simulated
    flow; the concentration index is scale-free so the multiple is
    immaterial. Anonymous (blank-wallet) trades top up bin buy and sell
    volume to the simulated values. Every trade in bin b prints at the
    path's price at the end of that bin.
    """
    bin_ms = bin_minutes * MS_PER_MINUTE
    flows = path.flows
    pos = flows[flows > 0].sum()
    neg = -flows[flows < 0].sum()
    # per-bin capacity m_b so attributed buys and sells never exceed bin volume
    with np.errstate(divide="ignore", invalid="ignore"):
        cap_buy = np.where(pos > 0, path.buy / pos, np.inf)
        cap_sell = np.where(neg > 0, path.sell / neg, np.inf)
    m = np.minimum(cap_buy, cap_sell)
    m = np.where(np.isfinite(m), m, 0.0)
    ids = path.trader_ids()
    trades = [TradeRecord(shock_time - 1, float(path.prices[0]), 1.0, UNKNOWN, "")]
    for b in range(path.n_bins):
        t0 = shock_time + b * bin_ms
        price = float(path.prices[b + 1])
        attributed_buy = attributed_sell = 0.0
        if m[b] > 0:
            for j, f in enumerate(flows):
                size = float(abs(f) * m[b])
                if size <= 0:
                    continue
                side = BUY if f > 0 else SELL
                if side == BUY:
                    attributed_buy += size
                else:
                    attributed_sell += size
                trades.append(TradeRecord(t0, price, size, side, ids[j]))
        rest_buy = path.buy[b] - attributed_buy
        rest_sell = path.sell[b] - attributed_sell
        if rest_buy > 0:
            trades.append(TradeRecord(t0, price, float(rest_buy), BUY, ""))
        if rest_sell > 0:
            trades.append(TradeRecord(t0, price, float(rest_sell), SELL, ""))
    return trades


def write_trades(trades: Iterable[TradeRecord], dest: Union[str, os.PathLike, TextIO]) -> None:
    owned = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", newline="", encoding="utf-8") if owned else dest
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts_ms", "price", "size", "side", "wallet"])
        code = {BUY: "B", SELL: "S", UNKNOWN: ""}
        for t in trades:
            w.writerow([int(t.ts_ms), repr(float(t.price)), repr(float(t.size)), code[t.side], t.wallet])
    finally:
        if owned:
            fh.close()
