"""Monte Carlo data-generating processes for post-shock paths.

Every path draws from its own PCG64 stream keyed by
``(master_seed, dgp_key, path_index)``, so a dataset does not depend on the
order or the number of threads used to build it. ``dgp_key`` is the
position of the spec's family in :data:`BUILTIN_ORDER`, or a CRC32 of the
family name for user-defined specs. Swept variants keep their base family
and therefore reuse its random numbers.
"""

from __future__ import annotations

import dataclasses
import zlib
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.signal import lfilter

from .metrics import compute_sci_for_shock, logit, SciComponents

N_BINS = 48
P0 = 0.72
PRICE_CLIP = (0.01, 0.99)
DEFAULT_SEED = 20260429


class SpecError(ValueError):
    pass


# ---------------------------------------------------------------------------
# return processes


@dataclass(frozen=True)
class IidNormal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd >= 0:
            raise SpecError("sd must be >= 0")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.sd, n)


@dataclass(frozen=True)
class AR1:
    """r_t = phi * r_{t-1} + e_t with e_t ~ N(mean, sd^2) and r_0 = e_0."""

    phi: float
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd >= 0:
            raise SpecError("sd must be >= 0")
        if not -1 < self.phi < 1:
            raise SpecError("AR coefficient must lie in (-1, 1)")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        innovations = rng.normal(self.mean, self.sd, n)
        return lfilter([1.0], [1.0, -self.phi], innovations)


@dataclass(frozen=True)
class PiecewiseReturns:
    switch_bin: int
    before: "ReturnProcess"
    after: "ReturnProcess"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = min(self.switch_bin, n)
        return np.concatenate([self.before.sample(rng, k), self.after.sample(rng, n - k)])


ReturnProcess = Union[IidNormal, AR1, PiecewiseReturns]


# ---------------------------------------------------------------------------
# volume models (gamma in shape-scale form, mean = shape * scale)


def _positive(*values: float) -> None:
    if not all(v > 0 for v in values):
        raise SpecError("distribution parameters must be strictly positive")


@dataclass(frozen=True)
class TwoGamma:
    buy_shape: float
    buy_scale: float
    sell_shape: float
    sell_scale: float

    def __post_init__(self):
        _positive(self.buy_shape, self.buy_scale, self.sell_shape, self.sell_scale)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        buy = rng.gamma(self.buy_shape, self.buy_scale, n)
        sell = rng.gamma(self.sell_shape, self.sell_scale, n)
        return buy, sell


@dataclass(frozen=True)
class SplitGamma:
    """Total volume Gamma(shape, scale), buy share Beta(a, b)."""

    shape: float
    scale: float
    beta_a: float
    beta_b: float

    def __post_init__(self):
        _positive(self.shape, self.scale, self.beta_a, self.beta_b)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        total = rng.gamma(self.shape, self.scale, n)
        share = rng.beta(self.beta_a, self.beta_b, n)
        return total * share, total * (1.0 - share)


@dataclass(frozen=True)
class PiecewiseVolume:
    switch_bin: int
    before: "VolumeModel"
    after: "VolumeModel"

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        k = min(self.switch_bin, n)
        b1, s1 = self.before.sample(rng, k)
        b2, s2 = self.after.sample(rng, n - k)
        return np.concatenate([b1, b2]), np.concatenate([s1, s2])


VolumeModel = Union[TwoGamma, SplitGamma, PiecewiseVolume]


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class DgpSpec:
    name: str
    returns: ReturnProcess
    volumes: VolumeModel
    trader_range: tuple[int, int]
    dirichlet_alpha: float
    label: int
    family: str = ""
    p0: float = P0
    n_bins: int = N_BINS

    def __post_init__(self):
        if not self.family:
            object.__setattr__(self, "family", self.name)
        lo, hi = self.trader_range
        if not (1 <= lo <= hi):
            raise SpecError(f"{self.name}: trader range must satisfy 1 <= lo <= hi")
        _positive(self.dirichlet_alpha)
        if self.label not in (0, 1):
            raise SpecError(f"{self.name}: label must be 0 or 1")
        if not 0 < self.p0 < 1:
            raise SpecError(f"{self.name}: p0 must lie in (0, 1)")
        for proc in (self.returns, self.volumes):
            if isinstance(proc, (PiecewiseReturns, PiecewiseVolume)) and not (
                0 <= proc.switch_bin <= self.n_bins
            ):
                raise SpecError(f"{self.name}: switch bin outside path")

    @property
    def switch_bin(self) -> Optional[int]:
        if isinstance(self.returns, PiecewiseReturns):
            return self.returns.switch_bin
        return None


_INFORMED_RET = IidNormal(0.0010, 0.0022)
_INFORMED_VOL = TwoGamma(2.5, 5e4, 0.5, 1.5e4)
_LIQUIDITY_VOL = TwoGamma(0.6, 1.5e4, 2.5, 4e4)
_DISAGREEMENT_VOL = SplitGamma(2.0, 4e4, 8.0, 8.0)

# Volumes during the first 30 minutes of manip_then_info. The table only says
# the volume regime "switches at t=6"; the spike-and-reversal phase is a round
# trip and is modelled with the balanced disagreement split. The sell-heavy
# liquidity reading is kept selectable as MANIP_PHASE_LIQUIDITY.
MANIP_PHASE_BALANCED = _DISAGREEMENT_VOL
MANIP_PHASE_LIQUIDITY = _LIQUIDITY_VOL


def manip_then_info_spec(first_phase_volumes: VolumeModel = MANIP_PHASE_BALANCED) -> DgpSpec:
    return DgpSpec(
        name="manip_then_info",
        returns=PiecewiseReturns(6, AR1(-0.5, -0.0005, 0.003), IidNormal(0.0012, 0.0022)),
        volumes=PiecewiseVolume(6, first_phase_volumes, _INFORMED_VOL),
        trader_range=(80, 150),
        dirichlet_alpha=2.5,
        label=1,
    )


def builtin_specs() -> dict[str, DgpSpec]:
    """The eight regimes: three baseline, five adversarial."""
    specs = [
        DgpSpec("informed", _INFORMED_RET, _INFORMED_VOL, (150, 250), 4.0, 1),
        DgpSpec("liquidity", AR1(-0.55, -0.0008, 0.0025), _LIQUIDITY_VOL, (20, 50), 0.4, 0),
        DgpSpec("disagreement", IidNormal(0.0, 0.0040), _DISAGREEMENT_VOL, (60, 120), 1.2, 0),
        DgpSpec("whale_informed", _INFORMED_RET, _INFORMED_VOL, (4, 8), 0.3, 1),
        DgpSpec("noisy_broad", IidNormal(0.0, 0.006), SplitGamma(2.0, 4e4, 3.0, 3.0), (120, 200), 3.0, 0),
        manip_then_info_spec(),
        DgpSpec(
            "persistent_two_sided",
            IidNormal(0.0008, 0.002),
            SplitGamma(2.5, 4e4, 8.0, 8.0),
            (80, 150),
            2.0,
            0,
        ),
        DgpSpec(
            "coord_manip_broad",
            IidNormal(0.0009, 0.0024),
            TwoGamma(2.5, 5e4, 0.4, 1.2e4),
            (80, 130),
            4.0,
            0,
        ),
    ]
    return {s.name: s for s in specs}


BUILTIN_ORDER = (
    "informed",
    "liquidity",
    "disagreement",
    "whale_informed",
    "noisy_broad",
    "manip_then_info",
    "persistent_two_sided",
    "coord_manip_broad",
)
BASELINE = BUILTIN_ORDER[:3]
ADVERSARIAL = BUILTIN_ORDER[3:]


def dgp_key(spec: DgpSpec) -> int:
    if spec.family in BUILTIN_ORDER:
        return BUILTIN_ORDER.index(spec.family)
    return zlib.crc32(spec.family.encode("utf-8"))


def path_rng(master_seed: int, key: int, path_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(key, path_index))
    return np.random.Generator(np.random.PCG64(seq))


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class SimulatedPath:
    """One simulated post-shock window.

    ``flows`` holds each trader's signed net flow over the whole window.
    Within a bin every trader trades the same share of that bin's volume, so
    the flow of trader j in bin b is ``flows[j] * bin_volume[b] / total``.
    """

    dgp_name: str
    label: int
    prices: np.ndarray
    buy: np.ndarray
    sell: np.ndarray
    flows: np.ndarray
    path_index: int = 0

    @property
    def n_bins(self) -> int:
        return self.buy.size

    def logit_prices(self) -> np.ndarray:
        return logit(self.prices)

    def volumes(self) -> np.ndarray:
        return np.column_stack([self.buy, self.sell])

    def trader_ids(self) -> list[str]:
        width = len(str(max(self.flows.size - 1, 0)))
        return [f"t{j:0{width}d}" for j in range(self.flows.size)]

    def flow_map(self) -> dict[str, float]:
        return dict(zip(self.trader_ids(), self.flows.tolist()))

    def window_flows(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        bin_volume = self.buy + self.sell
        total = bin_volume.sum()
        share = bin_volume[start:stop].sum() / total if total > 0 else 0.0
        return self.flows * share

    def flows_by_bin(self) -> np.ndarray:
        """(n_bins, n_traders) matrix of per-bin signed flows."""
        bin_volume = self.buy + self.sell
        total = bin_volume.sum()
        weights = bin_volume / total if total > 0 else np.zeros_like(bin_volume)
        return np.outer(weights, self.flows)

    def components(self, window_bins: Optional[int] = None) -> SciComponents:
        """SCI on the first ``window_bins`` bins after the shock (default: all)."""
        w = self.n_bins if window_bins is None else window_bins
        return compute_sci_for_shock(
            self.logit_prices(), self.volumes(), self.window_flows(0, w), shock_time=0, window=w
        )


def sample_path(spec: DgpSpec, rng: np.random.Generator, path_index: int = 0) -> SimulatedPath:
    n = spec.n_bins
    returns = spec.returns.sample(rng, n)
    lp = np.empty(n + 1)
    lp[0] = logit(spec.p0)
    np.cumsum(returns, out=lp[1:])
    lp[1:] += lp[0]
    prices = np.clip(1.0 / (1.0 + np.exp(-lp)), *PRICE_CLIP)

    buy, sell = spec.volumes.sample(rng, n)

    lo, hi = spec.trader_range
    n_traders = int(rng.integers(lo, hi + 1))
    # Dirichlet weights as normalized independent gammas
    g = rng.gamma(spec.dirichlet_alpha, 1.0, n_traders)
    gsum = g.sum()
    weights = g / gsum if gsum > 0 else np.full(n_traders, 1.0 / n_traders)

    total_buy, total_sell = buy.sum(), sell.sum()
    volume = total_buy + total_sell
    p_buy = total_buy / volume if volume > 0 else 0.5
    signs = np.where(rng.random(n_traders) < p_buy, 1.0, -1.0)
    flows = signs * weights * volume

    return SimulatedPath(
        dgp_name=spec.name,
        label=spec.label,
        prices=prices,
        buy=buy,
        sell=sell,
        flows=flows,
        path_index=path_index,
    )


@dataclass
class Dataset:
    paths: list[SimulatedPath]
    master_seed: int
    counts: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.paths)

    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.paths], dtype=int)

    def by_dgp(self) -> dict[str, list[SimulatedPath]]:
        out: dict[str, list[SimulatedPath]] = {}
        for p in self.paths:
            out.setdefault(p.dgp_name, []).append(p)
        return out

    def subset(self, names: Iterable[str]) -> "Dataset":
        keep = set(names)
        paths = [p for p in self.paths if p.dgp_name in keep]
        return Dataset(paths, self.master_seed, {k: v for k, v in self.counts.items() if k in keep})


def resolve_specs(specs: Sequence[Union[str, DgpSpec]]) -> list[DgpSpec]:
    known = builtin_specs()
    out = []
    for s in specs:
        if isinstance(s, DgpSpec):
            out.append(s)
        elif s in known:
            out.append(known[s])
        else:
            raise SpecError(f"unknown DGP '{s}' (known: {', '.join(BUILTIN_ORDER)})")
    return out


def _generate_block(spec: DgpSpec, master_seed: int, indices: range) -> list[SimulatedPath]:
    key = dgp_key(spec)
    return [sample_path(spec, path_rng(master_seed, key, i), i) for i in indices]


def generate_dataset(
    specs: Sequence[Union[str, DgpSpec]],
    n_per_dgp: int,
    master_seed: int = DEFAULT_SEED,
    workers: int = 1,
) -> Dataset:
    if n_per_dgp < 1:
        raise SpecError("n_per_dgp must be >= 1")
    resolved = resolve_specs(specs)
    names = [s.name for s in resolved]
    if len(set(names)) != len(names):
        raise SpecError("duplicate DGP names in request")
    jobs = []
    chunk = max(1, -(-n_per_dgp // max(workers, 1)))
    for spec in resolved:
        for start in range(0, n_per_dgp, chunk):
            jobs.append((spec, range(start, min(start + chunk, n_per_dgp))))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda job: _generate_block(job[0], master_seed, job[1]), jobs))
    else:
        blocks = [_generate_block(spec, master_seed, idx) for spec, idx in jobs]
    paths = [p for block in blocks for p in block]
    return Dataset(paths, master_seed, {name: n_per_dgp for name in names})


# ---------------------------------------------------------------------------
# sweeps

SWEEP_PARAMS = ("ar_coefficient", "dirichlet_alpha")


def _fmt(value: float) -> str:
    return f"{value:g}"


def sweep_specs(base: DgpSpec, param: str, grid: Sequence[float]) -> list[DgpSpec]:
    """One spec per grid value; everything else, including the random stream, is shared."""
    out = []
    for value in grid:
        if param == "ar_coefficient":
            if not isinstance(base.returns, AR1):
                raise SpecError(f"{base.name} has no AR(1) return process")
            new = dataclasses.replace(base.returns, phi=float(value))
            spec = dataclasses.replace(
                base, returns=new, name=f"{base.family}[phi={_fmt(value)}]", family=base.family
            )
        elif param == "dirichlet_alpha":
            spec = dataclasses.replace(
                base,
                dirichlet_alpha=float(value),
                name=f"{base.family}[alpha={_fmt(value)}]",
                family=base.family,
            )
        else:
            raise SpecError(f"unknown sweep parameter '{param}' (use one of {SWEEP_PARAMS})")
        out.append(spec)
    return out
