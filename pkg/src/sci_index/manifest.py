"""Run configuration: one manifest drives every CLI command."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .dgp import BASELINE, BUILTIN_ORDER, DEFAULT_SEED

OUT_DIR_ENV = "SCI_OUT_DIR"
DEFAULT_OUT_DIR = "sci_out"

DEFAULT_PHI_GRID = (-0.9, -0.8, -0.7, -0.6, -0.55, -0.5, -0.4, -0.3, -0.2, -0.1, 0.0)
DEFAULT_ALPHA_GRID = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
DEFAULT_WINDOW_GRID = (60, 120, 180, 240)

# fields that change where or how fast output is produced, never its content
_NON_SEMANTIC = ("out_dir", "workers")


class ManifestError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid manifest: " + "; ".join(problems))
        self.problems = problems


@dataclass
class RunManifest:
    seed: int = DEFAULT_SEED
    n_per_dgp: Optional[int] = None
    dgps: list = field(default_factory=lambda: list(BASELINE))
    weights: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    tau: float = 0.27
    tau_star: Optional[float] = None
    n_boot: int = 1000
    trade_bootstrap: int = 0
    k_folds: int = 5
    window_minutes: int = 240
    bin_minutes: int = 5
    monitor_window_minutes: int = 60
    window_grid: list = field(default_factory=lambda: list(DEFAULT_WINDOW_GRID))
    phi_grid: list = field(default_factory=lambda: list(DEFAULT_PHI_GRID))
    alpha_grid: list = field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))
    manip_first_phase: str = "balanced"
    shock_time_ms: Optional[int] = None
    trades: Optional[str] = None
    graph: Optional[str] = None
    custodial_mode: str = "exclude"
    downweight: float = 0.1
    workers: int = 1
    out_dir: str = field(default_factory=lambda: os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR))

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "RunManifest":
        unknown = sorted(set(data) - set(cls.field_names()))
        if unknown:
            raise ManifestError([f"unknown field '{k}'" for k in unknown])
        m = cls(**data)
        m.validate()
        return m

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunManifest":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ManifestError([f"cannot read {path}: {exc.strerror}"]) from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ManifestError([f"{path}: not valid YAML/JSON ({exc})"]) from exc
        if not isinstance(data, dict):
            raise ManifestError([f"{path}: top level must be a mapping"])
        return cls.from_mapping(data)

    def override(self, **changes) -> "RunManifest":
        changes = {k: v for k, v in changes.items() if v is not None}
        m = dataclasses.replace(self, **changes)
        m.validate()
        return m

    def validate(self) -> None:
        problems = []

        def is_int(v):
            return isinstance(v, int) and not isinstance(v, bool)

        def is_num(v):
            return isinstance(v, (int, float)) and not isinstance(v, bool)

        if not is_int(self.seed) or self.seed < 0:
            problems.append("seed: must be a nonnegative integer")
        if self.n_per_dgp is not None and (not is_int(self.n_per_dgp) or self.n_per_dgp < 1):
            problems.append("n_per_dgp: must be a positive integer")
        if not isinstance(self.dgps, list) or not self.dgps:
            problems.append("dgps: must be a nonempty list")
        else:
            for name in self.dgps:
                if name not in BUILTIN_ORDER:
                    problems.append(f"dgps: unknown DGP '{name}'")
        if (
            not isinstance(self.weights, (list, tuple))
            or len(self.weights) != 3
            or not all(is_num(w) and w > 0 for w in self.weights)
        ):
            problems.append("weights: must be three positive numbers")
        if not is_num(self.tau) or not 0.0 <= self.tau <= 1.0:
            problems.append("tau: must lie in [0, 1]")
        if self.tau_star is not None and (not is_num(self.tau_star) or not 0.0 <= self.tau_star <= 1.0):
            problems.append("tau_star: must lie in [0, 1]")
        if not is_int(self.n_boot) or (self.n_boot != 0 and self.n_boot < 100):
            problems.append("n_boot: must be 0 (off) or >= 100")
        if not is_int(self.trade_bootstrap) or self.trade_bootstrap < 0:
            problems.append("trade_bootstrap: must be a nonnegative integer")
        if not is_int(self.k_folds) or self.k_folds < 2:
            problems.append("k_folds: must be an integer >= 2")
        if not is_int(self.bin_minutes) or self.bin_minutes < 1:
            problems.append("bin_minutes: must be a positive integer")
        else:
            for name in ("window_minutes", "monitor_window_minutes"):
                v = getattr(self, name)
                if not is_int(v) or v < self.bin_minutes or v % self.bin_minutes:
                    problems.append(f"{name}: must be a positive multiple of bin_minutes")
            if not isinstance(self.window_grid, list) or not self.window_grid or any(
                not is_int(v) or v < self.bin_minutes or v % self.bin_minutes or v > 240
                for v in self.window_grid
            ):
                problems.append("window_grid: entries must be multiples of bin_minutes in (0, 240]")
        if not isinstance(self.phi_grid, list) or not self.phi_grid or any(
            not is_num(v) or not -1.0 < v < 1.0 for v in self.phi_grid
        ):
            problems.append("phi_grid: entries must lie in (-1, 1)")
        if not isinstance(self.alpha_grid, list) or not self.alpha_grid or any(
            not is_num(v) or v <= 0 for v in self.alpha_grid
        ):
            problems.append("alpha_grid: entries must be positive")
        if self.manip_first_phase not in ("balanced", "liquidity"):
            problems.append("manip_first_phase: must be 'balanced' or 'liquidity'")
        if self.shock_time_ms is not None and not is_int(self.shock_time_ms):
            problems.append("shock_time_ms: must be an integer (epoch ms)")
        if self.custodial_mode not in ("exclude", "downweight"):
            problems.append("custodial_mode: must be 'exclude' or 'downweight'")
        if not is_num(self.downweight) or not 0.0 < self.downweight < 1.0:
            problems.append("downweight: must lie in (0, 1)")
        if not is_int(self.workers) or self.workers < 1:
            problems.append("workers: must be a positive integer")
        if not isinstance(self.out_dir, str) or not self.out_dir:
            problems.append("out_dir: must be a nonempty path")
        if problems:
            raise ManifestError(problems)

    def semantic_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for k in _NON_SEMANTIC:
            d.pop(k)
        return d

    def digest(self) -> str:
        """SHA-256 over the fields that affect results."""
        text = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(dataclasses.asdict(self), sort_keys=True)
