"""Line-delimited JSON schemas for datasets and wallet graphs, plus report writers.

All writers are byte-deterministic: keys are sorted, floats use Python's
shortest round-trip repr, and NaN is written as null.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Union

import numpy as np

from .clustering import FundingEdge, WalletGraph
from .dgp import Dataset, SimulatedPath

DATASET_FORMAT = "sci-dataset"
GRAPH_FORMAT = "sci-wallet-graph"
FORMAT_VERSION = 1

PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    pass


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj: Any, indent: int | None = None) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=indent, separators=(",", ":") if indent is None else None, allow_nan=False)


# ---------------------------------------------------------------------------
# dataset


def path_record(p: SimulatedPath) -> dict:
    return {
        "dgp": p.dgp_name,
        "label": p.label,
        "path_index": p.path_index,
        "prices": p.prices,
        "buy": p.buy,
        "sell": p.sell,
        "flows": p.flow_map(),
    }


def write_dataset(data: Dataset, dest: PathLike) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "master_seed": data.master_seed,
        "counts": data.counts,
        "n_paths": len(data),
    }
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(header) + "\n")
        for p in data.paths:
            fh.write(dumps(path_record(p)) + "\n")


def read_dataset(src: PathLike) -> Dataset:
    with open(src, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise FormatError(f"{src}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise FormatError(f"{src}: not a {DATASET_FORMAT} file")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{src}: unsupported version {header.get('version')}")
    paths = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            flows = rec["flows"]
            paths.append(
                SimulatedPath(
                    dgp_name=rec["dgp"],
                    label=int(rec["label"]),
                    prices=np.asarray(rec["prices"], dtype=float),
                    buy=np.asarray(rec["buy"], dtype=float),
                    sell=np.asarray(rec["sell"], dtype=float),
                    flows=np.asarray([flows[k] for k in sorted(flows)], dtype=float),
                    path_index=int(rec.get("path_index", 0)),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"{src}:{lineno}: bad path record ({exc})") from exc
    return Dataset(paths, int(header["master_seed"]), dict(header.get("counts", {})))


# ---------------------------------------------------------------------------
# wallet graph


def write_graph(graph: WalletGraph, dest: PathLike) -> None:
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps({"format": GRAPH_FORMAT, "version": FORMAT_VERSION}) + "\n")
        for e in graph.edges:
            fh.write(
                dumps(
                    {
                        "type": "edge",
                        "funder": e.funder,
                        "funded": e.funded,
                        "amount": e.amount,
                        "first_deposit": e.first_deposit,
                    }
                )
                + "\n"
            )
        for w in sorted(graph.activity):
            fh.write(dumps({"type": "activity", "wallet": w, "directions": graph.activity[w]}) + "\n")
        for w in sorted(graph.custodial):
            fh.write(dumps({"type": "custodial", "wallet": w}) + "\n")
        for w in sorted(graph.wallets):
            fh.write(dumps({"type": "wallet", "wallet": w}) + "\n")


def read_graph(src: PathLike) -> WalletGraph:
    edges, activity, custodial, wallets = [], {}, set(), set()
    with open(src, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec.get("type")
                if kind is None and rec.get("format") == GRAPH_FORMAT:
                    continue
                if kind == "edge":
                    edges.append(
                        FundingEdge(
                            str(rec["funder"]),
                            str(rec["funded"]),
                            float(rec.get("amount", 0.0)),
                            bool(rec.get("first_deposit", True)),
                        )
                    )
                elif kind == "activity":
                    dirs = [int(d) for d in rec["directions"]]
                    if any(d not in (-1, 0, 1) for d in dirs):
                        raise ValueError("directions must be -1, 0 or +1")
                    activity[str(rec["wallet"])] = dirs
                elif kind == "custodial":
                    custodial.add(str(rec["wallet"]))
                elif kind == "wallet":
                    wallets.add(str(rec["wallet"]))
                else:
                    raise ValueError(f"unknown record type {kind!r}")
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{src}:{lineno}: {exc}") from exc
    try:
        return WalletGraph(wallets | custodial, edges, activity, custodial)
    except ValueError as exc:
        raise FormatError(f"{src}: {exc}") from exc


# ---------------------------------------------------------------------------
# reports and plot series


def write_report(report: dict, dest: PathLike) -> None:
    Path(dest).parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(report, indent=2) + "\n")


def write_series(dest: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    Path(dest).parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
