"""Command-line front end: ``sci simulate | experiment | compute | monitor | calibrate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .clustering import ClusterConfig, build_cluster_map, hhi_robustness_report
from .dgp import SpecError, generate_dataset
from .experiments import EXPERIMENTS, ExperimentError, calibrate, run_experiment, specs_for
from .formats import FormatError, dumps, read_graph, write_dataset, write_report, write_series
from .ingest import (
    IngestError,
    ParseDiagnostics,
    ShockSpec,
    bin_series,
    flows_by_bin,
    parse_trades,
    sci_from_trades,
    trade_bootstrap,
    trader_flows,
)
from .logistic import ConvergenceError
from .manifest import ManifestError, RunManifest
from .metrics import (
    InsufficientDataError,
    MetricDomainError,
    NoTradeError,
    Weights,
    alarm_summary,
    rolling_sci,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

TAU_WARNING = (
    "warning: tau={tau:g} was calibrated on simulated shocks, not on labeled real events; "
    "treat alarms as indicative"
)

log = logging.getLogger("sci_index")


class ConfigError(ValueError):
    pass


def _manifest(args: argparse.Namespace, **fields) -> RunManifest:
    base = RunManifest.load(args.manifest) if args.manifest else RunManifest()
    common = {"seed": args.seed, "out_dir": args.out, "workers": args.workers}
    return base.override(**common, **fields)


def _out(manifest: RunManifest) -> Path:
    path = Path(manifest.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_simulate(args) -> int:
    m = _manifest(args, dgps=args.dgps, n_per_dgp=args.n, manip_first_phase=args.manip_first_phase)
    specs = specs_for(m)
    data = generate_dataset([specs[k] for k in m.dgps], m.n_per_dgp or 2000, m.seed, m.workers)
    dest = _out(m) / args.file
    write_dataset(data, dest)
    print(f"wrote {len(data)} paths to {dest}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    m = _manifest(
        args,
        n_per_dgp=args.n,
        n_boot=args.n_boot,
        tau_star=args.tau_star,
        weights=args.weights,
        k_folds=args.k_folds,
        manip_first_phase=args.manip_first_phase,
    )
    result = run_experiment(args.id, m)
    folder = _out(m) / args.id
    write_report(result.report, folder / "report.json")
    for name, (header, rows) in result.series.items():
        write_series(folder / f"{name}.csv", header, rows)
    print(f"wrote {folder / 'report.json'}")
    return EXIT_OK


def _shock(m: RunManifest, trades) -> ShockSpec:
    if m.shock_time_ms is None:
        raise ConfigError("shock_time_ms: required (use --shock-time or the manifest)")
    return ShockSpec(m.shock_time_ms, m.window_minutes, m.bin_minutes)


def _load_trades(m: RunManifest):
    if not m.trades:
        raise ConfigError("trades: a trade file is required (use --trades)")
    diag = ParseDiagnostics()
    trades = parse_trades(m.trades, diag)
    return trades, diag


def cmd_compute(args) -> int:
    m = _manifest(
        args,
        trades=args.trades,
        shock_time_ms=args.shock_time,
        window_minutes=args.window_minutes,
        bin_minutes=args.bin_minutes,
        tau=args.tau,
        weights=args.weights,
        graph=args.graph,
        trade_bootstrap=args.trade_bootstrap,
        custodial_mode=args.custodial_mode,
    )
    trades, diag = _load_trades(m)
    shock = _shock(m, trades)
    raw = sci_from_trades(trades, shock)
    report = {
        "command": "compute",
        "manifest_hash": m.digest(),
        "seed": m.seed,
        "trades_file": str(m.trades),
        "shock": {"shock_time_ms": shock.shock_time, "window_minutes": shock.window_minutes, "bin_minutes": shock.bin_minutes},
        "parse": {"rows": diag.n_rows, "malformed": len(diag.malformed), "clipped": diag.n_clipped, "reordered": diag.reordered},
        "tau": m.tau,
        "weights": list(m.weights),
    }
    final = raw
    if m.graph:
        cmap = build_cluster_map(read_graph(m.graph), ClusterConfig(custodial_mode=m.custodial_mode, downweight=m.downweight))
        final = sci_from_trades(trades, shock, cmap)
        report["unclustered"] = raw.as_dict()
        flows = trader_flows(trades, shock)
        try:
            report["hhi_robustness"] = hhi_robustness_report(flows, cmap).as_dict()
        except NoTradeError:
            report["hhi_robustness"] = None
        report["n_clusters"] = len(cmap.clusters())
    report["components"] = final.as_dict()
    report["weighted_sci"] = final.weighted(Weights(*m.weights))
    report["verdict"] = "above threshold" if report["weighted_sci"] > m.tau else "below threshold"
    if m.trade_bootstrap:
        cmap_arg = cmap if m.graph else None
        report["trade_bootstrap"] = trade_bootstrap(trades, shock, m.trade_bootstrap, m.seed, cmap_arg)
    write_report(report, _out(m) / "compute.json")
    print(dumps(report, indent=2))
    return EXIT_OK


def cmd_monitor(args) -> int:
    m = _manifest(
        args,
        trades=args.trades,
        shock_time_ms=args.shock_time,
        window_minutes=args.window_minutes,
        bin_minutes=args.bin_minutes,
        monitor_window_minutes=args.w,
        tau=args.tau,
    )
    trades, _ = _load_trades(m)
    if not trades:
        raise IngestError("trade file holds no trades", str(m.trades))
    if m.shock_time_ms is None:
        m = m.override(shock_time_ms=trades[0].ts_ms)
    shock = _shock(m, trades)
    w_bins = m.monitor_window_minutes // m.bin_minutes
    if w_bins > shock.n_bins:
        raise ConfigError("monitor_window_minutes: longer than window_minutes")
    print(TAU_WARNING.format(tau=m.tau), file=sys.stderr)
    prices, volumes = bin_series(trades, shock)
    series = rolling_sci(prices, volumes, flows_by_bin(trades, shock), w_bins)
    values = [None if c is None else c.sci for c in series]
    summary = alarm_summary(values, m.tau, m.bin_minutes)
    report = {
        "command": "monitor",
        "manifest_hash": m.digest(),
        "seed": m.seed,
        "trades_file": str(m.trades),
        "shock_time_ms": shock.shock_time,
        "w_minutes": m.monitor_window_minutes,
        "tau": m.tau,
        "tau_note": "simulation-calibrated",
        "alarm": summary.as_dict(),
    }
    out = _out(m)
    write_report(report, out / "monitor.json")
    write_series(
        out / "monitor_series.csv",
        ["bin", "minutes", "sci", "pr", "ts", "hhi", "above_tau"],
        [
            [t, t * m.bin_minutes]
            + ([None] * 5 if c is None else [c.sci, c.pr, c.ts, c.hhi_flow, int(c.sci > m.tau)])
            for t, c in enumerate(series)
        ],
    )
    print(dumps(report, indent=2))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    m = _manifest(args, n_per_dgp=args.n, weights=args.weights)
    result = calibrate(m)
    report = {"command": "calibrate", "manifest_hash": m.digest(), "seed": m.seed, "n_per_dgp": m.n_per_dgp or 2000, **result}
    write_report(report, _out(m) / "calibration.json")
    print(dumps(report, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sci", description="Signal Credibility Index toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="YAML or JSON run manifest")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default $SCI_OUT_DIR or ./sci_out)")
    common.add_argument("--workers", type=int)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a simulated dataset")
    s.add_argument("--dgps", nargs="+")
    s.add_argument("--n", type=int, help="paths per DGP (default 2000)")
    s.add_argument("--manip-first-phase", choices=("balanced", "liquidity"))
    s.add_argument("--file", default="dataset.jsonl")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("experiment", parents=[common], help="run a Monte Carlo experiment")
    e.add_argument("id", choices=EXPERIMENTS)
    e.add_argument("--n", type=int)
    e.add_argument("--n-boot", type=int)
    e.add_argument("--tau-star", type=float)
    e.add_argument("--weights", type=float, nargs=3)
    e.add_argument("--k-folds", type=int)
    e.add_argument("--manip-first-phase", choices=("balanced", "liquidity"))
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("compute", parents=[common], help="score one shock from a trade file")
    c.add_argument("--trades")
    c.add_argument("--shock-time", type=int, help="epoch ms")
    c.add_argument("--window-minutes", type=int)
    c.add_argument("--bin-minutes", type=int)
    c.add_argument("--tau", type=float)
    c.add_argument("--weights", type=float, nargs=3)
    c.add_argument("--graph", help="wallet-graph JSONL for clustering")
    c.add_argument("--trade-bootstrap", type=int, help="trade-level resamples (0 = off)")
    c.add_argument("--custodial-mode", choices=("exclude", "downweight"))
    c.set_defaults(func=cmd_compute)

    mo = sub.add_parser("monitor", parents=[common], help="replay a trade file through the rolling alarm")
    mo.add_argument("--trades")
    mo.add_argument("--shock-time", type=int, help="epoch ms (default: first trade)")
    mo.add_argument("--window-minutes", type=int)
    mo.add_argument("--bin-minutes", type=int)
    mo.add_argument("--w", type=int, help="rolling window in minutes (default 60)")
    mo.add_argument("--tau", type=float)
    mo.set_defaults(func=cmd_monitor)

    ca = sub.add_parser("calibrate", parents=[common], help="Youden threshold on the baseline regimes")
    ca.add_argument("--n", type=int)
    ca.add_argument("--weights", type=float, nargs=3)
    ca.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ManifestError, ExperimentError, SpecError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IngestError, FormatError, InsufficientDataError, NoTradeError, MetricDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
