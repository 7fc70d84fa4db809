import json

import numpy as np
import pytest

from sci_index import cli
from sci_index.clustering import FundingEdge, WalletGraph
from sci_index.dgp import BUILTIN_ORDER, builtin_specs, path_rng, sample_path
from sci_index.experiments import rolling_trace
from sci_index.formats import write_graph
from sci_index.ingest import ShockSpec, TradeRecord, sci_from_trades, tape_from_path, write_trades
from sci_index.logistic import ConvergenceError
from sci_index.metrics import alarm_summary

SHOCK = 1_720_900_000_000


def _path(name, i):
    return sample_path(builtin_specs()[name], path_rng(11, BUILTIN_ORDER.index(name), i), i)


def _tape_file(tmp_path, name="informed", i=0, fname="tape.csv"):
    dest = tmp_path / fname
    write_trades(tape_from_path(_path(name, i), SHOCK), dest)
    return dest


class TestSimulate:
    def test_count_and_determinism(self, tmp_path):
        args = ["simulate", "--n", "20", "--seed", "5", "--out", str(tmp_path)]
        assert cli.main(args + ["--file", "a.jsonl"]) == 0
        assert cli.main(args + ["--file", "b.jsonl"]) == 0
        a = (tmp_path / "a.jsonl").read_bytes()
        assert a == (tmp_path / "b.jsonl").read_bytes()
        assert len(a.splitlines()) == 1 + 3 * 20

    def test_unknown_dgp(self, tmp_path, capsys):
        assert cli.main(["simulate", "--dgps", "martian", "--out", str(tmp_path)]) == 2
        assert "martian" in capsys.readouterr().err

    def test_bad_manifest_field(self, tmp_path, capsys):
        m = tmp_path / "m.yaml"
        m.write_text("n_boot: 3\n")
        assert cli.main(["simulate", "--manifest", str(m), "--out", str(tmp_path)]) == 2
        assert "n_boot" in capsys.readouterr().err


class TestExperiment:
    def test_report_deterministic_across_workers(self, tmp_path):
        base = ["experiment", "exp1", "--n", "150", "--n-boot", "100"]
        assert cli.main(base + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
        assert cli.main(base + ["--out", str(tmp_path / "b"), "--workers", "3"]) == 0
        for name in ("report.json", "roc.csv", "sci_histogram.csv", "rolling_traces.csv"):
            assert (tmp_path / "a/exp1" / name).read_bytes() == (tmp_path / "b/exp1" / name).read_bytes()
        report = json.loads((tmp_path / "a/exp1/report.json").read_text())
        assert report["seed"] == 20260429 and len(report["manifest_hash"]) == 64
        assert [r["dgp"] for r in report["table"]] == ["informed", "liquidity", "disagreement"]

    def test_unknown_id(self, tmp_path):
        assert cli.main(["experiment", "exp9", "--out", str(tmp_path)]) == 2

    def test_convergence_exit_code(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise ConvergenceError("IRLS did not converge", {"iterations": 100})

        monkeypatch.setattr(cli, "run_experiment", boom)
        assert cli.main(["experiment", "exp3", "--out", str(tmp_path)]) == 4


class TestCompute:
    def test_informed_above(self, tmp_path, capsys):
        tape = _tape_file(tmp_path, "informed", 0)
        rc = cli.main(["compute", "--trades", str(tape), "--shock-time", str(SHOCK), "--tau", "0.27", "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "compute.json").read_text())
        assert report["verdict"] == ("above threshold" if report["components"]["sci"] > 0.27 else "below threshold")

    def test_informed_above_majority(self):
        shock = ShockSpec(SHOCK, 240, 5)
        above = [sci_from_trades(tape_from_path(_path("informed", i), SHOCK), shock).sci > 0.27 for i in range(40)]
        assert np.mean(above) > 0.8

    def test_flat_tape(self, tmp_path):
        tape = tmp_path / "flat.csv"
        write_trades([TradeRecord(SHOCK + i * 60_000, 0.6, 1.0, "buy" if i % 2 else "sell", f"w{i % 3}") for i in range(30)], tape)
        rc = cli.main(["compute", "--trades", str(tape), "--shock-time", str(SHOCK), "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "compute.json").read_text())
        assert report["components"]["no_trade"] and report["components"]["sci"] == 0.0
        assert report["verdict"] == "below threshold"

    def test_graph_raises_hhi(self, tmp_path):
        p = _path("coord_manip_broad", 0)
        tape = tmp_path / "t.csv"
        write_trades(tape_from_path(p, SHOCK), tape)
        wallets = p.trader_ids()
        g = WalletGraph(edges=[FundingEdge("op", w, 1.0) for w in wallets[: len(wallets) // 2]])
        write_graph(g, tmp_path / "g.jsonl")
        rc = cli.main(["compute", "--trades", str(tape), "--shock-time", str(SHOCK), "--graph", str(tmp_path / "g.jsonl"), "--out", str(tmp_path)])
        assert rc == 0
        r = json.loads((tmp_path / "compute.json").read_text())
        assert r["hhi_robustness"]["hhi_clustered"] > r["hhi_robustness"]["hhi_raw"]
        assert r["components"]["hhi_flow"] > r["unclustered"]["hhi_flow"]

    def test_trade_bootstrap(self, tmp_path):
        tape = _tape_file(tmp_path)
        rc = cli.main(["compute", "--trades", str(tape), "--shock-time", str(SHOCK), "--trade-bootstrap", "20", "--out", str(tmp_path)])
        assert rc == 0
        r = json.loads((tmp_path / "compute.json").read_text())
        assert r["trade_bootstrap"]["n_boot"] == 20

    def test_missing_shock_time(self, tmp_path):
        tape = _tape_file(tmp_path)
        assert cli.main(["compute", "--trades", str(tape), "--out", str(tmp_path)]) == 2

    def test_ingest_error_context(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("ts_ms,price,size\n1,0.5,1\n")
        assert cli.main(["compute", "--trades", str(bad), "--shock-time", "0", "--out", str(tmp_path)]) == 3
        assert "bad.csv:1" in capsys.readouterr().err


class TestMonitor:
    def test_drift_sustained(self, tmp_path, capsys):
        trades = [TradeRecord(SHOCK + i * 60_000, 0.5 + 0.0015 * i, 1.0 + (i % 3), "buy" if i % 4 else "sell", f"w{i % 40}") for i in range(240)]
        tape = tmp_path / "drift.csv"
        write_trades(trades, tape)
        assert cli.main(["monitor", "--trades", str(tape), "--out", str(tmp_path)]) == 0
        err = capsys.readouterr().err
        assert "simulated" in err
        r = json.loads((tmp_path / "monitor.json").read_text())
        assert r["w_minutes"] == 60 and r["tau"] == 0.27
        assert r["alarm"]["sustained"] == (r["alarm"]["duration_minutes"] > 60)
        assert r["alarm"]["sustained"]
        assert (tmp_path / "monitor_series.csv").exists()

    def test_empty_tape(self, tmp_path):
        tape = tmp_path / "empty.csv"
        tape.write_text("ts_ms,price,size,side,wallet\n")
        assert cli.main(["monitor", "--trades", str(tape), "--out", str(tmp_path)]) == 3

    @staticmethod
    def _durations(name, n=200):
        out = []
        for i in range(n):
            trace = rolling_trace(_path(name, i), 12)
            out.append(alarm_summary([None if c is None else c.sci for c in trace], 0.27).duration_minutes)
        return np.array(out)

    def test_reversal_short_alarms(self):
        liquidity = self._durations("liquidity")
        informed = self._durations("informed")
        assert np.median(liquidity) <= 60
        assert np.mean(liquidity > 60) < 0.5 < np.mean(informed > 60)
        assert liquidity.mean() < 0.5 * informed.mean()


class TestCalibrate:
    def test_runs(self, tmp_path):
        assert cli.main(["calibrate", "--n", "200", "--out", str(tmp_path)]) == 0
        r = json.loads((tmp_path / "calibration.json").read_text())
        assert 0.1 < r["tau_star"] < 0.4
