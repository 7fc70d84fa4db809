"""Monte Carlo experiments: component statistics, calibration, stress tests, sweeps.

Each runner returns an :class:`ExperimentResult` holding a JSON-ready report
and named plot series. Reports embed the manifest digest and seed, and are
deterministic for a given manifest whatever the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from .dgp import (
    ADVERSARIAL,
    BASELINE,
    BUILTIN_ORDER,
    MANIP_PHASE_LIQUIDITY,
    DgpSpec,
    SimulatedPath,
    builtin_specs,
    generate_dataset,
    manip_then_info_spec,
    sweep_specs,
)
from .evaluation import (
    ComponentTable,
    ScoredSet,
    auc,
    evaluate,
    roc_curve,
    score_additive,
    score_component,
    score_sci,
)
from .logistic import fit_logistic_cv
from .manifest import RunManifest
from .metrics import SciComponents, Weights, alarm_summary, regime_verdict, rolling_sci

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4_window", "exp4_sweep", "illustrative")
DEFAULT_N = {"exp1": 2000, "exp2": 2000, "exp3": 1500, "exp4_window": 2000, "exp4_sweep": 2000, "illustrative": 2000}

# events in the illustrative decomposition and the regime each is matched to
MATCHED_SHOCKS = (
    ("debate", "liquidity"),
    ("assassination_attempt", "informed"),
    ("withdrawal", "disagreement"),
)
HIST_BINS = 50
TRACE_WINDOW_MINUTES = 60


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentResult:
    experiment: str
    report: dict
    series: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)


def specs_for(manifest: RunManifest) -> dict[str, DgpSpec]:
    specs = builtin_specs()
    if manifest.manip_first_phase == "liquidity":
        specs["manip_then_info"] = manip_then_info_spec(MANIP_PHASE_LIQUIDITY)
    return specs


def _n(manifest: RunManifest, experiment: str) -> int:
    return manifest.n_per_dgp or DEFAULT_N[experiment]


def _header(experiment: str, manifest: RunManifest, n: int) -> dict:
    return {
        "experiment": experiment,
        "manifest_hash": manifest.digest(),
        "seed": manifest.seed,
        "n_per_dgp": n,
        "n_boot": manifest.n_boot,
        "version": __version__,
    }


def _generate(manifest: RunManifest, names, n: int, specs: Optional[dict] = None):
    specs = specs or specs_for(manifest)
    return generate_dataset([specs[k] for k in names], n, manifest.seed, manifest.workers)


def concat_tables(tables: list[ComponentTable]) -> ComponentTable:
    return ComponentTable(
        dgp=[d for t in tables for d in t.dgp],
        labels=np.concatenate([t.labels for t in tables]),
        pr=np.concatenate([t.pr for t in tables]),
        ts=np.concatenate([t.ts for t in tables]),
        hhi=np.concatenate([t.hhi for t in tables]),
        sci=np.concatenate([t.sci for t in tables]),
        no_trade=np.concatenate([t.no_trade for t in tables]),
    )


def _stat(values: np.ndarray) -> tuple[float, float]:
    v = values[~np.isnan(values)]
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def _sci_scores(table: ComponentTable, weights: Weights) -> ScoredSet:
    if weights.as_tuple() == (1.0, 1.0, 1.0):
        return score_sci(table)
    return score_sci(table, weights)


def component_rows(table: ComponentTable, order) -> list[dict]:
    rows = []
    for name in order:
        m = table.mask([name])
        if not m.any():
            continue
        row = {"dgp": name, "label": int(table.labels[m][0]), "n": int(m.sum())}
        for key, values in (("pr", table.pr), ("ts", table.ts), ("hhi", table.hhi), ("sci", table.sci)):
            row[f"{key}_mean"], row[f"{key}_sd"] = _stat(values[m])
        row["no_trade"] = int(table.no_trade[m].sum())
        rows.append(row)
    return rows


def _correlations(table: ComponentTable, order) -> dict:
    out = {}
    for name in order:
        m = table.mask([name]) & ~table.no_trade
        if m.sum() < 3:
            continue
        c = np.corrcoef(np.vstack([table.pr[m], table.ts[m], table.hhi[m]]))
        out[name] = {"pr_ts": float(c[0, 1]), "pr_hhi": float(c[0, 2]), "ts_hhi": float(c[1, 2])}
    return out


def _roc_series(s: ScoredSet) -> tuple[list[str], list[list]]:
    fpr, tpr, thr = roc_curve(s)
    return ["fpr", "tpr", "threshold"], [[f, t, None if np.isinf(h) else h] for f, t, h in zip(fpr, tpr, thr)]


def _hist_series(table: ComponentTable, order) -> tuple[list[str], list[list]]:
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    rows = []
    for name in order:
        m = table.mask([name])
        if not m.any():
            continue
        counts, _ = np.histogram(table.sci[m], bins=edges)
        rows += [[name, edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)]
    return ["dgp", "bin_low", "bin_high", "count"], rows


def rolling_trace(path: SimulatedPath, w_bins: int) -> list[Optional[SciComponents]]:
    return rolling_sci(path.logit_prices(), path.volumes(), path.flows_by_bin(), w_bins)


def _trace_series(data, manifest: RunManifest, tau: float) -> tuple[tuple, dict]:
    """Rolling SCI for the first draw of each baseline regime."""
    w_bins = TRACE_WINDOW_MINUTES // manifest.bin_minutes
    rows, alarms = [], {}
    firsts = {}
    for p in data.paths:
        firsts.setdefault(p.dgp_name, p)
    for name in BASELINE:
        if name not in firsts:
            continue
        trace = rolling_trace(firsts[name], w_bins)
        values = [None if c is None else c.sci for c in trace]
        for t, v in enumerate(values):
            rows.append([name, t, t * manifest.bin_minutes, v])
        alarms[name] = alarm_summary(values, tau, manifest.bin_minutes).as_dict()
    return (["dgp", "bin", "minutes", "sci"], rows), alarms


# ---------------------------------------------------------------------------
# runners


def _baseline(manifest: RunManifest, experiment: str):
    n = _n(manifest, experiment)
    data = _generate(manifest, BASELINE, n)
    return n, data, ComponentTable.from_dataset(data)


def calibrate(manifest: RunManifest) -> dict:
    """Youden threshold of the baseline experiment."""
    _, _, table = _baseline(manifest, "exp1")
    roc = evaluate(_sci_scores(table, Weights(*manifest.weights)), n_boot=0)
    return {"tau_star": roc.tau_star, "tpr": roc.tpr, "fpr": roc.fpr, "auc": roc.auc}


def run_exp1(manifest: RunManifest) -> ExperimentResult:
    n, data, table = _baseline(manifest, "exp1")
    scores = _sci_scores(table, Weights(*manifest.weights))
    roc = evaluate(scores, manifest.n_boot, manifest.seed)
    traces, alarms = _trace_series(data, manifest, roc.tau_star)
    report = _header("exp1", manifest, n)
    report.update(
        {
            "weights": list(manifest.weights),
            "table": component_rows(table, BASELINE),
            "roc": roc.as_dict(),
            "ci_width": roc.ci_high - roc.ci_low,
            "correlations": _correlations(table, BASELINE),
            "trace_alarms": alarms,
        }
    )
    series = {
        "roc": _roc_series(scores),
        "sci_histogram": _hist_series(table, BASELINE),
        "rolling_traces": traces,
    }
    return ExperimentResult("exp1", report, series)


def failure_mode(label: int, p_above: float) -> str:
    """Majority verdict at the frozen threshold versus the true label."""
    if label == 1 and p_above < 0.5:
        return "Type II"
    if label == 0 and p_above > 0.5:
        return "Type I"
    return "none"


def run_exp2(manifest: RunManifest) -> ExperimentResult:
    n = _n(manifest, "exp2")
    if manifest.tau_star is not None:
        tau, source = float(manifest.tau_star), "manifest"
    else:
        tau, source = calibrate(manifest.override(n_per_dgp=n))["tau_star"], "exp1"
    data = _generate(manifest, ADVERSARIAL, n)
    table = ComponentTable.from_dataset(data)
    scores = _sci_scores(table, Weights(*manifest.weights))
    rows = []
    for name in ADVERSARIAL:
        m = table.mask([name])
        label = int(table.labels[m][0])
        p_above = float(np.mean(scores.scores[m] > tau))
        rows.append(
            {
                "dgp": name,
                "label": label,
                "mean_sci": float(scores.scores[m].mean()),
                "p_above": p_above,
                "failure_mode": failure_mode(label, p_above),
            }
        )
    roc = evaluate(scores, manifest.n_boot, manifest.seed)
    report = _header("exp2", manifest, n)
    report.update(
        {
            "tau_star": tau,
            "tau_source": source,
            "manip_first_phase": manifest.manip_first_phase,
            "table": rows,
            "components": component_rows(table, ADVERSARIAL),
            "ood_auc": roc.as_dict(),
        }
    )
    return ExperimentResult(
        "exp2", report, {"roc": _roc_series(scores), "sci_histogram": _hist_series(table, ADVERSARIAL)}
    )


def run_exp3(manifest: RunManifest) -> ExperimentResult:
    n = _n(manifest, "exp3")
    data = _generate(manifest, BUILTIN_ORDER, n)
    table = ComponentTable.from_dataset(data)
    X = table.factors()
    cv = fit_logistic_cv(X, table.labels, manifest.k_folds, manifest.seed)
    fold_aucs = [
        auc(ScoredSet(cv.out_of_fold.scores[cv.folds == f], table.labels[cv.folds == f]))
        for f in range(manifest.k_folds)
    ]
    scorers: list[tuple[str, Callable[[], ScoredSet]]] = [
        ("logistic_cv", lambda: cv.out_of_fold),
        ("sci", lambda: _sci_scores(table, Weights(*manifest.weights))),
        ("additive", lambda: score_additive(table)),
        ("pr", lambda: score_component(table, "pr")),
        ("one_minus_ts", lambda: score_component(table, "one_minus_ts")),
        ("one_minus_hhi", lambda: score_component(table, "one_minus_hhi")),
    ]
    rows = []
    roc_rows = []
    for name, make in scorers:
        s = make()
        r = evaluate(s, manifest.n_boot, manifest.seed)
        rows.append({"score": name, "auc": r.auc, "ci_low": r.ci_low, "ci_high": r.ci_high})
        fpr, tpr, _ = roc_curve(s)
        roc_rows += [[name, f, t] for f, t in zip(fpr, tpr)]
    report = _header("exp3", manifest, n)
    report.update(
        {
            "k_folds": manifest.k_folds,
            "table": rows,
            "logistic": {
                "pooled_oof_auc": rows[0]["auc"],
                "mean_fold_auc": float(np.mean(fold_aucs)),
                "fold_aucs": fold_aucs,
                "full_fit": cv.model.as_dict(),
            },
        }
    )
    return ExperimentResult("exp3", report, {"roc": (["score", "fpr", "tpr"], roc_rows)})


def run_exp4_window(manifest: RunManifest) -> ExperimentResult:
    n = _n(manifest, "exp4_window")
    data = _generate(manifest, BASELINE, n)
    rows = []
    weights = Weights(*manifest.weights)
    for w in manifest.window_grid:
        table = ComponentTable.from_dataset(data, w // manifest.bin_minutes)
        r = evaluate(_sci_scores(table, weights), manifest.n_boot, manifest.seed)
        rows.append({"window_minutes": w, **r.as_dict()})
    report = _header("exp4_window", manifest, n)
    report.update({"window_placement": "first w minutes after the shock", "table": rows})
    curve = (["window_minutes", "auc", "tau_star", "tpr", "fpr"], [[r["window_minutes"], r["auc"], r["tau_star"], r["tpr"], r["fpr"]] for r in rows])
    return ExperimentResult("exp4_window", report, {"window_curve": curve})


def _sweep(manifest, n, vary: str, grid, fixed_names, param: str):
    """AUC over a grid where one baseline regime's parameter changes."""
    specs = specs_for(manifest)
    fixed = {k: ComponentTable.from_dataset(_generate(manifest, [k], n, specs)) for k in fixed_names}
    weights = Weights(*manifest.weights)
    rows = []
    for spec in sweep_specs(specs[vary], param, grid):
        varied = ComponentTable.from_dataset(generate_dataset([spec], n, manifest.seed, manifest.workers))
        tables = {**fixed, vary: varied}
        full = concat_tables([tables[k] for k in BASELINE])
        pair = concat_tables([tables["informed"], tables["liquidity"]])
        value = spec.returns.phi if param == "ar_coefficient" else spec.dirichlet_alpha
        rows.append(
            {
                "value": value,
                "dgp": spec.name,
                "auc": auc(_sci_scores(full, weights)),
                "auc_informed_vs_liquidity": auc(_sci_scores(pair, weights)),
                "varied_mean_sci": float(varied.sci.mean()),
                "varied_mean_hhi": _stat(varied.hhi)[0],
            }
        )
    return rows


def run_exp4_sweep(manifest: RunManifest) -> ExperimentResult:
    n = _n(manifest, "exp4_sweep")
    phi_rows = _sweep(manifest, n, "liquidity", manifest.phi_grid, ("informed", "disagreement"), "ar_coefficient")
    alpha_rows = _sweep(manifest, n, "informed", manifest.alpha_grid, ("liquidity", "disagreement"), "dirichlet_alpha")
    report = _header("exp4_sweep", manifest, n)
    report.update(
        {
            "ar_coefficient": {"varied": "liquidity", "table": phi_rows},
            "dirichlet_alpha": {"varied": "informed", "table": alpha_rows},
        }
    )
    cols = ["value", "auc", "auc_informed_vs_liquidity"]
    series = {
        "sweep_phi": (cols, [[r[c] for c in cols] for r in phi_rows]),
        "sweep_alpha": (cols, [[r[c] for c in cols] for r in alpha_rows]),
    }
    return ExperimentResult("exp4_sweep", report, series)


def run_illustrative(manifest: RunManifest) -> ExperimentResult:
    n, _, table = _baseline(manifest, "illustrative")
    tau = evaluate(_sci_scores(table, Weights(*manifest.weights)), n_boot=0).tau_star
    stats = {r["dgp"]: r for r in component_rows(table, BASELINE)}
    rows = []
    for event, regime in MATCHED_SHOCKS:
        s = stats[regime]
        mean = SciComponents(s["pr_mean"], s["ts_mean"], s["hhi_mean"], s["sci_mean"])
        rows.append(
            {
                "event": event,
                "matched_dgp": regime,
                "pr": mean.pr,
                "ts": mean.ts,
                "hhi": mean.hhi_flow,
                "sci": mean.sci,
                "above_tau": mean.sci > tau,
                "verdict": regime_verdict(mean, tau),
            }
        )
    report = _header("illustrative", manifest, n)
    report.update({"tau_star": tau, "table": rows})
    return ExperimentResult("illustrative", report)


RUNNERS = {
    "exp1": run_exp1,
    "exp2": run_exp2,
    "exp3": run_exp3,
    "exp4_window": run_exp4_window,
    "exp4_sweep": run_exp4_sweep,
    "illustrative": run_illustrative,
}


def run_experiment(experiment: str, manifest: Optional[RunManifest] = None) -> ExperimentResult:
    if experiment not in RUNNERS:
        raise ExperimentError(f"unknown experiment '{experiment}' (use one of {', '.join(EXPERIMENTS)})")
    manifest = manifest or RunManifest()
    manifest.validate()
    return RUNNERS[experiment](manifest)
