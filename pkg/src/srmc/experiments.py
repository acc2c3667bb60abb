"""Experiment recipes behind the CLI: single runs, MSE benchmarks, the
metastability vignette, mode coverage and parameter sweeps.

Every runner writes plain files (JSONL, JSON, CSV) under an output directory
and returns a small summary dict.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import metrics as M
from .config import apply_override, build_target, config_hash, resolve_run
from .driver import RunConfig, RunRecord, read_jsonl, run_chains, write_records


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence[Any]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_value(v) for v in row])
    return path


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def mean_ci(values) -> tuple:
    """Mean and normal-approximation 95% interval (mean +/- 1.96 SE)."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    if v.size < 2:
        return mean, mean, mean
    half = 1.96 * float(v.std(ddof=1)) / np.sqrt(v.size)
    return mean, mean - half, mean + half


# ---------------------------------------------------------------------------
# Per-run metric table
# ---------------------------------------------------------------------------


def metrics_rows(records: Sequence[RunRecord], ground_truth=None, cost_model: str = "measured"):
    """Rows (n, budget, mse_mean, mse_lo, mse_hi, theta_norm, alpha) averaged over chains."""
    recs = [r for r in records if r.n.size]
    if not recs:
        return []
    T = min(r.n.size for r in recs)
    budget, _ = M.budget_indexed_series(recs[0], cost_model)
    rows = []
    for i in range(T):
        if ground_truth is not None and np.all(np.isfinite(recs[0].xbar[i])):
            mse = [float(M.running_mse(r.xbar[i], ground_truth)) for r in recs]
            m, lo, hi = mean_ci(mse)
        else:
            m = lo = hi = float("nan")
        tn = float(np.mean([np.linalg.norm(r.theta[i]) for r in recs]))
        rows.append([int(recs[0].n[i]), int(budget[i]), m, lo, hi, tn, float(recs[0].alpha[i])])
    return rows


METRIC_HEADER = ["n", "budget", "mse_mean", "mse_ci_low", "mse_ci_high", "theta_norm", "alpha"]


def _ground_truth(target_spec):
    target = build_target(target_spec) if isinstance(target_spec, dict) else target_spec
    gt = target.ground_truth_mean
    return None if gt is None else np.asarray(gt, dtype=float)


def execute_run(run_cfg: Dict[str, Any], out_dir, extra_summary=None) -> List[RunRecord]:
    """Run a resolved run config and write chain JSONL, summary and metrics CSV."""
    out = Path(out_dir)
    cfg = RunConfig.from_dict(run_cfg)
    records = run_chains(cfg)
    gt = _ground_truth(run_cfg["target"])
    extra = {"ground_truth_mean": None if gt is None else gt.tolist()}
    if extra_summary:
        extra.update(extra_summary)
    write_records(out, records, run_cfg, extra)
    write_csv(out / "metrics.csv", METRIC_HEADER, metrics_rows(records, gt, run_cfg["cost_model"]))
    return records


def records_from_dir(run_dir) -> List[RunRecord]:
    """Rebuild RunRecords from a run directory written by :func:`execute_run`."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    meta = summary.get("metadata", {})
    records = []
    for ch in summary["chains"]:
        rows = read_jsonl(run_dir / f"chain-{ch['chain']}.jsonl")
        xbar = [r.get("xbar") for r in rows]
        d = len(rows[0]["state"]) if rows else 0
        records.append(
            RunRecord(
                chain=ch["chain"],
                seed=ch.get("seed"),
                n=np.array([r["n"] for r in rows], dtype=int),
                state=np.array([r["state"] for r in rows], dtype=float).reshape(len(rows), d),
                theta=np.array([r["theta"] for r in rows], dtype=float).reshape(len(rows), -1),
                mu=np.array([r["mu"] for r in rows], dtype=float).reshape(len(rows), -1),
                accepted=np.array([r["accepted"] for r in rows], dtype=bool),
                grad_evals=np.array([r["grad_evals"] for r in rows], dtype=np.int64),
                alpha=np.array([r["alpha"] for r in rows], dtype=float),
                xbar=np.array([[np.nan] * d if x is None else x for x in xbar], dtype=float).reshape(len(rows), d),
                fault=ch.get("fault"),
                summary=ch,
                metadata=meta,
            )
        )
    return records


def report(run_dir, cost_model: Optional[str] = None) -> Path:
    """Write ``report.csv`` for a run directory (step- and budget-keyed metrics)."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    records = records_from_dir(run_dir)
    gt = summary.get("ground_truth_mean")
    model = cost_model or summary.get("metadata", {}).get("cost_model", "measured")
    rows = metrics_rows(records, None if gt is None else np.asarray(gt), model)
    acc = [float(np.mean([r.accepted[: i + 1].mean() for r in records])) for i in range(len(rows))]
    return write_csv(
        run_dir / "report.csv",
        METRIC_HEADER + ["acceptance_rate"],
        [row + [a] for row, a in zip(rows, acc)],
    )


# ---------------------------------------------------------------------------
# Experiment kinds
# ---------------------------------------------------------------------------


def _variant(run_cfg, alpha_value):
    out = copy.deepcopy(run_cfg)
    out["alpha"] = {"kind": "fixed", "alpha": alpha_value}
    return resolve_run(out)


def mse_benchmark(cfg: Dict[str, Any], out_dir) -> Dict[str, Any]:
    """Baseline (alpha=0) against each alpha in ``comparison.alphas``; MSE by step and by budget.

    With ``comparison.equal_budget`` (default true) and a fixed-cost model the
    repellent runs get ``n_iter * cost(baseline) / cost(repellent)`` iterations
    so every variant ends at the same budget.
    """
    comp = cfg.get("comparison", {})
    alphas = comp.get("alphas", [cfg["run"]["alpha"].get("alpha", 1.0)])
    cost_model = comp.get("cost_model", "srmc-3d")
    equal_budget = comp.get("equal_budget", True) and cost_model != "measured"
    out = Path(out_dir)
    rows, terminal = [], {}
    dim = build_target(cfg["run"]["target"]).dim
    for a in [0.0] + [float(x) for x in alphas]:
        run_cfg = _variant(cfg["run"], a)
        if equal_budget and a > 0:
            ratio = M.cost_per_iteration(cost_model, dim, True) / M.cost_per_iteration(cost_model, dim, False)
            run_cfg["n_iter"] = max(1, int(run_cfg["n_iter"] // ratio))
        records = execute_run(run_cfg, out / f"alpha-{a:g}")
        gt = _ground_truth(run_cfg["target"])
        if gt is None:
            raise ValueError("mse-benchmark needs a target with a ground-truth mean")
        for r in metrics_rows(records, gt, cost_model):
            rows.append([a] + r)
        terminal[f"{a:g}"] = rows[-1][3]
    write_csv(out / "mse.csv", ["alpha"] + METRIC_HEADER, rows)
    return {"terminal_mse": terminal, "cost_model": cost_model}


def first_crossing(record: RunRecord, coordinate: int, threshold: float) -> Optional[int]:
    hit = record.state[:, coordinate] > threshold
    return int(record.n[np.argmax(hit)]) if hit.any() else None


def metastability_vignette(cfg: Dict[str, Any], out_dir) -> Dict[str, Any]:
    """Escape times from the trap for the baseline and the repellent run."""
    comp = cfg.get("comparison", {})
    coord = int(comp.get("coordinate", 0))
    threshold = float(comp.get("threshold", 1.0))
    out = Path(out_dir)
    result, rows = {}, []
    alpha = cfg["run"]["alpha"].get("alpha", 0.0)
    for label, a in (("baseline", 0.0), ("repellent", alpha)):
        records = execute_run(_variant(cfg["run"], a), out / label)
        times = [first_crossing(r, coord, threshold) for r in records]
        for r, t in zip(records, times):
            rows.append([label, r.chain, "" if t is None else t])
        result[label] = {"escaped": sum(t is not None for t in times), "chains": len(times), "first_crossing": times}
    write_csv(out / "escape.csv", ["sampler", "chain", "first_crossing"], rows)
    return result


def mode_coverage_experiment(cfg: Dict[str, Any], out_dir) -> Dict[str, Any]:
    """Cumulative distinct-mode counts for baseline ULA and the repellent run on a mixture target."""
    target = build_target(cfg["run"]["target"])
    spec = target.spec
    centers = spec.means
    out = Path(out_dir)
    series, result = {}, {}
    alpha = cfg["run"]["alpha"].get("alpha", 0.0)
    for label, a in (("baseline", 0.0), ("repellent", alpha)):
        records = execute_run(_variant(cfg["run"], a), out / label)
        cov = M.mode_coverage([r.state for r in records], centers)
        series[label] = cov
        finals = np.stack([r.state[-1] for r in records if r.n.size])
        hist = M.ClassHistogram.from_labels(M.nearest_center(finals, centers), len(centers))
        result[label] = {
            "coverage": int(cov[-1]),
            "kl_to_uniform": M.kl_to_uniform(hist),
            "tv_to_uniform": M.tv_to_uniform(hist),
            "normalized_entropy": M.normalized_entropy(hist),
            "vendi": M.vendi_score(M.responsibility_similarity(spec, finals)),
        }
    T = min(len(s) for s in series.values())
    write_csv(
        out / "coverage.csv",
        ["step", "baseline", "repellent"],
        [[t + 1, int(series["baseline"][t]), int(series["repellent"][t])] for t in range(T)],
    )
    return result


def _cell_task(args):
    run_cfg, cell_dir = args
    records = execute_run(run_cfg, cell_dir)
    gt = _ground_truth(run_cfg["target"])
    mse = None
    if gt is not None:
        finals = [r.xbar[-1] for r in records if r.n.size and np.all(np.isfinite(r.xbar[-1]))]
        if finals:
            mse = float(np.mean([M.running_mse(x, gt) for x in finals]))
    acc = float(np.mean([r.summary["acceptance_rate"] for r in records]))
    tn = float(np.mean([np.linalg.norm(r.theta[-1]) for r in records if r.n.size]))
    return {"terminal_mse": mse, "acceptance_rate": acc, "theta_norm": tn}


def sweep(cfg: Dict[str, Any], out_dir, workers: int = 1) -> Dict[str, Any]:
    """Cartesian grid x replicas; replica r runs with seed ``run.seed + r``."""
    grid = cfg["grid"]
    axes = list(grid)
    R = int(cfg.get("replicas", 1))
    out = Path(out_dir)
    cells = list(itertools.product(*(grid[a] for a in axes)))
    tasks, index = [], []
    for ci, values in enumerate(cells):
        base = cfg["run"]
        for axis, v in zip(axes, values):
            base = apply_override(base, axis, v)
        for r in range(R):
            run_cfg = resolve_run(apply_override(base, "seed", int(base["seed"]) + r))
            tasks.append((run_cfg, out / f"cell-{ci}" / f"rep-{r}"))
            index.append(ci)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]
    rows = []
    for ci, values in enumerate(cells):
        cell_res = [res for res, i in zip(results, index) if i == ci]
        row = list(values) + [len(cell_res)]
        for key in ("terminal_mse", "acceptance_rate", "theta_norm"):
            vals = [c[key] for c in cell_res if c[key] is not None]
            row += list(mean_ci(vals)) if vals else [float("nan")] * 3
        rows.append(row)
    header = axes + ["replicas"]
    for key in ("terminal_mse", "acceptance_rate", "theta_norm"):
        header += [f"{key}_mean", f"{key}_ci_low", f"{key}_ci_high"]
    write_csv(out / "aggregate.csv", header, rows)
    return {"cells": len(cells), "runs": len(tasks)}


def run_experiment(cfg: Dict[str, Any], out_dir, workers: int = 1) -> Dict[str, Any]:
    """Dispatch on ``cfg['experiment']``; writes config.resolved.json first."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    kind = cfg["experiment"]
    if kind == "run":
        records = execute_run(cfg["run"], out)
        return {"chains": len(records), "faults": sum(r.fault is not None for r in records)}
    if kind == "mse-benchmark":
        res = mse_benchmark(cfg, out)
    elif kind == "metastability-vignette":
        res = metastability_vignette(cfg, out)
    elif kind == "mode-coverage":
        res = mode_coverage_experiment(cfg, out)
    elif kind == "sweep":
        res = sweep(cfg, out, workers)
    else:
        from .verify import run_checks

        results = run_checks(cfg.get("filter"))
        res = {"checks": [r._asdict() for r in results], "passed": all(r.passed for r in results)}
    (out / "experiment.json").write_text(json.dumps(res, indent=2, sort_keys=True, default=float) + "\n")
    return res


__all__ = [
    "execute_run",
    "report",
    "run_experiment",
    "sweep",
    "mse_benchmark",
    "metastability_vignette",
    "mode_coverage_experiment",
    "records_from_dir",
    "config_hash",
]
