"""Experiment orchestration: train/evaluate every (cell, seed), score the
baselines, aggregate mean/std tables and write the report bundle.

Output layout under the run directory::

    manifest.json
    runs/<algo>/<cell>/seed_<s>/{trace.csv, weights.csv, equity.csv,
                                 metrics.json, training_log.csv, policy.ckpt}
    baselines/<name>/{trace.csv, weights.csv, equity.csv, metrics.json}
    summary.csv  summary.json  summary.txt
    figures/cumulative_returns.{svg,png}  figures/annual_return_box.{svg,png}
"""
from __future__ import annotations

import csv
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .agents import evaluate, train
from .analytics import METRIC_NAMES, MetricsReport, compute_metrics, run_baseline, write_metrics_json
from .config import ExperimentConfig, cell_env, cell_hyper
from .env import (EpisodeResult, Market, PortfolioEnv, build_market, observation_stats, read_episode,
                  write_trace_csv, write_weights_csv)
from .indicators import compute_features
from .marketdata import AlignedDataset, DataError, align_and_fill, load_esg, load_ohlcv, split, synth_market

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("cell", "metric", "mean", "std", "min", "max", "n", "excluded")


@dataclass
class RunRecord:
    cell: str
    seed: int | None
    episode: EpisodeResult | None
    metrics: MetricsReport | None
    path: str
    training_log: str | None = None
    checkpoint: str | None = None
    seconds: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SummaryRow:
    cell: str
    metric: str
    mean: float | None
    std: float | None
    min: float | None
    max: float | None
    n: int
    excluded: int

    @property
    def single_sample(self) -> bool:
        return self.n == 1


@dataclass
class SummaryTable:
    rows: list[SummaryRow] = field(default_factory=list)

    def get(self, cell: str, metric: str) -> SummaryRow:
        for r in self.rows:
            if r.cell == cell and r.metric == metric:
                return r
        raise KeyError((cell, metric))

    def cells(self) -> list[str]:
        return list(dict.fromkeys(r.cell for r in self.rows))

    def to_csv(self) -> str:
        fmt = lambda v: "" if v is None else repr(float(v))
        lines = [",".join(SUMMARY_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([r.cell, r.metric, fmt(r.mean), fmt(r.std), fmt(r.min), fmt(r.max),
                                   str(r.n), str(r.excluded)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SummaryTable":
        rows = list(csv.DictReader(text.splitlines()))
        num = lambda v: None if v == "" else float(v)
        return cls([SummaryRow(r["cell"], r["metric"], num(r["mean"]), num(r["std"]), num(r["min"]),
                               num(r["max"]), int(r["n"]), int(r["excluded"])) for r in rows])

    def to_json(self) -> str:
        return json.dumps([r.__dict__ for r in self.rows], indent=2)


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> AlignedDataset:
    src = cfg.data
    if src.synth is not None:
        return synth_market(src.synth, src.synth_days, src.synth_seed)
    return align_and_fill(load_ohlcv(src.ohlcv, src.tickers), load_esg(src.esg))


@dataclass
class Prepared:
    dataset: AlignedDataset
    train: AlignedDataset
    trade: AlignedDataset
    train_market: Market
    trade_market: Market


def prepare(cfg: ExperimentConfig) -> Prepared:
    ds = load_data(cfg)
    panel = compute_features(ds, cfg.indicators)
    train_ds, trade_ds = split(ds, cfg.train_end, cfg.trade_end)
    train_m = build_market(train_ds, panel)
    trade_m = build_market(trade_ds, panel)
    if len(train_m) < 2:
        raise DataError(f"training split has {len(train_m)} usable days after indicator warm-up")
    return Prepared(ds, train_ds, trade_ds, train_m, trade_m)


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------

def write_equity_csv(ep: EpisodeResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "value"])
        for d, v in zip(ep.dates, ep.values):
            w.writerow([d, repr(float(v))])


def _write_episode(ep: EpisodeResult, folder: Path) -> MetricsReport:
    folder.mkdir(parents=True, exist_ok=True)
    write_trace_csv(ep, folder / "trace.csv")
    write_weights_csv(ep, folder / "weights.csv")
    write_equity_csv(ep, folder / "equity.csv")
    metrics = compute_metrics(ep.net_returns)
    write_metrics_json(metrics, folder / "metrics.json")
    return metrics


def run_cell(task) -> RunRecord:
    """Train and evaluate one (cell, seed); failures come back as records."""
    cfg, cell_id, algo, cell, seed, train_m, trade_m, out = task
    folder = Path(out) / "runs" / cell_id / f"seed_{seed}"
    t0 = time.perf_counter()
    try:
        env_cfg = cell_env(cfg, cell)
        stats = observation_stats(train_m, env_cfg)
        hyper = cell_hyper(cfg, algo, seed)
        policy, log = train(PortfolioEnv(train_m, env_cfg, stats), hyper)
        ep = evaluate(policy, PortfolioEnv(trade_m, env_cfg, stats))
        metrics = _write_episode(ep, folder)
        log.write_csv(folder / "training_log.csv")
        policy.save(folder / "policy.ckpt")
        return RunRecord(cell_id, seed, ep, metrics, str(folder), str(folder / "training_log.csv"),
                         str(folder / "policy.ckpt"), time.perf_counter() - t0)
    except Exception as exc:  # isolated per run; reported in the manifest
        logger.error("run %s seed %s failed: %s", cell_id, seed, exc)
        return RunRecord(cell_id, seed, None, None, str(folder), seconds=time.perf_counter() - t0,
                         error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=5)}")


def run_baselines(cfg: ExperimentConfig, prep: Prepared, out: Path) -> list[RunRecord]:
    # the agents only trade usable days; replay the baselines on the same span
    n_skip = len(prep.trade) - len(prep.trade_market)
    trade = prep.trade.take(slice(n_skip, None))
    history = prep.dataset.take(prep.dataset.calendar < trade.calendar[0])
    records = []
    for spec in cfg.baselines:
        folder = out / "baselines" / spec.name
        t0 = time.perf_counter()
        try:
            ep = run_baseline(trade, spec, history, cfg.env.transaction_cost, cfg.env.esg_field)
            metrics = _write_episode(ep, folder)
            records.append(RunRecord(f"baseline/{spec.name}", None, ep, metrics, str(folder),
                                     seconds=time.perf_counter() - t0))
        except Exception as exc:
            logger.error("baseline %s failed: %s", spec.name, exc)
            records.append(RunRecord(f"baseline/{spec.name}", None, None, None, str(folder),
                                     seconds=time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}"))
    return records


def run_experiment(cfg: ExperimentConfig, out_dir=None, parallel: int | None = None):
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg)
    tasks = [(cfg, cid, algo, cell, seed, prep.train_market, prep.trade_market, str(out))
             for cid, algo, cell in cfg.cell_ids() for seed in cfg.seeds]
    workers = parallel or cfg.parallel
    logger.info("%d runs over %d cells, %d worker(s)", len(tasks), len(cfg.cell_ids()), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_cell, tasks))
    else:
        records = [run_cell(t) for t in tasks]
    records += run_baselines(cfg, prep, out)

    table = aggregate([r for r in records if r.ok])
    write_manifest(cfg, prep.dataset, records, out)
    emit_report(records, table, out)
    return records, table


def write_manifest(cfg: ExperimentConfig, ds: AlignedDataset, records: list[RunRecord], out: Path) -> None:
    manifest = {
        "config_hash": cfg.config_hash(),
        "config": cfg.source_text,
        "dataset_fingerprint": ds.fingerprint(),
        "seeds": list(cfg.seeds),
        "cells": [c for c, _, _ in cfg.cell_ids()],
        "runs": [
            {
                "cell": r.cell,
                "seed": r.seed,
                "status": "ok" if r.ok else "failed",
                "path": str(Path(r.path).relative_to(out)),
                "seconds": round(r.seconds, 3),
                **({"error": r.error} if r.error else {}),
            }
            for r in records
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

def aggregate(records: list[RunRecord], pooled: bool = True) -> SummaryTable:
    """Per-cell mean, sample std, min and max of every metric.

    Degenerate values are left out and counted in ``excluded``. With more
    than one algorithm, ``pooled/<cell>`` rows combine them.
    """
    if not records:
        raise ValueError("no run records to aggregate")
    groups: dict[str, list[MetricsReport]] = {}
    for r in records:
        groups.setdefault(r.cell, []).append(r.metrics)
    if pooled:
        algos = {c.split("/")[0] for c in groups if not c.startswith("baseline/")}
        if len(algos) > 1:
            for r in records:
                if not r.cell.startswith("baseline/"):
                    groups.setdefault("pooled/" + r.cell.split("/", 1)[1], []).append(r.metrics)

    table = SummaryTable()
    for cell, reports in groups.items():
        for m in METRIC_NAMES:
            vals = [rep.value(m) for rep in reports]
            good = np.array([v for v in vals if v is not None], dtype=float)
            n = len(good)
            if n == 0:
                table.rows.append(SummaryRow(cell, m, None, None, None, None, 0, len(vals)))
                continue
            std = float(good.std(ddof=1)) if n > 1 else 0.0
            table.rows.append(SummaryRow(cell, m, float(good.mean()), std, float(good.min()),
                                         float(good.max()), n, len(vals) - n))
    return table


# --------------------------------------------------------------------------
# reporting
# --------------------------------------------------------------------------

def format_table(table: SummaryTable, metrics=METRIC_NAMES) -> str:
    """Plain-text ``mean ± std`` grid, one row per metric and one column per cell."""
    cells = table.cells()
    head = ["Metric name", *cells]
    body = []
    for m in metrics:
        line = [m.replace("_", " ").capitalize()]
        for c in cells:
            r = table.get(c, m)
            if r.mean is None:
                line.append("undefined")
            elif r.n == 1:
                line.append(f"{r.mean:.4f}")
            else:
                line.append(f"{r.mean:.4f} ± {r.std:.4f}")
        body.append(line)
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    fmt = lambda row: "| " + " | ".join(v.ljust(w) for v, w in zip(row, widths)) + " |"
    return "\n".join([sep, fmt(head), sep, *(fmt(r) for r in body), sep]) + "\n"


def emit_report(records: list[RunRecord], table: SummaryTable, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc

    files = {
        "summary_csv": out / "summary.csv",
        "summary_json": out / "summary.json",
        "summary_txt": out / "summary.txt",
    }
    files["summary_csv"].write_text(table.to_csv(), encoding="utf-8")
    files["summary_json"].write_text(table.to_json() + "\n", encoding="utf-8")
    files["summary_txt"].write_text(format_table(table), encoding="utf-8")

    ok = [r for r in records if r.ok and r.episode is not None]
    curves: dict[str, list[np.ndarray]] = {}
    baselines: dict[str, np.ndarray] = {}
    samples: dict[str, list[float]] = {}
    reference = None
    for r in ok:
        if r.cell.startswith("baseline/"):
            name = r.cell.split("/", 1)[1]
            baselines[name] = r.episode.values
            if name == "stratified":
                reference = r.metrics.value("annual_return")
        else:
            curves.setdefault(r.cell, []).append(r.episode.values)
            v = r.metrics.value("annual_return")
            if v is not None:
                samples.setdefault(r.cell, []).append(v)

    figdir = out / "figures"
    figdir.mkdir(exist_ok=True)
    mean_curves = {c: np.mean(np.vstack(v), axis=0) for c, v in curves.items()}
    if mean_curves or baselines:
        files["cumulative_svg"] = plotting.cumulative_returns(
            mean_curves, baselines, figdir / "cumulative_returns.svg")[0]
    if samples:
        files["box_svg"] = plotting.metric_boxplot(samples, reference, figdir / "annual_return_box.svg")[0]
    return files


def load_records(run_dir) -> list[RunRecord]:
    """Rebuild records from a finished run directory (metrics recomputed from traces)."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    records = []
    for entry in manifest["runs"]:
        folder = run_dir / entry["path"]
        if entry["status"] != "ok":
            records.append(RunRecord(entry["cell"], entry["seed"], None, None, str(folder),
                                     error=entry.get("error", "failed")))
            continue
        ep = read_episode(folder / "trace.csv", folder / "weights.csv")
        records.append(RunRecord(entry["cell"], entry["seed"], ep, compute_metrics(ep.net_returns), str(folder),
                                 seconds=entry.get("seconds", 0.0)))
    return records


def report(run_dir) -> SummaryTable:
    records = load_records(run_dir)
    table = aggregate([r for r in records if r.ok])
    emit_report(records, table, run_dir)
    return table
