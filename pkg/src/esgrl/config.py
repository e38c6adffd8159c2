"""Experiment configuration: a YAML document whose key tree mirrors
:class:`ExperimentConfig`. Unknown keys are errors, and all problems are
collected before anything runs.

Example::

    synth:
      days: 900
      seed: 11
      correlation: 0.6
      assets:
        - {ticker: AAA, drift: 0.0005, volatility: 0.01, esg: [7, 8, 6]}
        - {ticker: BBB, drift: 0.0004, volatility: 0.012, esg: [3, 4, 2]}
    train_end: 2011-12-30
    trade_end: 2012-06-29
    env: {lam: 1.0}
    agent: {algorithm: A2C, total_timesteps: 20000}
    seeds: [0, 1, 2]
    grid:
      - {regulate: true, esg_in_state: true}
      - {regulate: false, esg_in_state: false}
    baselines:
      - {kind: stratified}
      - {kind: min_variance, lookback: 60, rebalance: 21}
    output: runs/demo
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from datetime import date
from pathlib import Path

import yaml

from .agents import AgentHyper
from .analytics import BaselineSpec
from .env import EnvConfig
from .indicators import IndicatorConfig
from .marketdata import SynthAsset, SynthSpec


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


@dataclass(frozen=True)
class GridCell:
    regulate: bool
    esg_in_state: bool

    @property
    def slug(self) -> str:
        return f"{'regulated' if self.regulate else 'free'}-{'esg' if self.esg_in_state else 'noesg'}"


@dataclass(frozen=True)
class DataSource:
    ohlcv: str | None = None
    esg: str | None = None
    tickers: tuple[str, ...] | None = None
    synth: SynthSpec | None = None
    synth_days: int = 0
    synth_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSource
    train_end: date
    trade_end: date
    env: EnvConfig = EnvConfig()
    agent: AgentHyper = AgentHyper()
    algorithms: tuple[str, ...] = ()
    indicators: IndicatorConfig = IndicatorConfig()
    baselines: tuple[BaselineSpec, ...] = (BaselineSpec("stratified"),)
    seeds: tuple[int, ...] = (0,)
    grid: tuple[GridCell, ...] = (GridCell(True, True), GridCell(False, False))
    output: str = "runs/experiment"
    parallel: int = 1
    agent_overrides: tuple[tuple[str, object], ...] = ()
    source_text: str = field(default="", compare=False, repr=False)

    def cell_ids(self) -> list[tuple[str, str, GridCell]]:
        algos = self.algorithms or (self.agent.algorithm,)
        return [(f"{a}/{c.slug}", a, c) for a in algos for c in self.grid]

    def config_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()[:16]


_TOP_KEYS = {"data", "synth", "train_end", "trade_end", "env", "agent", "algorithms", "indicators",
             "baselines", "seeds", "grid", "output", "parallel"}
_SYNTH_KEYS = {"days", "seed", "correlation", "start", "assets"}
_ASSET_KEYS = {"ticker", "drift", "volatility", "esg", "schedule", "start_price"}
_DATA_KEYS = {"ohlcv", "esg", "tickers"}


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _unknown(d: dict, allowed: set[str], where: str, errors: list[str]) -> None:
    for k in d:
        if k not in allowed:
            errors.append(f"{where}: unknown key {k!r}")


def _date(v, where: str, errors: list[str]) -> date | None:
    if isinstance(v, date):
        return v
    try:
        return date.fromisoformat(str(v))
    except ValueError:
        errors.append(f"{where}: expected YYYY-MM-DD, got {v!r}")
        return None


def _build(cls, raw, where: str, errors: list[str], exclude: set[str] = frozenset()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"{where}: expected a mapping")
        return None
    _unknown(raw, _field_names(cls) - set(exclude), where, errors)
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in raw.items() if k in _field_names(cls)}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def parse_synth(raw, where: str, errors: list[str]) -> tuple[SynthSpec | None, int, int]:
    if not isinstance(raw, dict):
        errors.append(f"{where}: expected a mapping")
        return None, 0, 0
    _unknown(raw, _SYNTH_KEYS, where, errors)
    assets = []
    for i, a in enumerate(raw.get("assets") or []):
        loc = f"{where}.assets[{i}]"
        if not isinstance(a, dict):
            errors.append(f"{loc}: expected a mapping")
            continue
        _unknown(a, _ASSET_KEYS, loc, errors)
        try:
            esg = a.get("esg", (5.0, 5.0, 5.0))
            if isinstance(esg, (int, float)):
                esg = (esg, esg, esg)
            sched = tuple((int(off), tuple(float(x) for x in s)) for off, s in a.get("schedule", []))
            assets.append(SynthAsset(str(a["ticker"]), float(a["drift"]), float(a["volatility"]),
                                     tuple(float(x) for x in esg), sched, float(a.get("start_price", 100.0))))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{loc}: {exc!r}")
    if not assets:
        errors.append(f"{where}: at least one asset is required")
    days = raw.get("days")
    if not isinstance(days, int) or days < 2:
        errors.append(f"{where}.days: expected an integer >= 2")
        days = 0
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append(f"{where}.seed: expected an integer")
        seed = 0
    start = _date(raw.get("start", "2009-01-02"), f"{where}.start", errors)
    try:
        spec = SynthSpec(tuple(assets), float(raw.get("correlation", 0.0)), start or date(2009, 1, 2))
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        spec = None
    return spec, days, seed


def parse_config(raw: dict, source_text: str = "", base_dir: Path | None = None) -> ExperimentConfig:
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])
    _unknown(raw, _TOP_KEYS, "config", errors)

    if ("data" in raw) == ("synth" in raw):
        errors.append("config: exactly one of 'data' or 'synth' is required")
        source = DataSource()
    elif "synth" in raw:
        spec, days, seed = parse_synth(raw["synth"], "synth", errors)
        source = DataSource(synth=spec, synth_days=days, synth_seed=seed)
    else:
        d = raw["data"] or {}
        _unknown(d, _DATA_KEYS, "data", errors)
        paths = {}
        for key in ("ohlcv", "esg"):
            if key not in d:
                errors.append(f"data.{key}: required")
                continue
            p = Path(d[key])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                errors.append(f"data.{key}: file not found: {p}")
            paths[key] = str(p)
        tickers = tuple(d["tickers"]) if d.get("tickers") else None
        source = DataSource(paths.get("ohlcv"), paths.get("esg"), tickers)

    train_end = _date(raw.get("train_end"), "train_end", errors) if "train_end" in raw else None
    trade_end = _date(raw.get("trade_end"), "trade_end", errors) if "trade_end" in raw else None
    if "train_end" not in raw:
        errors.append("train_end: required")
    if "trade_end" not in raw:
        errors.append("trade_end: required")
    if train_end and trade_end and not train_end < trade_end:
        errors.append(f"train_end {train_end} must precede trade_end {trade_end}")

    env = _build(EnvConfig, raw.get("env"), "env", errors, exclude={"regulate", "esg_in_state"})
    agent = _build(AgentHyper, raw.get("agent"), "agent", errors, exclude={"seed"})
    ind = _build(IndicatorConfig, raw.get("indicators"), "indicators", errors)

    algorithms = tuple(str(a).upper() for a in raw.get("algorithms") or ())
    for a in algorithms:
        if a not in ("A2C", "PPO"):
            errors.append(f"algorithms: unknown algorithm {a!r}")
    overrides = {k: (tuple(v) if isinstance(v, list) else v)
                 for k, v in (raw.get("agent") or {}).items() if k != "algorithm"}
    if agent is not None:
        for a in algorithms:
            try:
                AgentHyper(**{**overrides, "algorithm": a})
            except (TypeError, ValueError) as exc:
                errors.append(f"algorithms: {a}: {exc}")

    baselines = []
    for i, b in enumerate(raw.get("baselines", [{"kind": "stratified"}]) or []):
        spec = _build(BaselineSpec, b, f"baselines[{i}]", errors)
        if spec is not None:
            baselines.append(spec)
    if not any(b.kind == "stratified" for b in baselines):
        baselines.insert(0, BaselineSpec("stratified"))

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        errors.append("seeds: expected a non-empty list of integers")
        seeds = [0]
    elif len(set(seeds)) != len(seeds):
        errors.append("seeds: duplicates")

    grid = []
    for i, c in enumerate(raw.get("grid") or [{"regulate": True, "esg_in_state": True},
                                               {"regulate": False, "esg_in_state": False}]):
        if not isinstance(c, dict) or set(c) != {"regulate", "esg_in_state"} or not all(
                isinstance(v, bool) for v in c.values()):
            errors.append(f"grid[{i}]: expected {{regulate: bool, esg_in_state: bool}}")
            continue
        grid.append(GridCell(c["regulate"], c["esg_in_state"]))
    if len(set(grid)) != len(grid):
        errors.append("grid: duplicate cells")

    parallel = raw.get("parallel", 1)
    if not isinstance(parallel, int) or parallel < 1:
        errors.append("parallel: expected an integer >= 1")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        data=source, train_end=train_end, trade_end=trade_end, env=env, agent=agent,
        algorithms=algorithms, indicators=ind, baselines=tuple(baselines), seeds=tuple(seeds),
        grid=tuple(grid), output=str(raw.get("output", "runs/experiment")), parallel=parallel,
        agent_overrides=tuple(sorted(overrides.items())) if agent is not None else (),
        source_text=source_text,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return parse_config(raw, text, path.parent)


def cell_env(cfg: ExperimentConfig, cell: GridCell) -> EnvConfig:
    return replace(cfg.env, regulate=cell.regulate, esg_in_state=cell.esg_in_state)


def cell_hyper(cfg: ExperimentConfig, algorithm: str, seed: int) -> AgentHyper:
    # unset knobs fall back to the per-algorithm defaults
    return AgentHyper(**dict(cfg.agent_overrides), algorithm=algorithm, seed=seed)


def describe(cfg: ExperimentConfig) -> str:
    return json.dumps({
        "cells": [c for c, _, _ in cfg.cell_ids()],
        "seeds": list(cfg.seeds),
        "baselines": [b.name for b in cfg.baselines],
        "train_end": str(cfg.train_end),
        "trade_end": str(cfg.trade_end),
    }, indent=2)
