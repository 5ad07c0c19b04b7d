"""Adaptive multi-strategy controller over an asset x strategy grid.

Each cycle evaluates every (asset, strategy) combination virtually on the
previous period, keeps the ones with positive ROI, splits the portfolio NAV
across them (equally or in proportion to ROI) and executes them on the
current period.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import InsufficientData, InvalidNav, InvalidParams, MissingAssetData
from .marketdata import MarketData
from .strategy import OracleSpec, StrategyRunResult, StrategySpec, run_strategy

log = logging.getLogger(__name__)

FIXED = "fixed"
WEIGHTED = "weighted"
HOUR_MS = 3_600_000

Key = tuple  # (asset, spec id)


@dataclass(frozen=True)
class PortfolioConfig:
    assets: tuple[str, ...]
    specs: tuple[StrategySpec, ...]
    period_hours: float
    policy: str = WEIGHTED
    initial_capital: float = 10_000.0
    maker_fee: float = 0.001
    taker_fee: float = 0.001
    notional_capital: float = 1_000.0
    in_sample: bool = False
    oracle: OracleSpec = OracleSpec()

    def __post_init__(self):
        if not self.assets:
            raise InvalidParams("at least one asset is required")
        if len(set(self.assets)) != len(self.assets):
            raise InvalidParams("assets must be unique")
        if not self.specs:
            raise InvalidParams("at least one strategy is required")
        if self.policy not in (FIXED, WEIGHTED):
            raise InvalidParams(f"unknown policy {self.policy!r}")
        if not self.period_hours > 0 or (self.period_hours * HOUR_MS) % 1:
            raise InvalidParams("period_hours must be positive and a whole number of ms")
        if not (self.initial_capital > 0 and self.notional_capital > 0):
            raise InvalidParams("capital must be positive")
        # canonical order makes results independent of config ordering
        object.__setattr__(self, "assets", tuple(sorted(self.assets)))
        specs = {s.id: s for s in self.specs}
        object.__setattr__(self, "specs", tuple(specs[k] for k in sorted(specs)))

    @property
    def period_ms(self) -> int:
        return int(self.period_hours * HOUR_MS)

    @property
    def fees(self) -> dict:
        return {"maker": self.maker_fee, "taker": self.taker_fee}

    def to_dict(self) -> dict:
        return {
            "assets": list(self.assets),
            "specs": [s.id for s in self.specs],
            "period_hours": self.period_hours,
            "policy": self.policy,
            "initial_capital": self.initial_capital,
            "fees": self.fees,
            "notional_capital": self.notional_capital,
            "in_sample": self.in_sample,
            "oracle": {"kind": self.oracle.kind, "sigma": self.oracle.sigma, "seed": self.oracle.seed},
        }


@dataclass
class EvaluationReport:
    period: int
    entries: dict[Key, float]  # sorted by (asset, spec id)


@dataclass
class AllocationGrid:
    period: int
    weights: dict[Key, float]


def _stable_sum(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def allocate(report: EvaluationReport, policy: str) -> AllocationGrid:
    """Weights over the positive-ROI combinations of ``report``."""
    positive = {k: r for k, r in sorted(report.entries.items()) if r > 0}
    if not positive:
        return AllocationGrid(report.period, {})
    if policy == FIXED:
        w = 1.0 / len(positive)
        return AllocationGrid(report.period, {k: w for k in positive})
    if policy == WEIGHTED:
        total = _stable_sum(positive.values())
        return AllocationGrid(report.period, {k: r / total for k, r in positive.items()})
    raise InvalidParams(f"unknown policy {policy!r}")


def chain_roi(nav: Sequence[float]) -> float:
    if len(nav) < 2:
        raise InvalidNav("need at least two NAV points")
    if any(not v > 0 for v in nav):
        raise InvalidNav("NAV values must be positive")
    return nav[-1] / nav[0] - 1


# ---------------------------------------------------------------------------
# task execution

@dataclass(frozen=True)
class Task:
    asset: str
    spec: StrategySpec
    start: int
    end: int
    capital: float


_DATASETS: dict[str, MarketData] = {}
_RUN_ARGS: dict = {}


def _run_task(task: Task, keep_fills: bool = False) -> StrategyRunResult:
    data = _DATASETS[task.asset]
    oracle = _RUN_ARGS["oracle"].build(data)
    result = run_strategy(task.spec, data.window(task.start, task.end), task.capital,
                          _RUN_ARGS["fees"], oracle)
    if not keep_fills:
        result.fills = []
    return result


class Runner:
    """Runs strategy tasks serially or in forked worker processes.

    Results always come back in task order, so aggregation is independent of
    the schedule.  Market data reaches the workers through fork inheritance.
    """

    def __init__(self, datasets: Mapping[str, MarketData], fees: dict, oracle: OracleSpec,
                 jobs: int = 1):
        self.datasets = dict(datasets)
        self.fees = dict(fees)
        self.oracle = oracle
        self.jobs = max(1, int(jobs))
        self._pool = None

    def __enter__(self) -> Runner:
        _DATASETS.clear()
        _DATASETS.update(self.datasets)
        _RUN_ARGS.update(fees=self.fees, oracle=self.oracle)
        for data in self.datasets.values():
            data.lists  # build caches once, before forking
        if self.jobs > 1:
            self._pool = ProcessPoolExecutor(self.jobs, mp_context=multiprocessing.get_context("fork"))
        return self

    def __exit__(self, *exc) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def map(self, tasks: Sequence[Task], keep_fills: bool = False) -> list[StrategyRunResult]:
        if self._pool is None or len(tasks) < 2:
            return [_run_task(t, keep_fills) for t in tasks]
        chunk = max(1, len(tasks) // (4 * self.jobs))
        return list(self._pool.map(_run_task, tasks, [keep_fills] * len(tasks), chunksize=chunk))


def evaluate_grid(assets: Sequence[str], specs: Sequence[StrategySpec], start: int, end: int,
                  runner: Runner, notional: float = 1_000.0, period: int = 0) -> EvaluationReport:
    """Virtual run of every (asset, spec) on ``[start, end)`` from ``notional``."""
    for a in assets:
        if a not in runner.datasets:
            raise MissingAssetData(f"no data for asset {a!r}")
    tasks = [Task(a, s, start, end, notional)
             for a in sorted(assets) for s in sorted(specs, key=lambda s: s.id)]
    results = runner.map(tasks)
    return EvaluationReport(period, {(t.asset, t.spec.id): r.roi for t, r in zip(tasks, results)})


# ---------------------------------------------------------------------------
# walk-forward

@dataclass
class PeriodRecord:
    index: int
    start: int
    end: int
    nav_start: float
    nav_end: float
    report: EvaluationReport | None
    allocation: AllocationGrid
    deployed: dict[Key, float] = field(default_factory=dict)
    exec_rois: dict[Key, float] = field(default_factory=dict)
    idle: float = 0.0


@dataclass
class PortfolioResult:
    config: PortfolioConfig
    nav: list[tuple[int, float]]
    periods: list[PeriodRecord]

    @property
    def total_roi(self) -> float:
        return chain_roi([v for _, v in self.nav])

    @property
    def n_executed(self) -> int:
        return sum(1 for p in self.periods if p.report is not None)

    def to_dict(self) -> dict:
        def entries(d):
            return [{"asset": a, "spec_id": s, "value": v} for (a, s), v in d.items()]

        return {
            "config": self.config.to_dict(),
            "total_roi": self.total_roi,
            "nav": [{"timestamp": t, "value": v} for t, v in self.nav],
            "periods": [
                {
                    "index": p.index,
                    "start": p.start,
                    "end": p.end,
                    "nav_start": p.nav_start,
                    "nav_end": p.nav_end,
                    "idle": p.idle,
                    "evaluation": None if p.report is None else entries(p.report.entries),
                    "allocation": entries(p.allocation.weights),
                    "deployed": entries(p.deployed),
                    "exec_roi": entries(p.exec_rois),
                }
                for p in self.periods
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "asset", "spec_id", "eval_roi", "weight", "exec_roi"])
        for p in self.periods:
            if p.report is None:
                continue
            for key, roi in p.report.entries.items():
                weight = p.allocation.weights.get(key, 0.0)
                exec_roi = p.exec_rois.get(key)
                w.writerow([p.index, key[0], key[1], repr(roi), repr(weight),
                            "" if exec_roi is None else repr(exec_roi)])
        return buf.getvalue()

    def nav_csv(self) -> str:
        lines = ["period,timestamp,nav"]
        lines += [f"{i},{t},{v!r}" for i, (t, v) in enumerate(self.nav)]
        return "\n".join(lines) + "\n"


def period_bounds(dataset: Mapping[str, MarketData], assets: Sequence[str],
                  period_ms: int) -> list[tuple[int, int]]:
    for a in assets:
        if a not in dataset:
            raise MissingAssetData(f"no data for asset {a!r}")
    start = max(dataset[a].start for a in assets)
    end = min(dataset[a].end for a in assets)
    n = (end - start) // period_ms if end > start else 0
    if n < 2:
        raise InsufficientData(
            f"data range of {(end - start) / HOUR_MS:g} h holds {n} period(s) of "
            f"{period_ms / HOUR_MS:g} h; need at least 2")
    return [(start + i * period_ms, start + (i + 1) * period_ms) for i in range(n)]


def run_walk_forward(config: PortfolioConfig, dataset: Mapping[str, MarketData],
                     jobs: int = 1) -> PortfolioResult:
    bounds = period_bounds(dataset, config.assets, config.period_ms)
    nav_value = float(config.initial_capital)
    nav = [(bounds[0][0], nav_value)]
    periods = []
    datasets = {a: dataset[a] for a in config.assets}
    with Runner(datasets, config.fees, config.oracle, jobs) as runner:
        for i, (start, end) in enumerate(bounds):
            if config.in_sample:
                eval_bounds = (start, end)
            else:
                eval_bounds = bounds[i - 1] if i > 0 else None
            report = None
            grid = AllocationGrid(i, {})
            if eval_bounds is not None:
                report = evaluate_grid(config.assets, config.specs, *eval_bounds, runner,
                                       config.notional_capital, period=i)
                grid = allocate(report, config.policy)
            specs = {s.id: s for s in config.specs}
            keys = list(grid.weights)
            deployed = {k: grid.weights[k] * nav_value for k in keys}
            tasks = [Task(a, specs[sid], start, end, deployed[(a, sid)]) for a, sid in keys]
            results = runner.map(tasks)
            idle = nav_value - _stable_sum(deployed.values())
            finals = [r.final_value for r in results]
            new_nav = _stable_sum(finals) + idle
            periods.append(PeriodRecord(
                i, start, end, nav_value, new_nav, report, grid, deployed,
                {k: r.roi for k, r in zip(keys, results)}, idle,
            ))
            log.info("period %d: %d combos deployed, nav %.6g -> %.6g", i, len(keys), nav_value, new_nav)
            nav_value = new_nav
            nav.append((end, nav_value))
    return PortfolioResult(config, nav, periods)
