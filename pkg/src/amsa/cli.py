"""``amsa`` command line: synth | backtest | portfolio | learn | report.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data validation
error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .controller import PortfolioConfig, Runner, Task, run_walk_forward
from .errors import ConfigError, DataError
from .exchange import FILL_CSV_HEADER
from .heatmap import render_svg
from .learning import (
    METRIC_AXIS,
    DailyRoiRecord,
    build_cube,
    daily_roi_records,
    slice_cube,
    spots_csv,
    top_spots,
)
from .marketdata import (
    DAY_MS,
    METRIC_NAMES,
    MarketDay,
    MetricVector,
    format_lob_jsonl,
    format_trades_csv,
    market_days,
    ms_to_day,
)
from .strategy import strategy_grid

log = logging.getLogger("amsa")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 2, 3, 4

DAILY_ROI_HEADER = ["day", "spec_id", "spread_pct", "cancel_threshold_pct", "refresh_secs", "roi"]
METRICS_HEADER = ["day", *METRIC_NAMES[:4], "volume", "volumeN"]


class Outputs:
    """Writes files into the output directory and records them for the manifest."""

    def __init__(self, out: Path):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, dict] = {}

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.files[name] = {
            "sha256": hashlib.sha256(data).hexdigest(),
            "written_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        }
        return path

    def manifest(self, command: str, cfg: RunConfig, assets=None) -> None:
        sources = cfg.assets if assets is None else {a: cfg.assets[a] for a in assets}
        doc = {
            "tool": "amsa",
            "version": __version__,
            "command": command,
            "config": cfg.echo(),
            "inputs": {name: {**src.describe(), "sha256": src.digest()} for name, src in sources.items()},
            "outputs": self.files,
        }
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def verify_manifest(path) -> bool:
    """Re-derive input digests of a manifest's config and compare."""
    from .config import parse_config

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    raw = {k: v for k, v in doc["config"].items() if k != "out"}
    cfg = parse_config(raw, Path(path).parent, out=doc["config"].get("out"))
    return all(cfg.assets[name].digest() == entry["sha256"] for name, entry in doc["inputs"].items())


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands

def cmd_synth(cfg: RunConfig, jobs: int = 1) -> Outputs:
    missing = [a for a, s in cfg.assets.items() if s.synth is None]
    if missing:
        raise ConfigError(f"synth needs synth parameters for every asset; missing for {missing}")
    out = Outputs(cfg.out)
    for name, src in cfg.assets.items():
        data = src.load()
        out.write(f"{name}_trades.csv", format_trades_csv(data))
        out.write(f"{name}_lob.jsonl", format_lob_jsonl(data))
        log.info("%s: %d trades, %d snapshots", name, data.n_trades, data.n_snapshots)
    out.manifest("synth", cfg)
    return out


def _single_asset(cfg: RunConfig) -> str:
    if len(cfg.assets) != 1:
        raise ConfigError(f"backtest needs exactly one asset, got {sorted(cfg.assets)}")
    return next(iter(cfg.assets))


def run_backtest(cfg: RunConfig, jobs: int = 1):
    """Full grid over the full range of the single configured asset."""
    asset = _single_asset(cfg)
    data = cfg.assets[asset].load()
    days = market_days(data)
    specs = strategy_grid(cfg.grid)
    start, end = data.start, data.end
    with Runner({asset: data}, cfg.fees, cfg.oracle, jobs) as runner:
        tasks = [Task(asset, s, start, end, cfg.backtest_capital) for s in specs]
        results = runner.map(tasks, keep_fills=True)
        if cfg.learning.reset_daily:
            day_tasks = [Task(asset, s, d, d + DAY_MS, cfg.backtest_capital)
                         for s in specs for d in range(start, end, DAY_MS)]
            day_results = runner.map(day_tasks)
        else:
            day_results = None
    if day_results is None:
        records = daily_roi_records(results, specs)
    else:
        records = sorted(
            (DailyRoiRecord(ms_to_day(t.start), t.spec.id, t.spec.spread_pct,
                            t.spec.cancel_threshold_pct, t.spec.refresh_secs, r.roi)
             for t, r in zip(day_tasks, day_results) if t.spec.kind != "hodl"),
            key=lambda r: (r.day, r.spec_id))
    return asset, data, specs, results, records, days


def _write_backtest(out: Outputs, cfg, asset, data, results, records, days) -> None:
    doc = {
        "asset": asset,
        "start": data.start,
        "end": data.end,
        "capital": cfg.backtest_capital,
        "fees": cfg.fees,
        "oracle": {"kind": cfg.oracle.kind, "sigma": cfg.oracle.sigma, "seed": cfg.oracle.seed},
        "results": [r.to_dict() for r in results],
    }
    out.write("results.json", json.dumps(doc, indent=2) + "\n")
    out.write("fills.csv", _csv_text(
        ["spec_id", *FILL_CSV_HEADER.split(",")],
        ((r.spec_id, f.timestamp, f.order_id, f.side, repr(f.price), repr(f.quantity), repr(f.fee))
         for r in results for f in r.fills)))
    out.write("daily_roi.csv", _csv_text(DAILY_ROI_HEADER, (
        (r.day.isoformat(), r.spec_id, repr(r.spread_pct), repr(r.cancel_threshold_pct),
         repr(r.refresh_secs), repr(r.roi)) for r in records)))
    out.write("metrics.csv", _csv_text(METRICS_HEADER, (
        (d.date.isoformat(), *(repr(d.metrics.get(m)) for m in METRIC_NAMES[:4]),
         repr(d.volume), repr(d.metrics.volumeN)) for d in days)))


def cmd_backtest(cfg: RunConfig, jobs: int = 1) -> Outputs:
    asset, data, specs, results, records, days = run_backtest(cfg, jobs)
    out = Outputs(cfg.out)
    _write_backtest(out, cfg, asset, data, results, records, days)
    out.manifest("backtest", cfg)
    return out


def portfolio_config(cfg: RunConfig) -> PortfolioConfig:
    p = cfg.portfolio
    return PortfolioConfig(
        assets=tuple(cfg.assets),
        specs=tuple(strategy_grid(cfg.grid)),
        period_hours=p["period_hours"],
        policy=p["policy"],
        initial_capital=float(p["initial_capital"]),
        maker_fee=cfg.fees["maker"],
        taker_fee=cfg.fees["taker"],
        notional_capital=float(p["notional_capital"]),
        in_sample=p["in_sample"],
        oracle=cfg.oracle,
    )


def cmd_portfolio(cfg: RunConfig, jobs: int = 1) -> Outputs:
    pcfg = portfolio_config(cfg)
    dataset = {name: src.load() for name, src in cfg.assets.items()}
    result = run_walk_forward(pcfg, dataset, jobs)
    out = Outputs(cfg.out)
    out.write("portfolio.json", result.to_json())
    out.write("summary.csv", result.summary_csv())
    out.write("nav.csv", result.nav_csv())
    out.manifest("portfolio", cfg)
    log.info("total roi %.4f%% over %d periods", 100 * result.total_roi, len(result.periods))
    return out


def read_daily_roi(path: Path) -> list[DailyRoiRecord]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return [DailyRoiRecord(dt.date.fromisoformat(r["day"]), r["spec_id"], float(r["spread_pct"]),
                               float(r["cancel_threshold_pct"]), float(r["refresh_secs"]), float(r["roi"]))
                for r in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed daily ROI file ({exc})") from None


def read_metrics(path: Path) -> list[MarketDay]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return [MarketDay(dt.date.fromisoformat(r["day"]),
                          MetricVector(*(float(r[m]) for m in METRIC_NAMES)), float(r["volume"]))
                for r in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed metrics file ({exc})") from None


def cmd_learn(cfg: RunConfig, jobs: int = 1) -> Outputs:
    lc = cfg.learning
    out = Outputs(cfg.out)
    if lc.backtest_dir is not None:
        src = Path(lc.backtest_dir)
        for name in ("daily_roi.csv", "metrics.csv"):
            if not (src / name).is_file():
                raise DataError(f"{src / name} not found")
        records = read_daily_roi(src / "daily_roi.csv")
        days = read_metrics(src / "metrics.csv")
    else:
        asset, data, specs, results, records, days = run_backtest(cfg, jobs)
        _write_backtest(out, cfg, asset, data, results, records, days)
    records = [r for r in records if not r.spec_id.startswith("hodl")]
    if not records:
        raise DataError("no maker daily ROI records to learn from")

    cube = build_cube(records, days, lc.metric, lc.bins, lc.axes)
    out.write("cube.csv", cube.to_csv())
    slices = []
    for axis in (*cube.axes, METRIC_AXIS):
        slices.append((f"slice_{axis}_all", slice_cube(cube, axis), f"{cube.metric}: pooled over {axis}"))
    for k in range(cube.bins):
        lo, hi = cube.edges[k], cube.edges[k + 1]
        slices.append((f"slice_metric_bin{k}", slice_cube(cube, METRIC_AXIS, k),
                       f"{cube.metric} in [{lo:.4g}, {hi:.4g}]"))
    for name, table, title in slices:
        out.write(f"{name}.csv", table.to_csv())
        if lc.svg:
            out.write(f"{name}.svg", render_svg(table, title))
    out.write("top_spots.csv", spots_csv(cube, top_spots(cube, lc.top_k, lc.min_count)))
    out.manifest("learn", cfg)
    return out


# ---------------------------------------------------------------------------
# report

def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def _report_portfolio(doc: dict, name: str) -> list[str]:
    lines = [f"== portfolio {name}",
             f"{'period':>6} {'start':>19} {'nav_start':>14} {'nav_end':>14} {'roi':>8} {'combos':>6}"]
    for p in doc["periods"]:
        start = dt.datetime.fromtimestamp(p["start"] / 1000, dt.timezone.utc).strftime("%Y-%m-%d %H:%M")
        roi = p["nav_end"] / p["nav_start"] - 1
        lines.append(f"{p['index']:>6} {start:>19} {p['nav_start']:>14.2f} {p['nav_end']:>14.2f} "
                     f"{_pct(roi):>8} {len(p['allocation']):>6}")
    lines.append(f"Total ROI: {_pct(doc['total_roi'])}")
    return lines


def _report_backtest(doc: dict, name: str) -> list[str]:
    lines = [f"== backtest {name} ({doc['asset']})", f"{'spec':<40} {'roi':>9} {'fills':>7}"]
    ranked = sorted(doc["results"], key=lambda r: (-r["roi"], r["spec_id"]))
    for r in ranked:
        lines.append(f"{r['spec_id']:<40} {_pct(r['roi']):>9} {r['n_fills']:>7}")
    return lines


def _report_spots(rows: list[dict], name: str) -> list[str]:
    lines = [f"== profit spots {name}"]
    for r in rows:
        keys = [k for k in r if k not in ("rank", "metric", "metric_bin_lo", "metric_bin_hi", "mean_roi", "count")]
        params = ", ".join(f"{k}={float(r[k]):g}" for k in keys)
        lines.append(f"#{r['rank']} {params}, {r['metric']} in [{float(r['metric_bin_lo']):.3g}, "
                     f"{float(r['metric_bin_hi']):.3g}]: mean daily ROI {100 * float(r['mean_roi']):.3f}% "
                     f"over {r['count']} days")
    return lines


def cmd_report(paths) -> list[str]:
    lines = []
    for path in map(Path, paths):
        if not path.is_file():
            raise DataError(f"{path}: no such file")
        try:
            if path.suffix == ".json":
                doc = json.loads(path.read_text(encoding="utf-8"))
                if "nav" in doc and "periods" in doc:
                    lines += _report_portfolio(doc, path.name)
                elif "results" in doc:
                    lines += _report_backtest(doc, path.name)
                else:
                    raise DataError(f"{path}: not a portfolio or backtest result")
            elif path.suffix == ".csv":
                with open(path, newline="", encoding="utf-8") as fh:
                    rows = list(csv.DictReader(fh))
                if not rows or "rank" not in rows[0]:
                    raise DataError(f"{path}: not a profit-spots file")
                lines += _report_spots(rows, path.name)
            else:
                raise DataError(f"{path}: unrecognised result file")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{path}: malformed result file ({exc})") from None
    return lines


# ---------------------------------------------------------------------------

COMMANDS = {
    "synth": cmd_synth,
    "backtest": cmd_backtest,
    "portfolio": cmd_portfolio,
    "learn": cmd_learn,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amsa", description="Adaptive multi-strategy market-making lab")
    parser.add_argument("--version", action="version", version=f"amsa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "report":
            p.add_argument("paths", nargs="*", help="result files (portfolio.json, results.json, top_spots.csv)")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("AMSA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "report":
            paths = list(args.paths)
            if not paths and args.config:
                cfg = load_config(args.config, args.seed, args.out)
                paths = [cfg.out / n for n in ("portfolio.json", "results.json", "top_spots.csv")
                         if (cfg.out / n).is_file()]
            if not paths:
                raise ConfigError("report needs result files or a --config with outputs")
            print("\n".join(cmd_report(paths)))
            return EXIT_OK
        cfg = load_config(args.config, args.seed, args.out)
        COMMANDS[args.command](cfg, args.jobs)
        return EXIT_OK
    except ConfigError as exc:
        print(f"amsa: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"amsa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"amsa: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
