"""Run configuration: YAML file validated against ``config.schema.json``."""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .errors import ConfigError, DataError
from .marketdata import MarketData, SynthParams, load_market, synth_data
from .strategy import GridConfig, OracleSpec


def load_schema() -> dict:
    return json.loads(resources.files("amsa").joinpath("config.schema.json").read_text())


@dataclass(frozen=True)
class AssetSource:
    name: str
    synth: SynthParams | None = None
    seed: int = 0
    trades: Path | None = None
    lob: Path | None = None

    def load(self) -> MarketData:
        if self.synth is not None:
            return synth_data(self.seed, self.synth)
        data = load_market(self.trades, self.lob)
        if data.n_trades == 0 or data.n_snapshots == 0:
            raise DataError(f"{self.name}: {data.n_trades} trades and {data.n_snapshots} snapshots; both must be non-empty")
        return data

    def digest(self) -> str:
        h = hashlib.sha256()
        if self.synth is not None:
            h.update(json.dumps({"seed": self.seed, "params": repr(self.synth)}).encode())
        else:
            for p in (self.trades, self.lob):
                h.update(p.read_bytes())
        return h.hexdigest()

    def describe(self) -> dict:
        if self.synth is not None:
            return {"kind": "synth", "seed": self.seed}
        return {"kind": "files", "trades": str(self.trades), "lob": str(self.lob)}


@dataclass(frozen=True)
class LearningConfig:
    metric: str = "volumeN"
    bins: int = 10
    min_count: int = 3
    top_k: int = 10
    axes: tuple[str, str] = ("spread", "threshold")
    svg: bool = True
    reset_daily: bool = False
    backtest_dir: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out: Path
    assets: dict[str, AssetSource]
    grid: GridConfig
    fees: dict
    backtest_capital: float
    portfolio: dict
    oracle: OracleSpec
    learning: LearningConfig
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Resolved config as plain data, for manifests and result files."""
        d = dict(self.raw)
        d["seed"] = self.seed
        d["out"] = str(self.out)
        return d


def _asset_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def parse_config(raw: dict, base_dir: Path = Path("."), seed: int | None = None,
                 out: str | None = None) -> RunConfig:
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None

    seed = raw.get("seed", 0) if seed is None else seed
    out_dir = Path(out if out is not None else raw.get("out", "amsa-out"))
    if not out_dir.is_absolute() and out is None:
        out_dir = base_dir / out_dir

    assets = {}
    for name in sorted(raw["assets"]):
        spec = raw["assets"][name]
        if "synth" in spec:
            params = dict(spec["synth"])
            asset_seed = params.pop("seed", None)
            assets[name] = AssetSource(
                name, SynthParams.from_dict(params),
                _asset_seed(seed, name) if asset_seed is None else asset_seed)
        else:
            paths = [Path(spec[k]) if Path(spec[k]).is_absolute() else base_dir / spec[k]
                     for k in ("trades", "lob")]
            for p in paths:
                if not p.is_file():
                    raise ConfigError(f"{name}: data file {p} does not exist")
            assets[name] = AssetSource(name, trades=paths[0], lob=paths[1])

    g = raw.get("grid", {})
    defaults = GridConfig()
    grid = GridConfig(
        kinds=tuple(g.get("kinds", defaults.kinds)),
        spreads=tuple(g.get("spreads", defaults.spreads)),
        thresholds=tuple(g.get("thresholds", defaults.thresholds)),
        refresh_secs=tuple(g.get("refresh_secs", defaults.refresh_secs)),
        hodl=g.get("hodl", defaults.hodl),
        spread_is_half=g.get("spread_is_half", defaults.spread_is_half),
    )
    fees = {"maker": 0.001, "taker": 0.001, **raw.get("fees", {})}
    portfolio = {"period_hours": 360, "policy": "weighted", "initial_capital": 10_000.0,
                 "notional_capital": 1_000.0, "in_sample": False, **raw.get("portfolio", {})}
    oracle = OracleSpec(**raw.get("oracle", {}))

    lr = dict(raw.get("learning", {}))
    if "axes" in lr:
        lr["axes"] = tuple(lr["axes"])
    if "backtest_dir" in lr:
        p = Path(lr["backtest_dir"])
        lr["backtest_dir"] = p if p.is_absolute() else base_dir / p
    learning = LearningConfig(**lr)

    return RunConfig(seed, out_dir, assets, grid, fees,
                     float(raw.get("backtest", {}).get("capital", 1_000.0)),
                     portfolio, oracle, learning, raw)


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return parse_config(raw, path.parent, seed, out)
