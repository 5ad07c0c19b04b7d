"""Market data model: trades, LOB snapshots, file formats, synthetic generation
and the per-day market-condition metrics.

Records (:class:`Trade`, :class:`LobSnapshot`) are what the parsers return.
Replay works on :class:`MarketData`, a columnar view of the same content that
keeps 90 days of per-minute books cheap to hold and slice.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import IO, Iterable, Iterator, Sequence, Union

import numpy as np

from .errors import (
    CrossedBook,
    EmptyDay,
    InvalidParams,
    MalformedRow,
    NonMonotonicTimestamp,
    UnsortedLevels,
)

DAY_MS = 86_400_000
MINUTE_MS = 60_000
TRADES_HEADER = "timestamp,price,quantity,side"
LOB_DEPTH = 10  # levels per side used for volume metrics

METRIC_NAMES = ("priceStd", "lobImbalance", "tradeImbalance", "tradesVsOrders", "volumeN")

Stream = Union[bytes, str, IO[bytes], IO[str]]


@dataclass(frozen=True)
class Trade:
    timestamp: int
    price: float
    quantity: float
    side: str  # aggressor: "buy" or "sell"


@dataclass(frozen=True)
class LobSnapshot:
    timestamp: int
    bids: tuple[tuple[float, float], ...]
    asks: tuple[tuple[float, float], ...]

    @property
    def best_bid(self) -> float:
        return self.bids[0][0]

    @property
    def best_ask(self) -> float:
        return self.asks[0][0]


def mid_price(snapshot: LobSnapshot) -> float:
    return (snapshot.bids[0][0] + snapshot.asks[0][0]) / 2


# ---------------------------------------------------------------------------
# parsing

def _lines(stream: Stream) -> Iterator[str]:
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for raw in stream:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw.rstrip("\r\n")


def _positive(text, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise MalformedRow(f"unparsable {what} {text!r}", lineno) from None
    if not math.isfinite(value) or value <= 0:
        raise MalformedRow(f"{what} must be positive, got {text!r}", lineno)
    return value


def _parse_trade_row(line: str, lineno: int) -> tuple[int, float, float, int]:
    parts = line.split(",")
    if len(parts) != 4:
        raise MalformedRow(f"expected 4 columns, got {len(parts)}", lineno)
    try:
        ts = int(parts[0])
    except ValueError:
        raise MalformedRow(f"unparsable timestamp {parts[0]!r}", lineno) from None
    price = _positive(parts[1], "price", lineno)
    qty = _positive(parts[2], "quantity", lineno)
    side = parts[3].strip()
    if side == "buy":
        sign = 1
    elif side == "sell":
        sign = -1
    else:
        raise MalformedRow(f"unknown side {side!r}", lineno)
    return ts, price, qty, sign


def _iter_trade_rows(stream: Stream) -> Iterator[tuple[int, float, float, int]]:
    lines = _lines(stream)
    header = next(lines, None)
    if header is None:
        return
    if header.strip() != TRADES_HEADER:
        raise MalformedRow(f"bad header {header!r}", 1)
    last = None
    for lineno, line in enumerate(lines, start=2):
        if not line:
            continue
        row = _parse_trade_row(line, lineno)
        if last is not None and row[0] < last:
            raise NonMonotonicTimestamp(f"timestamp {row[0]} < {last}", lineno)
        last = row[0]
        yield row


def parse_trades(stream: Stream) -> list[Trade]:
    """Parse a ``timestamp,price,quantity,side`` CSV into trades."""
    return [
        Trade(ts, px, qty, "buy" if sign > 0 else "sell")
        for ts, px, qty, sign in _iter_trade_rows(stream)
    ]


def _levels(raw, what: str, lineno: int) -> list[tuple[float, float]]:
    if not isinstance(raw, list) or not raw:
        raise MalformedRow(f"{what} must be a non-empty list", lineno)
    out = []
    for level in raw:
        if not isinstance(level, list) or len(level) != 2:
            raise MalformedRow(f"bad {what} level {level!r}", lineno)
        if isinstance(level[0], bool) or isinstance(level[1], bool):
            raise MalformedRow(f"bad {what} level {level!r}", lineno)
        out.append((_positive(level[0], "price", lineno), _positive(level[1], "quantity", lineno)))
    return out


def _parse_lob_line(line: str, lineno: int):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRow(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(obj, dict) or set(obj) != {"ts", "bids", "asks"}:
        raise MalformedRow("expected object with keys ts, bids, asks", lineno)
    ts = obj["ts"]
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise MalformedRow(f"ts must be an integer, got {ts!r}", lineno)
    bids = _levels(obj["bids"], "bids", lineno)
    asks = _levels(obj["asks"], "asks", lineno)
    if any(b[0] <= a[0] for b, a in zip(bids, bids[1:])):
        raise UnsortedLevels("bid prices must be strictly descending", lineno)
    if any(a[0] >= b[0] for a, b in zip(asks, asks[1:])):
        raise UnsortedLevels("ask prices must be strictly ascending", lineno)
    if bids[0][0] >= asks[0][0]:
        raise CrossedBook(f"best bid {bids[0][0]} >= best ask {asks[0][0]}", lineno)
    return ts, bids, asks


def _iter_lob_rows(stream: Stream):
    last = None
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        row = _parse_lob_line(line, lineno)
        if last is not None and row[0] < last:
            raise NonMonotonicTimestamp(f"ts {row[0]} < {last}", lineno)
        last = row[0]
        yield row


def parse_lob(stream: Stream) -> list[LobSnapshot]:
    """Parse JSON-lines LOB snapshots ``{"ts": .., "bids": [[p, q]..], "asks": ..}``."""
    return [
        LobSnapshot(ts, tuple(bids), tuple(asks)) for ts, bids, asks in _iter_lob_rows(stream)
    ]


# ---------------------------------------------------------------------------
# columnar storage

@dataclass(eq=False)
class MarketData:
    """Columnar trades + snapshots for one asset.

    Book levels are stored as ``(n, depth)`` arrays padded with NaN where a
    snapshot has fewer levels than the deepest one.
    """

    trade_ts: np.ndarray
    trade_px: np.ndarray
    trade_qty: np.ndarray
    trade_side: np.ndarray  # +1 buy, -1 sell
    lob_ts: np.ndarray
    bid_px: np.ndarray
    bid_qty: np.ndarray
    ask_px: np.ndarray
    ask_qty: np.ndarray

    @classmethod
    def from_rows(cls, trade_rows, lob_rows) -> MarketData:
        trade_rows = list(trade_rows)
        lob_rows = list(lob_rows)
        if trade_rows:
            ts, px, qty, side = zip(*trade_rows)
        else:
            ts = px = qty = side = ()
        depth = max((max(len(b), len(a)) for _, b, a in lob_rows), default=1)
        n = len(lob_rows)
        arrays = [np.full((n, depth), np.nan) for _ in range(4)]
        for i, (_, bids, asks) in enumerate(lob_rows):
            for j, (p, q) in enumerate(bids):
                arrays[0][i, j] = p
                arrays[1][i, j] = q
            for j, (p, q) in enumerate(asks):
                arrays[2][i, j] = p
                arrays[3][i, j] = q
        return cls(
            np.asarray(ts, dtype=np.int64),
            np.asarray(px, dtype=float),
            np.asarray(qty, dtype=float),
            np.asarray(side, dtype=np.int8),
            np.asarray([r[0] for r in lob_rows], dtype=np.int64),
            *arrays,
        )

    @classmethod
    def from_records(cls, trades: Iterable[Trade], lobs: Iterable[LobSnapshot]) -> MarketData:
        return cls.from_rows(
            ((t.timestamp, t.price, t.quantity, 1 if t.side == "buy" else -1) for t in trades),
            ((s.timestamp, s.bids, s.asks) for s in lobs),
        )

    def to_records(self) -> tuple[list[Trade], list[LobSnapshot]]:
        trades = [
            Trade(int(t), float(p), float(q), "buy" if s > 0 else "sell")
            for t, p, q, s in zip(self.trade_ts, self.trade_px, self.trade_qty, self.trade_side)
        ]
        lobs = [LobSnapshot(ts, bids, asks) for ts, bids, asks in self._lob_rows()]
        return trades, lobs

    def _lob_rows(self):
        bp, bq, ap, aq = (a.tolist() for a in (self.bid_px, self.bid_qty, self.ask_px, self.ask_qty))
        for i, ts in enumerate(self.lob_ts.tolist()):
            bids = tuple((p, q) for p, q in zip(bp[i], bq[i]) if p == p)
            asks = tuple((p, q) for p, q in zip(ap[i], aq[i]) if p == p)
            yield ts, bids, asks

    @property
    def n_trades(self) -> int:
        return len(self.trade_ts)

    @property
    def n_snapshots(self) -> int:
        return len(self.lob_ts)

    @cached_property
    def mid(self) -> np.ndarray:
        return (self.bid_px[:, 0] + self.ask_px[:, 0]) / 2

    # plain lists for the replay loops; indexing numpy scalars is much slower
    @cached_property
    def lists(self) -> _Lists:
        return _Lists(
            self.trade_ts.tolist(),
            self.trade_px.tolist(),
            self.trade_qty.tolist(),
            self.trade_side.tolist(),
            self.lob_ts.tolist(),
            self.mid.tolist(),
            self.bid_px[:, 0].tolist(),
            self.ask_px[:, 0].tolist(),
        )

    @property
    def start(self) -> int:
        """First timestamp in the data, floored to a UTC day."""
        first = min(
            int(self.trade_ts[0]) if self.n_trades else math.inf,
            int(self.lob_ts[0]) if self.n_snapshots else math.inf,
        )
        if first == math.inf:
            raise EmptyDay("no market data")
        return int(first) // DAY_MS * DAY_MS

    @property
    def end(self) -> int:
        """Exclusive end: the UTC midnight after the last timestamp."""
        last = max(
            int(self.trade_ts[-1]) if self.n_trades else -1,
            int(self.lob_ts[-1]) if self.n_snapshots else -1,
        )
        if last < 0:
            raise EmptyDay("no market data")
        return (last // DAY_MS + 1) * DAY_MS

    def window(self, start: int, end: int) -> Window:
        lst = self.lists
        s_lo = bisect_left(lst.lob_ts, start)
        prior_mid = lst.mid[s_lo - 1] if s_lo > 0 else None
        return Window(
            self,
            start,
            end,
            bisect_left(lst.trade_ts, start),
            bisect_left(lst.trade_ts, end),
            s_lo,
            bisect_left(lst.lob_ts, end),
            prior_mid,
        )

    def full_window(self) -> Window:
        return self.window(self.start, self.end)

    def mid_at(self, t: int) -> float:
        """Mid of the latest snapshot at or before ``t`` (first snapshot if none)."""
        lst = self.lists
        i = bisect_right(lst.lob_ts, t) - 1
        return lst.mid[max(i, 0)]

    def digest_bytes(self) -> bytes:
        return b"".join(
            np.ascontiguousarray(a).tobytes()
            for a in (self.trade_ts, self.trade_px, self.trade_qty, self.trade_side,
                      self.lob_ts, self.bid_px, self.bid_qty, self.ask_px, self.ask_qty)
        )


@dataclass(frozen=True)
class _Lists:
    trade_ts: list
    trade_px: list
    trade_qty: list
    trade_side: list
    lob_ts: list
    mid: list
    best_bid: list
    best_ask: list


@dataclass(frozen=True)
class Window:
    """Half-open time range ``[start, end)`` over a :class:`MarketData`.

    Index bounds point into the parent arrays so slicing is free.
    ``prior_mid`` is the mid of the last snapshot before ``start`` if any.
    """

    data: MarketData
    start: int
    end: int
    t_lo: int
    t_hi: int
    s_lo: int
    s_hi: int
    prior_mid: float | None

    @property
    def n_snapshots(self) -> int:
        return self.s_hi - self.s_lo

    @property
    def n_trades(self) -> int:
        return self.t_hi - self.t_lo


# ---------------------------------------------------------------------------
# file I/O

def format_trades_csv(data: MarketData) -> str:
    lst = data.lists
    out = [TRADES_HEADER]
    for t, p, q, s in zip(lst.trade_ts, lst.trade_px, lst.trade_qty, lst.trade_side):
        out.append(f"{t},{p!r},{q!r},{'buy' if s > 0 else 'sell'}")
    return "\n".join(out) + "\n"


def format_lob_jsonl(data: MarketData) -> str:
    lines = []
    for ts, bids, asks in data._lob_rows():
        lines.append(json.dumps(
            {"ts": ts, "bids": [list(b) for b in bids], "asks": [list(a) for a in asks]},
            separators=(",", ":"),
        ))
    return "".join(line + "\n" for line in lines)


def write_market(data: MarketData, trades_path, lob_path) -> None:
    with open(trades_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trades_csv(data))
    with open(lob_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_lob_jsonl(data))


def load_market(trades_path, lob_path) -> MarketData:
    with open(trades_path, "rb") as fh:
        trade_rows = list(_iter_trade_rows(fh))
    with open(lob_path, "rb") as fh:
        lob_rows = list(_iter_lob_rows(fh))
    return MarketData.from_rows(trade_rows, lob_rows)


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class Shock:
    """Deterministic log-return added evenly over ``hours`` from ``start_hour``."""

    start_hour: float
    hours: float
    log_return: float


@dataclass(frozen=True)
class SynthParams:
    days: int = 1
    steps_per_minute: int = 1
    start_price: float = 100.0
    volatility: float = 0.02  # daily, log-mid
    drift: float = 0.0  # daily, log-mid
    trade_rate: float = 1.0  # expected trades per minute
    depth_levels: int = 10
    trade_size: float = 5.0  # mean trade quantity
    level_size: float = 20.0  # mean level quantity
    level_spacing: float = 1e-4  # relative offset of the first level from mid
    level_growth: float = 1.5
    start_ms: int = 1_630_454_400_000  # 2021-09-01T00:00Z
    shocks: tuple[Shock, ...] = ()

    def __post_init__(self):
        problems = []
        if not isinstance(self.days, int) or self.days < 1:
            problems.append("days must be an integer >= 1")
        if not isinstance(self.steps_per_minute, int) or self.steps_per_minute < 1:
            problems.append("steps_per_minute must be an integer >= 1")
        if not self.start_price > 0:
            problems.append("start_price must be > 0")
        if not self.volatility >= 0:
            problems.append("volatility must be >= 0")
        if not math.isfinite(self.drift):
            problems.append("drift must be finite")
        if not self.trade_rate >= 0:
            problems.append("trade_rate must be >= 0")
        if not isinstance(self.depth_levels, int) or self.depth_levels < 1:
            problems.append("depth_levels must be an integer >= 1")
        if not (self.trade_size > 0 and self.level_size > 0):
            problems.append("trade_size and level_size must be > 0")
        if not (0 < self.level_spacing < 1) or not self.level_growth >= 1:
            problems.append("level_spacing must be in (0, 1) and level_growth >= 1")
        elif self.level_spacing * self.level_growth ** (self.depth_levels - 1) >= 1:
            problems.append("book levels reach a non-positive bid price")
        if self.start_ms % MINUTE_MS:
            problems.append("start_ms must be minute-aligned")
        if problems:
            raise InvalidParams("; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> SynthParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParams(f"unknown synth parameters: {sorted(unknown)}")
        d = dict(d)
        if "shocks" in d:
            try:
                d["shocks"] = tuple(
                    Shock(**s) if isinstance(s, dict) else Shock(*s) for s in d["shocks"]
                )
            except TypeError as exc:
                raise InvalidParams(f"bad shock: {exc}") from None
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidParams(str(exc)) from None


def synth_data(seed: int, params: SynthParams) -> MarketData:
    """Columnar synthetic market: geometric random-walk mid, per-minute books,
    Poisson trade arrivals priced just outside the touch."""
    p = params
    rng = np.random.default_rng(seed)
    n_min = p.days * 1440
    spm = p.steps_per_minute
    n_steps = n_min * spm
    dt_day = 1.0 / (1440 * spm)

    inc = p.drift * dt_day + p.volatility * math.sqrt(dt_day) * rng.standard_normal(n_steps)
    for shock in p.shocks:
        a = max(0, int(round(shock.start_hour * 60 * spm)))
        b = min(n_steps, a + max(1, int(round(shock.hours * 60 * spm))))
        if b > a:
            inc[a:b] += shock.log_return / (b - a)
    log_mid = np.empty(n_steps)
    log_mid[0] = 0.0
    np.cumsum(inc[:-1], out=log_mid[1:])
    step_mid = p.start_price * np.exp(log_mid)

    mids = step_mid[::spm]
    offsets = p.level_spacing * p.level_growth ** np.arange(p.depth_levels)
    bid_px = mids[:, None] * (1 - offsets)
    ask_px = mids[:, None] * (1 + offsets)
    bid_qty = p.level_size * rng.uniform(0.5, 1.5, (n_min, p.depth_levels))
    ask_qty = p.level_size * rng.uniform(0.5, 1.5, (n_min, p.depth_levels))
    lob_ts = p.start_ms + MINUTE_MS * np.arange(n_min, dtype=np.int64)

    counts = rng.poisson(p.trade_rate, n_min)
    minute = np.repeat(np.arange(n_min, dtype=np.int64), counts)
    offset_ms = rng.integers(0, MINUTE_MS, len(minute))
    order = np.lexsort((offset_ms, minute))
    minute, offset_ms = minute[order], offset_ms[order]
    step = minute * spm + offset_ms * spm // MINUTE_MS
    side = rng.choice(np.array([1, -1], dtype=np.int8), len(minute))
    sweep = 1 + rng.exponential(1.0, len(minute))
    trade_px = step_mid[step] * (1 + side * offsets[0] * sweep)
    trade_qty = np.maximum(p.trade_size * rng.exponential(1.0, len(minute)), 1e-6 * p.trade_size)
    trade_ts = p.start_ms + minute * MINUTE_MS + offset_ms

    return MarketData(trade_ts, trade_px, trade_qty, side, lob_ts, bid_px, bid_qty, ask_px, ask_qty)


def synth_market(seed: int, params: SynthParams | dict) -> tuple[list[Trade], list[LobSnapshot]]:
    if isinstance(params, dict):
        params = SynthParams.from_dict(params)
    return synth_data(seed, params).to_records()


# ---------------------------------------------------------------------------
# daily metrics

@dataclass(frozen=True)
class MetricVector:
    priceStd: float
    lobImbalance: float
    tradeImbalance: float
    tradesVsOrders: float
    volumeN: float | None = None

    def get(self, name: str) -> float:
        if name not in METRIC_NAMES:
            raise KeyError(name)
        value = getattr(self, name)
        if value is None:
            raise ValueError(f"{name} not computed")
        return value


@dataclass(frozen=True)
class MarketDay:
    date: dt.date
    metrics: MetricVector
    volume: float = field(default=0.0)  # raw daily traded base volume


def day_start_ms(day: dt.date) -> int:
    return (day - dt.date(1970, 1, 1)).days * DAY_MS


def ms_to_day(ts: int) -> dt.date:
    return dt.date(1970, 1, 1) + dt.timedelta(days=ts // DAY_MS)


def _imbalance(a: float, b: float) -> float:
    total = a + b
    return (a - b) / total if total > 0 else 0.0


def _metrics_for_day(data: MarketData, day: dt.date) -> MarketDay:
    lo = day_start_ms(day)
    hi = lo + DAY_MS
    s_lo, s_hi = np.searchsorted(data.lob_ts, [lo, hi])
    t_lo, t_hi = np.searchsorted(data.trade_ts, [lo, hi])
    if s_hi == s_lo or t_hi == t_lo:
        raise EmptyDay(f"{day}: {t_hi - t_lo} trades, {s_hi - s_lo} snapshots")

    mids = data.mid[s_lo:s_hi]
    price_std = float(np.std(mids) / np.mean(mids))

    bid_vol = np.nansum(data.bid_qty[s_lo:s_hi, :LOB_DEPTH], axis=1)
    ask_vol = np.nansum(data.ask_qty[s_lo:s_hi, :LOB_DEPTH], axis=1)
    lob_imb = float(np.mean((ask_vol - bid_vol) / (ask_vol + bid_vol)))

    qty = data.trade_qty[t_lo:t_hi]
    side = data.trade_side[t_lo:t_hi]
    buy_vol = float(qty[side > 0].sum())
    sell_vol = float(qty[side < 0].sum())
    trade_vol = float(qty.sum())
    lob_vol = float(bid_vol.sum() + ask_vol.sum())

    metrics = MetricVector(
        priceStd=price_std,
        lobImbalance=lob_imb,
        tradeImbalance=_imbalance(buy_vol, sell_vol),
        tradesVsOrders=_imbalance(trade_vol, lob_vol),
    )
    return MarketDay(day, metrics, trade_vol)


def daily_metrics(trades: Sequence[Trade], lobs: Sequence[LobSnapshot], day: dt.date) -> MarketDay:
    """Metrics for one UTC day; ``volumeN`` is left unset until
    :func:`normalize_volume` sees the whole window."""
    return _metrics_for_day(MarketData.from_records(trades, lobs), day)


def market_days(data: MarketData) -> list[MarketDay]:
    """Metrics for every UTC day covered by ``data``, volume-normalized."""
    first, last = ms_to_day(data.start), ms_to_day(data.end - 1)
    days = []
    d = first
    while d <= last:
        days.append(_metrics_for_day(data, d))
        d += dt.timedelta(days=1)
    return normalize_volume(days)


def normalize_volume(days: list[MarketDay]) -> list[MarketDay]:
    if not days:
        raise ValueError("normalize_volume needs at least one day")
    vols = [d.volume for d in days]
    lo, hi = min(vols), max(vols)
    out = []
    for d in days:
        vn = (d.volume - lo) / (hi - lo) if hi > lo else 0.0
        out.append(replace(d, metrics=replace(d.metrics, volumeN=vn)))
    return out

