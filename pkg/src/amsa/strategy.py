"""Market-making bots, the hodl pseudo-strategy and price-prediction oracles."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .errors import EmptyWindow, InvalidParams
from .exchange import ASK, BID, Fill, Session
from .marketdata import DAY_MS, MarketData, Window

MAKER = "maker"
PREDICTIVE = "predictive_maker"
HODL = "hodl"
KINDS = (MAKER, PREDICTIVE, HODL)

DEFAULT_SPREADS = (0.1, 0.5, 1.0, 2.0, 10.0)
DEFAULT_THRESHOLDS = (0.0, 0.01, 0.1, 1.0, 10.0)
DEFAULT_REFRESH_SECS = (3600, 60)


def _num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    spread_pct: float = 0.0
    refresh_secs: float = 3600
    cancel_threshold_pct: float = 0.0
    spread_is_half: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParams(f"unknown strategy kind {self.kind!r}")
        if self.kind != HODL:
            if not self.spread_pct > 0:
                raise InvalidParams("spread_pct must be > 0 for maker strategies")
            if not self.refresh_secs > 0:
                raise InvalidParams("refresh_secs must be > 0")
            if not self.cancel_threshold_pct >= 0:
                raise InvalidParams("cancel_threshold_pct must be >= 0")
            if self.half_spread >= 1:
                raise InvalidParams("spread leaves a non-positive bid price")

    @property
    def id(self) -> str:
        if self.kind == HODL:
            return HODL
        sid = (f"{self.kind}:s={_num(self.spread_pct)},r={_num(self.refresh_secs)},"
               f"c={_num(self.cancel_threshold_pct)}")
        return sid + ",half" if self.spread_is_half else sid

    @property
    def half_spread(self) -> float:
        s = self.spread_pct / 100
        return s if self.spread_is_half else s / 2

    @property
    def sort_key(self) -> tuple:
        return (KINDS.index(self.kind), self.spread_pct, self.cancel_threshold_pct,
                self.refresh_secs, self.spread_is_half)

    @classmethod
    def from_id(cls, sid: str) -> StrategySpec:
        if sid == HODL:
            return cls(HODL)
        try:
            kind, rest = sid.split(":", 1)
            parts = rest.split(",")
            half = parts[-1] == "half"
            if half:
                parts = parts[:-1]
            vals = dict(p.split("=", 1) for p in parts)
            return cls(kind, float(vals["s"]), float(vals["r"]), float(vals["c"]), half)
        except (ValueError, KeyError):
            raise InvalidParams(f"bad strategy id {sid!r}") from None


@dataclass(frozen=True)
class GridConfig:
    kinds: tuple[str, ...] = (MAKER,)
    spreads: tuple[float, ...] = DEFAULT_SPREADS
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    refresh_secs: tuple[float, ...] = DEFAULT_REFRESH_SECS
    hodl: bool = False
    spread_is_half: bool = False


def strategy_grid(config: GridConfig | None = None) -> list[StrategySpec]:
    """Cartesian product of the maker parameter sets, plus hodl if enabled."""
    c = config or GridConfig()
    if any(k not in (MAKER, PREDICTIVE) for k in c.kinds):
        raise InvalidParams(f"grid kinds must be maker kinds, got {list(c.kinds)}")
    if not c.kinds and not c.hodl:
        raise InvalidParams("empty strategy grid")
    if c.kinds and not (c.spreads and c.thresholds and c.refresh_secs):
        raise InvalidParams("every grid dimension needs at least one value")
    specs = {
        StrategySpec(k, float(s), float(r), float(t), c.spread_is_half)
        for k in c.kinds for s in c.spreads for t in c.thresholds for r in c.refresh_secs
    }
    if c.hodl:
        specs.add(StrategySpec(HODL))
    return sorted(specs, key=lambda s: s.sort_key)


# ---------------------------------------------------------------------------
# quoting

@dataclass(frozen=True)
class Quotes:
    bid: tuple[float, float] | None  # (price, quantity)
    ask: tuple[float, float] | None


def quotes_for(center: float, spec: StrategySpec, session: Session) -> Quotes:
    """Symmetric quotes around ``center`` sized to the session's free balances."""
    h = spec.half_spread
    bid_price = center * (1 - h)
    ask_price = center * (1 + h)
    fee = session.fee_rate_maker

    free_quote = session.free_quote
    bid = None
    if free_quote > 0:
        qty = free_quote / (bid_price * (1 + fee))
        while qty > 0 and bid_price * qty * (1 + fee) > free_quote:
            qty = math.nextafter(qty, 0.0)
        if qty > 0:
            bid = (bid_price, qty)

    free_base = session.free_base
    ask = (ask_price, free_base) if free_base > 0 else None
    return Quotes(bid, ask)


def should_requote(placement_mid: float, current_mid: float, cancel_threshold_pct: float) -> bool:
    if cancel_threshold_pct == 0:
        return current_mid != placement_mid
    return abs(current_mid - placement_mid) / placement_mid >= cancel_threshold_pct / 100


# ---------------------------------------------------------------------------
# prediction oracles

class PredictionOracle(Protocol):
    def predict(self, t: int, horizon_ms: int, current_mid: float) -> float: ...


class NaiveOracle:
    """Predicts no change."""

    def predict(self, t: int, horizon_ms: int, current_mid: float) -> float:
        return current_mid


class PerfectOracle:
    """Reads the true future mid from the data (last known mid past the end)."""

    def __init__(self, data: MarketData):
        self.data = data

    def predict(self, t: int, horizon_ms: int, current_mid: float) -> float:
        return self.data.mid_at(t + horizon_ms)


class NoisyOracle(PerfectOracle):
    """Perfect prediction times ``exp(sigma * z)``, z drawn from (seed, t, horizon)."""

    def __init__(self, data: MarketData, sigma: float, seed: int = 0):
        super().__init__(data)
        if not sigma >= 0:
            raise InvalidParams("oracle sigma must be >= 0")
        self.sigma = sigma
        self.seed = seed

    def predict(self, t: int, horizon_ms: int, current_mid: float) -> float:
        true = super().predict(t, horizon_ms, current_mid)
        z = np.random.default_rng([self.seed, t, horizon_ms]).standard_normal()
        return true * math.exp(self.sigma * z)


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "none"  # none | naive | perfect | noisy
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "naive", "perfect", "noisy"):
            raise InvalidParams(f"unknown oracle {self.kind!r}")
        if not self.sigma >= 0:
            raise InvalidParams("oracle sigma must be >= 0")

    def build(self, data: MarketData) -> PredictionOracle | None:
        if self.kind == "naive":
            return NaiveOracle()
        if self.kind == "perfect":
            return PerfectOracle(data)
        if self.kind == "noisy":
            return NoisyOracle(data, self.sigma, self.seed)
        return None


# ---------------------------------------------------------------------------
# runs

@dataclass
class StrategyRunResult:
    spec_id: str
    initial_value: float
    final_value: float
    roi: float
    daily_values: list[tuple[int, float]]  # (boundary timestamp ms, value)
    n_fills: int
    requotes: int = 0
    fills: list[Fill] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "initial_value": self.initial_value,
            "final_value": self.final_value,
            "roi": self.roi,
            "n_fills": self.n_fills,
            "requotes": self.requotes,
            "daily_values": [[t, v] for t, v in self.daily_values],
        }


def _result(spec_id, session, initial, daily, requotes) -> StrategyRunResult:
    final = daily[-1][1]
    return StrategyRunResult(spec_id, initial, final, final / initial - 1, daily,
                             len(session.fills), requotes, session.fills)


def run_maker(spec: StrategySpec, window: Window, session: Session,
              oracle: PredictionOracle | None = None) -> StrategyRunResult:
    """Replay ``window`` through ``session`` quoting per ``spec``.

    Events are merged by timestamp, snapshots before trades on ties.  Quotes
    are cancelled and re-placed at every refresh boundary (counted from the
    window start) and whenever a snapshot's mid has moved past the
    cancellation threshold since the last placement.
    """
    if spec.kind == HODL:
        raise InvalidParams("run_maker needs a maker strategy")
    predictive = spec.kind == PREDICTIVE
    if predictive and oracle is None:
        raise InvalidParams("predictive_maker needs a prediction oracle")
    if window.n_snapshots == 0:
        raise EmptyWindow(f"no snapshots in [{window.start}, {window.end})")

    lst = window.data.lists
    trade_ts, trade_px, trade_qty = lst.trade_ts, lst.trade_px, lst.trade_qty
    lob_ts, lob_mid = lst.lob_ts, lst.mid
    ti, t_hi = window.t_lo, window.t_hi
    si, s_hi = window.s_lo, window.s_hi
    start, end = window.start, window.end

    refresh_ms = int(round(spec.refresh_secs * 1000))
    threshold = spec.cancel_threshold_pct

    mid = window.prior_mid
    seen_snapshot = mid is not None
    initial = session.mark_to_market(mid if mid is not None else lob_mid[si])
    daily = [(start, initial)]
    next_day = (start // DAY_MS + 1) * DAY_MS
    next_refresh = start
    placement_mid = None
    requotes = 0
    ask_px = math.inf
    bid_px = -math.inf

    while True:
        if ti < t_hi and (si >= s_hi or trade_ts[ti] < lob_ts[si]):
            t = trade_ts[ti]
            is_trade = True
        elif si < s_hi:
            t = lob_ts[si]
            is_trade = False
        else:
            break

        while t >= next_day:
            daily.append((next_day, session.mark_to_market(mid if mid is not None else lob_mid[si])))
            next_day += DAY_MS

        if is_trade:
            px = trade_px[ti]
            if not seen_snapshot:
                mid = px
        else:
            mid = lob_mid[si]
            seen_snapshot = True

        requote = False
        if t >= next_refresh:
            requote = True
            next_refresh = t - (t - start) % refresh_ms + refresh_ms
        elif not is_trade and placement_mid is not None:
            requote = should_requote(placement_mid, mid, threshold)

        if requote:
            requotes += 1
            session.cancel_all()
            center = oracle.predict(t, refresh_ms, mid) if predictive else mid
            q = quotes_for(center, spec, session)
            if q.bid is not None:
                session.place(BID, q.bid[0], q.bid[1], mid, t)
            if q.ask is not None:
                session.place(ASK, q.ask[0], q.ask[1], mid, t)
            placement_mid = mid
            bid_px = q.bid[0] if q.bid is not None else -math.inf
            ask_px = q.ask[0] if q.ask is not None else math.inf

        if is_trade:
            if px >= ask_px or px <= bid_px:
                session.step_raw(t, px, trade_qty[ti])
                bid_px = session.bid.price if session.bid is not None else -math.inf
                ask_px = session.ask.price if session.ask is not None else math.inf
            ti += 1
        else:
            si += 1

    session.last_mid = mid
    while next_day <= end:
        daily.append((next_day, session.mark_to_market(mid)))
        next_day += DAY_MS
    if daily[-1][0] != end:
        daily.append((end, session.mark_to_market(mid)))
    return _result(spec.id, session, initial, daily, requotes)


def run_hodl(window: Window, session: Session) -> StrategyRunResult:
    """Buy at the first snapshot's best ask, sell at the last snapshot's best
    bid, both paying the taker fee."""
    if window.n_snapshots == 0:
        raise EmptyWindow(f"no snapshots in [{window.start}, {window.end})")
    lst = window.data.lists
    first, last = window.s_lo, window.s_hi - 1
    initial = session.account.quote
    entry_ts = lst.lob_ts[first]

    daily = [(window.start, initial)]
    bought = False
    boundary = (window.start // DAY_MS + 1) * DAY_MS
    while boundary < window.end:
        if not bought and boundary > entry_ts:
            session.taker_buy_all(lst.best_ask[first], entry_ts)
            bought = True
        if bought:
            i = bisect_right(lst.lob_ts, boundary - 1, first, last + 1) - 1
            daily.append((boundary, session.mark_to_market(lst.mid[i])))
        else:
            daily.append((boundary, initial))
        boundary += DAY_MS
    if not bought:
        session.taker_buy_all(lst.best_ask[first], entry_ts)
    session.taker_sell_all(lst.best_bid[last], lst.lob_ts[last])
    session.last_mid = lst.mid[last]
    daily.append((window.end, session.account.quote))
    return _result(HODL, session, initial, daily, 0)


def run_strategy(spec: StrategySpec, window: Window, capital: float, fees: dict | None = None,
                 oracle: PredictionOracle | None = None) -> StrategyRunResult:
    fees = fees or {}
    session = Session(capital, fees.get("maker", 0.001), fees.get("taker", 0.001))
    if spec.kind == HODL:
        return run_hodl(window, session)
    return run_maker(spec, window, session, oracle if spec.kind == PREDICTIVE else None)


def spec_ids(specs: Iterable[StrategySpec]) -> list[str]:
    return [s.id for s in specs]
