"""Virtual exchange for one agent account.

Resting agent orders are filled by replaying historical trades: an ask at
``a`` fills when a trade prints at or above ``a``, a bid at ``b`` when a trade
prints at or below ``b``.  Fills execute at the order's own limit price and are
capped by the printed quantity.  The tape is never altered by the agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InsufficientBalance, InvalidMid, InvalidParams, SideOccupied, UnknownOrder

BID = "bid"
ASK = "ask"
DEFAULT_FEE = 0.001
FILL_CSV_HEADER = "timestamp,order_id,side,price,quantity,fee"

# rounding slack when a fill consumes a whole reservation
_EPS = 1e-9


@dataclass
class Order:
    id: int
    side: str
    price: float
    quantity: float  # remaining
    placement_mid: float
    placed_at: int
    reserved: float  # quote for bids, base for asks


@dataclass
class Account:
    base: float = 0.0
    quote: float = 0.0


@dataclass(frozen=True)
class Fill:
    order_id: int
    side: str
    price: float
    quantity: float
    fee: float
    timestamp: int

    def csv_row(self) -> str:
        return f"{self.timestamp},{self.order_id},{self.side},{self.price!r},{self.quantity!r},{self.fee!r}"


class Session:
    """Account, at most one open bid and one open ask, and the fill log."""

    def __init__(self, initial_quote: float, maker_fee: float = DEFAULT_FEE, taker_fee: float = DEFAULT_FEE):
        if not (isinstance(initial_quote, (int, float)) and math.isfinite(initial_quote) and initial_quote > 0):
            raise InvalidParams(f"initial_quote must be > 0, got {initial_quote!r}")
        for name, rate in (("maker", maker_fee), ("taker", taker_fee)):
            if not 0 <= rate < 0.1:
                raise InvalidParams(f"{name} fee must be in [0, 0.1), got {rate!r}")
        self.account = Account(base=0.0, quote=float(initial_quote))
        self.fee_rate_maker = float(maker_fee)
        self.fee_rate_taker = float(taker_fee)
        self.bid: Order | None = None
        self.ask: Order | None = None
        self.fills: list[Fill] = []
        self.last_mid: float | None = None
        self._next_id = 1
        self._last_ts: int | None = None

    # -- balances -----------------------------------------------------------
    @property
    def reserved_quote(self) -> float:
        return self.bid.reserved if self.bid is not None else 0.0

    @property
    def reserved_base(self) -> float:
        return self.ask.reserved if self.ask is not None else 0.0

    @property
    def free_quote(self) -> float:
        return self.account.quote - self.reserved_quote

    @property
    def free_base(self) -> float:
        return self.account.base - self.reserved_base

    @property
    def open_orders(self) -> list[Order]:
        return [o for o in (self.bid, self.ask) if o is not None]

    def check_invariants(self) -> None:
        acc = self.account
        assert acc.base >= 0 and acc.quote >= 0, acc
        assert self.reserved_quote <= acc.quote * (1 + _EPS) + _EPS, (self.reserved_quote, acc.quote)
        assert self.reserved_base <= acc.base * (1 + _EPS) + _EPS, (self.reserved_base, acc.base)

    # -- order management ---------------------------------------------------
    def place(self, side: str, price: float, quantity: float, placement_mid: float, ts: int) -> int:
        if not (price > 0 and quantity > 0):
            raise InvalidParams(f"price and quantity must be > 0, got {price!r}, {quantity!r}")
        if side == BID:
            if self.bid is not None:
                raise SideOccupied("a bid is already open")
            need = price * quantity * (1 + self.fee_rate_maker)
            if need > self.free_quote:
                raise InsufficientBalance(f"bid needs {need!r} quote, {self.free_quote!r} free")
        elif side == ASK:
            if self.ask is not None:
                raise SideOccupied("an ask is already open")
            need = quantity
            if need > self.free_base:
                raise InsufficientBalance(f"ask needs {need!r} base, {self.free_base!r} free")
        else:
            raise InvalidParams(f"unknown side {side!r}")
        order = Order(self._next_id, side, price, quantity, placement_mid, ts, need)
        self._next_id += 1
        if side == BID:
            self.bid = order
        else:
            self.ask = order
        return order.id

    def cancel(self, order_id: int) -> None:
        if self.bid is not None and self.bid.id == order_id:
            self.bid = None
        elif self.ask is not None and self.ask.id == order_id:
            self.ask = None
        else:
            raise UnknownOrder(order_id)

    def cancel_all(self) -> None:
        self.bid = None
        self.ask = None

    # -- matching -----------------------------------------------------------
    def step(self, trade) -> list[Fill]:
        """Match one historical trade against the open orders."""
        return self.step_raw(trade.timestamp, trade.price, trade.quantity)

    def step_raw(self, ts: int, price: float, quantity: float) -> list[Fill]:
        if self._last_ts is not None and ts < self._last_ts:
            raise ValueError(f"event at {ts} precedes {self._last_ts}")
        self._last_ts = ts
        acc = self.account
        bid, ask = self.bid, self.ask
        if ask is not None and price >= ask.price:
            qty = min(ask.quantity, quantity)
            notional = ask.price * qty
            fee = self.fee_rate_maker * notional
            acc.base = _settle(acc.base - qty, qty)
            acc.quote += notional - fee
            ask.reserved = max(ask.reserved - qty, 0.0)
            ask.quantity -= qty
            if ask.quantity <= 0:
                self.ask = None
            fill = Fill(ask.id, ASK, ask.price, qty, fee, ts)
        elif bid is not None and price <= bid.price:
            qty = min(bid.quantity, quantity)
            notional = bid.price * qty
            fee = self.fee_rate_maker * notional
            acc.quote = _settle(acc.quote - (notional + fee), notional)
            acc.base += qty
            bid.reserved = max(bid.reserved - (notional + fee), 0.0)
            bid.quantity -= qty
            if bid.quantity <= 0:
                self.bid = None
            fill = Fill(bid.id, BID, bid.price, qty, fee, ts)
        else:
            return []
        self.fills.append(fill)
        return [fill]

    # -- taker helpers (hodl only) -------------------------------------------
    def taker_buy_all(self, price: float, ts: int) -> Fill:
        """Spend all free quote at ``price`` paying the taker fee."""
        acc = self.account
        spend = self.free_quote
        qty = spend / (price * (1 + self.fee_rate_taker))
        fee = self.fee_rate_taker * price * qty
        acc.quote = _settle(acc.quote - spend, spend)
        acc.base += qty
        fill = Fill(self._take_id(), BID, price, qty, fee, ts)
        self.fills.append(fill)
        return fill

    def taker_sell_all(self, price: float, ts: int) -> Fill:
        acc = self.account
        qty = self.free_base
        fee = self.fee_rate_taker * price * qty
        acc.base = _settle(acc.base - qty, qty)
        acc.quote += price * qty - fee
        fill = Fill(self._take_id(), ASK, price, qty, fee, ts)
        self.fills.append(fill)
        return fill

    def _take_id(self) -> int:
        oid = self._next_id
        self._next_id += 1
        return oid

    # -- valuation ----------------------------------------------------------
    def mark_to_market(self, mid: float) -> float:
        """Quote + base at ``mid``; reserved balances count at face value."""
        if not (isinstance(mid, (int, float)) and mid > 0 and math.isfinite(mid)):
            raise InvalidMid(f"mid must be a positive number, got {mid!r}")
        return self.account.quote + self.account.base * mid

    def fills_csv(self) -> str:
        return FILL_CSV_HEADER + "\n" + "".join(f.csv_row() + "\n" for f in self.fills)


def _settle(x: float, scale: float) -> float:
    # whole-reservation fills can undershoot zero by a few ulps
    if x < 0:
        assert x > -_EPS * max(scale, 1.0), x
        return 0.0
    return x


def new_session(initial_quote: float, fees: dict | None = None) -> Session:
    fees = fees or {}
    return Session(initial_quote, fees.get("maker", DEFAULT_FEE), fees.get("taker", DEFAULT_FEE))
