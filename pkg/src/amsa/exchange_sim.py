"""Alias of :mod:`amsa.exchange` under its long name."""

from .exchange import (
    ASK,
    BID,
    DEFAULT_FEE,
    FILL_CSV_HEADER,
    Account,
    Fill,
    Order,
    Session,
    new_session,
)

__all__ = ["ASK", "BID", "DEFAULT_FEE", "FILL_CSV_HEADER", "Account", "Fill", "Order", "Session", "new_session"]
