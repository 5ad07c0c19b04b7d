"""Adaptive multi-strategy market-making backtest lab."""

__version__ = "0.1.0"
