"""Tick-data complex event processing: EMA crossover engine and benchmark harness."""

__version__ = "0.1.0"
