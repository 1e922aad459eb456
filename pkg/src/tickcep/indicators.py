"""Dual EMA per window close (Query 1) and EMA crossover detection (Query 2)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

from .marketdata import Symbol
from .windowing import WindowId

SHORT_J = 38
LONG_J = 100


def smoothing(j: int) -> float:
    return 2 / (1 + j)


class EmaPair(NamedTuple):
    ema38: float = 0.0
    ema100: float = 0.0


ZERO_PAIR = EmaPair(0.0, 0.0)

_A38 = smoothing(SHORT_J)
_A100 = smoothing(LONG_J)


def ema_step(prev: EmaPair, close: float) -> EmaPair:
    # evaluation order is part of the contract: close*a + prev*(1 - a)
    return EmaPair(
        close * _A38 + prev.ema38 * (1 - _A38),
        close * _A100 + prev.ema100 * (1 - _A100),
    )


class Advice(str, Enum):
    BUY = "BUY"
    SELL = "SELL"


def detect_crossover(prev: EmaPair, curr: EmaPair) -> Optional[Advice]:
    """Buy when the short EMA strictly overtakes the long one, Sell on the mirror case.

    The prior-window comparison is inclusive, the current-window one strict.
    """
    if curr.ema38 > curr.ema100 and prev.ema38 <= prev.ema100:
        return Advice.BUY
    if curr.ema38 < curr.ema100 and prev.ema38 >= prev.ema100:
        return Advice.SELL
    return None


@dataclass(frozen=True, slots=True)
class CrossoverAdvisory:
    symbol: Symbol
    kind: Advice
    window: WindowId
    ema_pair: EmaPair
