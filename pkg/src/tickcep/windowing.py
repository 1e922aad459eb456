"""Tumbling windows anchored at local midnight.

Windows are half-open ``[start, start + length)``: an event exactly on a
boundary belongs to the window that starts there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .marketdata import NS_PER_DAY, TickTimestamp

NS_PER_MINUTE = 60 * 1_000_000_000
MINUTES_PER_DAY = 1440


@dataclass(frozen=True, slots=True)
class WindowSpec:
    length_minutes: int = 5

    def __post_init__(self) -> None:
        if self.length_minutes <= 0 or MINUTES_PER_DAY % self.length_minutes:
            raise ValueError(
                f"window length must be a positive divisor of {MINUTES_PER_DAY} minutes, "
                f"got {self.length_minutes}"
            )

    @property
    def length_ns(self) -> int:
        return self.length_minutes * NS_PER_MINUTE

    @property
    def windows_per_day(self) -> int:
        return MINUTES_PER_DAY // self.length_minutes


DEFAULT_SPEC = WindowSpec()


class WindowId(NamedTuple):
    """Orders lexicographically by (day_ordinal, slot)."""

    day_ordinal: int
    slot: int


def slot_of(time_of_day_ns, length_ns: int):
    """Slot index of a time of day; works on ints and integer numpy arrays alike."""
    return time_of_day_ns // length_ns


def window_of(ts: TickTimestamp, spec: WindowSpec = DEFAULT_SPEC) -> WindowId:
    return WindowId(ts.day_ordinal, slot_of(ts.time_of_day, spec.length_ns))


def window_of_epoch_ns(ns: int, spec: WindowSpec = DEFAULT_SPEC) -> WindowId:
    day, tod = divmod(ns, NS_PER_DAY)
    return WindowId(day, slot_of(tod, spec.length_ns))


def window_index(w: WindowId, spec: WindowSpec = DEFAULT_SPEC) -> int:
    """Flat, gapless index of a window since the epoch."""
    return w.day_ordinal * spec.windows_per_day + w.slot


def from_index(index: int, spec: WindowSpec = DEFAULT_SPEC) -> WindowId:
    return WindowId(*divmod(index, spec.windows_per_day))


def successor(w: WindowId, spec: WindowSpec = DEFAULT_SPEC) -> WindowId:
    if w.slot + 1 == spec.windows_per_day:
        return WindowId(w.day_ordinal + 1, 0)
    return WindowId(w.day_ordinal, w.slot + 1)


def is_successor(a: WindowId, b: WindowId, spec: WindowSpec = DEFAULT_SPEC) -> bool:
    """True iff ``b`` immediately follows ``a``."""
    return successor(a, spec) == b


def window_start_ns(w: WindowId, spec: WindowSpec = DEFAULT_SPEC) -> int:
    return w.day_ordinal * NS_PER_DAY + w.slot * spec.length_ns


def window_close_instant(w: WindowId, spec: WindowSpec = DEFAULT_SPEC) -> TickTimestamp:
    """The instant the successor window starts, i.e. when ``w`` gets evaluated."""
    return TickTimestamp.from_epoch_ns(window_start_ns(successor(w, spec), spec))


def window_close_ns(w: WindowId, spec: WindowSpec = DEFAULT_SPEC) -> int:
    return window_start_ns(w, spec) + spec.length_ns
