from __future__ import annotations

import datetime as dt

import pytest
from hypothesis import given, strategies as st

from tickcep.marketdata import NS_PER_DAY, TickTimestamp, parse_time
from tickcep.windowing import (
    DEFAULT_SPEC,
    WindowId,
    WindowSpec,
    from_index,
    is_successor,
    successor,
    window_close_instant,
    window_close_ns,
    window_index,
    window_of,
    window_of_epoch_ns,
    window_start_ns,
)

from _util import MONDAY

D = TickTimestamp(MONDAY, 0).day_ordinal


def _at(text: str, date: dt.date = MONDAY) -> TickTimestamp:
    return TickTimestamp(date, parse_time(text))


@pytest.mark.parametrize("text,slot", [
    ("00:00:00.0000", 0),
    ("00:04:59.9999", 0),
    ("00:05:00.0000", 1),
    ("09:07:30.0000", 109),
    ("23:59:59.9999", 287),
])
def test_window_of_examples(text, slot):
    assert window_of(_at(text)) == WindowId(D, slot)


def test_hand_computed_slot():
    # floor((9*3600 + 450) / 300) evaluated by hand
    assert (9 * 3600 + 450) // 300 == 109
    assert window_of(_at("09:07:30.0000")).slot == 109


def test_last_slot_closes_at_next_midnight():
    w = WindowId(D, 287)
    close = window_close_instant(w)
    assert close == TickTimestamp(MONDAY + dt.timedelta(days=1), 0)
    assert window_of(close) == WindowId(D + 1, 0)


def test_is_successor_examples():
    assert is_successor(WindowId(D, 3), WindowId(D, 4))
    assert not is_successor(WindowId(D, 3), WindowId(D, 5))
    assert not is_successor(WindowId(D, 4), WindowId(D, 3))
    assert is_successor(WindowId(D, 287), WindowId(D + 1, 0))


@pytest.mark.parametrize("minutes", [0, -5, 7, 1441])
def test_window_length_must_divide_the_day(minutes):
    with pytest.raises(ValueError):
        WindowSpec(minutes)


@pytest.mark.parametrize("minutes", [1, 5, 15, 60, 1440])
def test_windows_tile_a_day(minutes):
    spec = WindowSpec(minutes)
    assert spec.windows_per_day * spec.length_ns == NS_PER_DAY


_instants = st.integers(0, 200 * 365 * NS_PER_DAY)


@given(_instants, _instants)
def test_monotone(a, b):
    lo, hi = sorted((a, b))
    assert window_of_epoch_ns(lo) <= window_of_epoch_ns(hi)


@given(_instants)
def test_instant_lies_inside_its_window(ns):
    w = window_of_epoch_ns(ns)
    assert window_start_ns(w) <= ns < window_close_ns(w)


@given(st.integers(0, 70_000), st.integers(0, 287))
def test_close_instant_opens_the_successor(day, slot):
    w = WindowId(day, slot)
    assert window_of(window_close_instant(w)) == successor(w)


@given(st.integers(0, 10**8))
def test_flat_index_round_trip(index):
    w = from_index(index)
    assert window_index(w) == index
    assert window_index(successor(w)) == index + 1


def test_window_ids_order_across_days():
    assert WindowId(D, 287) < WindowId(D + 1, 0)
    assert window_index(WindowId(D + 1, 0), DEFAULT_SPEC) - window_index(WindowId(D, 287)) == 1
