"""Single-threaded reference implementation of Query 1 and Query 2.

Deliberately shares no window, EMA or crossover code with the engine; the
rules are re-derived here so that a bug on one side shows up as a diff.
"""

from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

from .marketdata import TickEvent

REL_TOL = 1e-9
_UNIX_DAY0 = 719163  # date(1970, 1, 1).toordinal()


@dataclass(frozen=True)
class OracleRow:
    day: int
    slot: int
    close: float
    ema38: float
    ema100: float
    advisory: Optional[str]  # "BUY" | "SELL" | None


OracleOutput = dict[str, list[OracleRow]]


def oracle_run(
    events: Iterable[TickEvent],
    window_minutes: int = 5,
    suppress_first_window_advice: bool = False,
) -> OracleOutput:
    # pass 1: group by symbol, keeping arrival order
    by_symbol: dict[str, list[tuple[tuple[int, int], float]]] = defaultdict(list)
    for ev in events:
        ts = ev.trading_ts
        minute_of_day = ts.time_of_day // 60_000_000_000
        window = (ts.date.toordinal() - _UNIX_DAY0, minute_of_day // window_minutes)
        by_symbol[str(ev.symbol)].append((window, float(ev.last_price)))

    out: OracleOutput = {}
    for sym, seq in by_symbol.items():
        # pass 2: drop events older than the newest window seen so far, then the
        # close of a window is its last surviving event
        closes: list[tuple[tuple[int, int], float]] = []
        for window, price in seq:
            if closes and window < closes[-1][0]:
                continue
            if closes and window == closes[-1][0]:
                closes[-1] = (window, price)
            else:
                closes.append((window, price))
        # the last window never sees a successor event, so it is never evaluated
        closes = closes[:-1]

        rows: list[OracleRow] = []
        e38 = e100 = 0.0
        for i, (window, close) in enumerate(closes):
            a38 = 2 / (1 + 38)
            a100 = 2 / (1 + 100)
            n38 = close * a38 + e38 * (1 - a38)
            n100 = close * a100 + e100 * (1 - a100)
            advice = None
            if n38 > n100 and not e38 > e100:
                advice = "BUY"
            elif n38 < n100 and not e38 < e100:
                advice = "SELL"
            if i == 0 and suppress_first_window_advice:
                advice = None
            rows.append(OracleRow(window[0], window[1], close, n38, n100, advice))
            e38, e100 = n38, n100
        out[sym] = rows
    return out


def load_engine_dump(path: str | os.PathLike) -> OracleOutput:
    out: OracleOutput = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out[obj["symbol"]] = [OracleRow(*row) for row in obj["series"]]
    return out


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=0.0)


def diff(oracle: OracleOutput, engine: OracleOutput, limit: Optional[int] = None) -> list[str]:
    """Field-wise discrepancies between two outputs; empty means equivalent."""
    problems: list[str] = []

    def add(msg: str) -> bool:
        problems.append(msg)
        return limit is not None and len(problems) >= limit

    # symbols with no closed window are equivalent to absent ones
    o_syms = {s for s, rows in oracle.items() if rows}
    e_syms = {s for s, rows in engine.items() if rows}
    for s in sorted(o_syms - e_syms):
        if add(f"{s}: missing from engine output"):
            return problems
    for s in sorted(e_syms - o_syms):
        if add(f"{s}: unexpected in engine output"):
            return problems
    for s in sorted(o_syms & e_syms):
        o_rows, e_rows = oracle[s], engine[s]
        if len(o_rows) != len(e_rows):
            if add(f"{s}: {len(o_rows)} closed windows in oracle, {len(e_rows)} in engine"):
                return problems
        for i, (o, e) in enumerate(zip(o_rows, e_rows)):
            where = f"{s}[{i}]"
            if (o.day, o.slot) != (e.day, e.slot):
                msg = f"{where}: window {(o.day, o.slot)} != {(e.day, e.slot)}"
            elif o.close != e.close:
                msg = f"{where}: close {o.close!r} != {e.close!r}"
            elif not _close(o.ema38, e.ema38):
                msg = f"{where}: ema38 {o.ema38!r} != {e.ema38!r}"
            elif not _close(o.ema100, e.ema100):
                msg = f"{where}: ema100 {o.ema100!r} != {e.ema100!r}"
            elif o.advisory != e.advisory:
                msg = f"{where}: advisory {o.advisory} != {e.advisory}"
            else:
                continue
            if add(msg):
                return problems
            break  # later rows of this symbol are downstream of the first mismatch
    return problems


def engine_output(engine) -> OracleOutput:
    """The engine's retained series in oracle form (needs retention = full)."""
    out: OracleOutput = {}
    for sym, st in engine.states().items():
        out[str(sym)] = [
            OracleRow(r.window.day_ordinal, r.window.slot, r.close, r.ema.ema38, r.ema.ema100,
                      r.advisory.value if r.advisory else None)
            for r in engine.snapshot_series(sym)
        ]
    return out
