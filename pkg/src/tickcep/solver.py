"""Client driver: pulls batches from a harness, feeds the engine, returns answers."""

from __future__ import annotations

import datetime as dt
import logging
from decimal import Decimal
from typing import Optional

from .engine import BatchResult, Engine
from .marketdata import NS_PER_DAY, SecurityType, Symbol, TickEvent, TickTimestamp
from .harness import SessionSummary
from .windowing import window_close_ns
from .wireproto import (
    BenchmarkConfig,
    Client,
    CrossoverEvent,
    Indicator,
    ProtocolViolation,
    WireBatch,
    WireEvent,
    WireResultQ1,
    WireResultQ2,
)

log = logging.getLogger(__name__)

_SEC_TYPES = {t.value: t for t in SecurityType}


class WireDecoder:
    """WireEvent -> TickEvent, caching parsed symbols."""

    def __init__(self) -> None:
        self._symbols: dict[str, Symbol] = {}
        self._dates: dict[int, dt.date] = {}

    def symbol(self, text: str) -> Symbol:
        sym = self._symbols.get(text)
        if sym is None:
            sym = self._symbols[text] = Symbol.parse(text)
        return sym

    def event(self, ev: WireEvent) -> TickEvent:
        day, tod = divmod(ev.trading_ts, NS_PER_DAY)
        date = self._dates.get(day)
        if date is None:
            date = self._dates[day] = TickTimestamp.from_epoch_ns(day * NS_PER_DAY).date
        return TickEvent(
            self.symbol(ev.symbol),
            _SEC_TYPES[ev.sec_type],
            Decimal(ev.last_price),
            TickTimestamp(date, tod),
        )


def to_wire_results(engine: Engine, result: BatchResult, benchmark_id: int,
                    seq_id: int) -> tuple[WireResultQ1, WireResultQ2]:
    q1 = WireResultQ1(
        benchmark_id, seq_id,
        [Indicator(str(sym), pair.ema38, pair.ema100) for sym, pair in result.q1],
    )
    q2 = WireResultQ2(
        benchmark_id, seq_id,
        [
            CrossoverEvent(str(sym), adv.kind.value, window_close_ns(adv.window, engine.spec))
            for sym, advs in result.q2
            for adv in advs
        ],
    )
    return q1, q2


def answer_batch(engine: Engine, decoder: WireDecoder, batch: WireBatch,
                 benchmark_id: int) -> tuple[WireResultQ1, WireResultQ2]:
    events = [decoder.event(e) for e in batch.events]
    lookup = [decoder.symbol(s) for s in batch.lookup_symbols]
    result = engine.process_batch(events, lookup)
    return to_wire_results(engine, result, benchmark_id, batch.seq_id)


def run_session(client: Client, engine: Engine, config: BenchmarkConfig,
                max_batches: Optional[int] = None) -> SessionSummary:
    """create -> start -> (next_batch, result_q1, result_q2)* -> end."""
    handle = client.create_benchmark(config)
    client.start_benchmark(handle)
    decoder = WireDecoder()
    expected_seq = 0
    n_events = 0
    while True:
        batch = client.next_batch(handle)
        if batch.seq_id != expected_seq:
            raise ProtocolViolation(f"expected batch {expected_seq}, got {batch.seq_id}")
        expected_seq += 1
        n_events += len(batch.events)
        q1, q2 = answer_batch(engine, decoder, batch, handle.id)
        client.result_q1(handle, q1)
        client.result_q2(handle, q2)
        if batch.last or (max_batches is not None and expected_seq >= max_batches):
            break
    log.info("received %d batches, %d events", expected_seq, n_events)
    return SessionSummary.from_dict(client.end_benchmark(handle))
