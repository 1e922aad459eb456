"""The solution under test: per-symbol window state, Query 1 and Query 2 answers.

Window closes are event driven. A symbol's open window is evaluated when the
same symbol's next event lands in a later window; windows in which the
symbol saw no event do not advance its EMA sequence. Events for a window
older than the symbol's open one are dropped and counted.
"""

from __future__ import annotations

import json
import logging
import os
import zlib
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

from . import windowing
from .indicators import ZERO_PAIR, Advice, CrossoverAdvisory, EmaPair, detect_crossover, ema_step
from .marketdata import Symbol, TickEvent
from .windowing import WindowId, WindowSpec

log = logging.getLogger(__name__)

RING_CAPACITY = 3


class RetentionDisabled(RuntimeError):
    pass


@dataclass
class EngineConfig:
    window_minutes: int = 5
    suppress_first_window_advice: bool = False
    retention: str = "off"  # off | full
    shards: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self) -> None:
        WindowSpec(self.window_minutes)
        if self.retention not in ("off", "full"):
            raise ValueError(f"retention must be 'off' or 'full', got {self.retention!r}")
        if self.shards < 1:
            raise ValueError("shards must be >= 1")

    @classmethod
    def from_text(cls, text: str) -> "EngineConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        kwargs: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (p.strip() for p in line.partition("="))
            if not sep:
                raise ValueError(f"line {lineno}: expected key = value")
            if key == "window_minutes" or key == "shards":
                kwargs[key] = int(value)
            elif key == "suppress_first_window_advice":
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"line {lineno}: bad boolean {value!r}")
                kwargs[key] = value.lower() in ("true", "1", "yes")
            elif key == "retention":
                kwargs[key] = value
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EngineConfig":
        return cls.from_text(Path(path).read_text())


class SeriesRow(NamedTuple):
    window: WindowId
    close: float
    ema: EmaPair
    advisory: Optional[Advice]


class SymbolState:
    """Mutable per-symbol state; only ever touched by the shard that owns the symbol."""

    __slots__ = (
        "symbol", "last_window", "pending_close", "prev_pair", "curr_pair",
        "closed", "advisories", "late", "history",
    )

    def __init__(self, symbol: Symbol, retain: bool = False) -> None:
        self.symbol = symbol
        self.last_window: Optional[int] = None  # flat window index
        self.pending_close: Optional[float] = None
        self.prev_pair = ZERO_PAIR
        self.curr_pair = ZERO_PAIR
        self.closed = 0
        self.advisories: deque[CrossoverAdvisory] = deque(maxlen=RING_CAPACITY)
        self.late = 0
        self.history: Optional[list[SeriesRow]] = [] if retain else None

    def key(self) -> tuple:
        """Everything that defines the state, for exact comparisons."""
        return (
            self.last_window, self.pending_close, self.prev_pair, self.curr_pair,
            self.closed, tuple(self.advisories), self.late,
        )


class BatchResult(NamedTuple):
    q1: list[tuple[Symbol, EmaPair]]
    q2: list[tuple[Symbol, list[CrossoverAdvisory]]]


def shard_of(symbol: Symbol, shards: int) -> int:
    return zlib.crc32(str(symbol).encode()) % shards


class Engine:
    def __init__(self, config: Optional[EngineConfig] = None) -> None:
        self.config = config or EngineConfig()
        self.spec = WindowSpec(self.config.window_minutes)
        self._shards: list[dict[Symbol, SymbolState]] = [{} for _ in range(self.config.shards)]
        self._shard_cache: dict[Symbol, int] = {}
        self.subscriptions: frozenset[Symbol] = frozenset()
        self._lookup: list[Symbol] = []
        self._pool: Optional[ThreadPoolExecutor] = None
        self.late_events = 0

    # state access

    def _shard(self, symbol: Symbol) -> int:
        idx = self._shard_cache.get(symbol)
        if idx is None:
            idx = self._shard_cache[symbol] = shard_of(symbol, len(self._shards))
        return idx

    def state(self, symbol: Symbol) -> Optional[SymbolState]:
        return self._shards[self._shard(symbol)].get(symbol)

    def states(self) -> dict[Symbol, SymbolState]:
        out: dict[Symbol, SymbolState] = {}
        for shard in self._shards:
            out.update(shard)
        return out

    # ingestion

    def _apply(self, shard: dict[Symbol, SymbolState], events: Iterable[TickEvent]) -> int:
        """Fold events into one shard's states in arrival order. Returns late-drop count."""
        length_ns = self.spec.length_ns
        retain = self.config.retention == "full"
        suppress_first = self.config.suppress_first_window_advice
        spec = self.spec
        per_day = spec.windows_per_day
        late = 0
        for ev in events:
            st = shard.get(ev.symbol)
            if st is None:
                st = shard[ev.symbol] = SymbolState(ev.symbol, retain)
            ts = ev.trading_ts
            w = ts.day_ordinal * per_day + windowing.slot_of(ts.time_of_day, length_ns)
            price = float(ev.last_price)
            last = st.last_window
            if last is None or w == last:
                st.last_window = w
                st.pending_close = price
                continue
            if w < last:
                st.late += 1
                late += 1
                continue
            # close the open window, then open the new one with this event
            before = st.curr_pair
            new = ema_step(before, st.pending_close)
            kind = detect_crossover(before, new)
            if kind is not None and suppress_first and st.closed == 0:
                kind = None
            closed_id = windowing.from_index(last, spec)
            if kind is not None:
                st.advisories.append(CrossoverAdvisory(st.symbol, kind, closed_id, new))
            if st.history is not None:
                st.history.append(SeriesRow(closed_id, st.pending_close, new, kind))
            st.prev_pair = before
            st.curr_pair = new
            st.closed += 1
            st.last_window = w
            st.pending_close = price
        return late

    def ingest(self, events: Sequence[TickEvent]) -> None:
        """Apply events to all symbol states; a synchronization barrier."""
        n_shards = len(self._shards)
        if n_shards == 1:
            self.late_events += self._apply(self._shards[0], events)
            return
        parts: list[list[TickEvent]] = [[] for _ in range(n_shards)]
        shard_idx = self._shard
        for ev in events:
            parts[shard_idx(ev.symbol)].append(ev)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=n_shards, thread_name_prefix="shard")
        futures = [
            self._pool.submit(self._apply, self._shards[i], part)
            for i, part in enumerate(parts)
            if part
        ]
        self.late_events += sum(f.result() for f in futures)

    def process_batch(
        self, events: Sequence[TickEvent], lookup_symbols: Sequence[Symbol]
    ) -> BatchResult:
        # the batch's subscription replaces the previous one before its events apply
        self._lookup = list(lookup_symbols)
        self.subscriptions = frozenset(self._lookup)
        self.ingest(events)
        return self.results()

    def results(self) -> BatchResult:
        q1: list[tuple[Symbol, EmaPair]] = []
        q2: list[tuple[Symbol, list[CrossoverAdvisory]]] = []
        for sym in self._lookup:
            st = self.state(sym)
            if st is None:
                q2.append((sym, []))
                continue
            if st.closed:
                q1.append((sym, st.curr_pair))
            q2.append((sym, list(st.advisories)))
        return BatchResult(q1, q2)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # history

    def snapshot_series(self, symbol: Symbol) -> list[SeriesRow]:
        if self.config.retention != "full":
            raise RetentionDisabled("series retention is off; set retention = full")
        st = self.state(symbol)
        return list(st.history) if st is not None and st.history is not None else []

    def dump(self, path: str | os.PathLike) -> None:
        """Write the full per-symbol window series as JSON lines (needs retention)."""
        if self.config.retention != "full":
            raise RetentionDisabled("engine dump needs retention = full")
        with open(path, "w") as fh:
            for sym, st in sorted(self.states().items(), key=lambda kv: str(kv[0])):
                rows = [
                    [r.window.day_ordinal, r.window.slot, r.close, r.ema.ema38, r.ema.ema100,
                     r.advisory.value if r.advisory else None]
                    for r in st.history or ()
                ]
                fh.write(json.dumps({"symbol": str(sym), "late": st.late, "series": rows}) + "\n")
