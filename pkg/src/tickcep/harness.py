"""Benchmark server: replays a dataset in batches and scores the answers.

The harness never looks at result contents; correctness is the oracle's job.
What it measures is time: for every batch the instant it was handed out and
the instants the Query 1 and Query 2 answers came back, all on one
monotonic nanosecond clock.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import secrets
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .marketdata import COL_LAST, RawRecord, TickEvent, classify, read_records
from .wireproto import (
    BadConfig,
    BenchmarkConfig,
    BenchmarkHandle,
    CapacityExhausted,
    DuplicateResult,
    OutOfOrderCall,
    SessionTimeout,
    UnknownBenchmark,
    UnknownSeqId,
    WireBatch,
    WireEvent,
    WireResultQ1,
    WireResultQ2,
    encode_batch,
)

log = logging.getLogger(__name__)

MAX_BATCH_SIZE = 1_000_000


class SessionNotEnded(RuntimeError):
    pass


class EmptySamples(ValueError):
    pass


# dataset


@dataclass
class Dataset:
    """Immutable list of price events in file order, ready to ship."""

    events: list[WireEvent]
    seed: Optional[int] = None
    source: str = ""

    def __post_init__(self) -> None:
        self.universe: list[str] = sorted({e.symbol for e in self.events})

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def from_records(cls, records: Iterable[RawRecord], **kw) -> "Dataset":
        events = []
        for rec in records:
            ev = classify(rec)
            if ev is not None:
                events.append(to_wire(ev, rec[COL_LAST]))
        return cls(events, **kw)

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.events:
            h.update(f"{e.symbol},{e.sec_type},{e.last_price},{e.trading_ts}\n".encode())
        return h.hexdigest()


def to_wire(ev: TickEvent, price_text: Optional[str] = None) -> WireEvent:
    return WireEvent(
        str(ev.symbol), ev.sec_type.value, price_text or str(ev.last_price), ev.trading_ts.epoch_ns
    )


def dataset_files(path: Union[str, os.PathLike]) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.csv"))
    return [p]


def load_dataset(path: Union[str, os.PathLike], header: bool = False) -> Dataset:
    """Load one CSV file or every ``*.csv`` in a directory (name order)."""
    files = dataset_files(path)
    seed = None
    manifest = Path(path) / "manifest.json" if Path(path).is_dir() else None
    if manifest is not None and manifest.exists():
        seed = json.loads(manifest.read_text()).get("config", {}).get("seed")

    def records() -> Iterator[RawRecord]:
        for f in files:
            with open(f, encoding="utf-8") as fh:
                yield from read_records(fh, header=header)

    return Dataset.from_records(records(), seed=seed, source=str(path))


# subscriptions


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _changes_at(seed: int, seq_id: int, p_change: float) -> bool:
    return seq_id == 0 or _rng(seed, seq_id, 0).random() < p_change


def _draw_subset(seed: int, seq_id: int, universe: Sequence[str], k: int) -> list[str]:
    if k >= len(universe):
        return list(universe)
    idx = _rng(seed, seq_id, 1).choice(len(universe), size=k, replace=False)
    return [universe[i] for i in idx]


def subscriptions_for(
    seq_id: int,
    seed: int,
    universe: Sequence[str],
    k: int = 100,
    p_change: float = 0.1,
) -> list[str]:
    """Lookup symbols of batch ``seq_id``; a pure function of its arguments.

    Batch 0 always draws a subset; every later batch redraws with
    probability ``p_change`` and otherwise repeats its predecessor's.
    """
    if not universe:
        return []
    c = seq_id
    while not _changes_at(seed, c, p_change):
        c -= 1
    return _draw_subset(seed, c, universe, k)


class SubscriptionSchedule:
    """Incremental form of :func:`subscriptions_for` for sequential replay."""

    def __init__(self, seed: int, universe: Sequence[str], k: int = 100, p_change: float = 0.1):
        self.seed, self.universe, self.k, self.p_change = seed, list(universe), k, p_change
        self._seq = -1
        self._current: list[str] = []
        if universe and k >= len(universe):
            log.warning(
                "subscription size %d covers the whole universe of %d symbols; "
                "subscriptions are not a proper subset", k, len(universe),
            )

    def for_seq(self, seq_id: int) -> list[str]:
        if seq_id != self._seq + 1:
            self._current = subscriptions_for(seq_id, self.seed, self.universe, self.k, self.p_change)
        elif self.universe and _changes_at(self.seed, seq_id, self.p_change):
            self._current = _draw_subset(self.seed, seq_id, self.universe, self.k)
        self._seq = seq_id
        return self._current


def build_batch(dataset: Dataset, batch_size: int, seq_id: int, lookup: list[str]) -> WireBatch:
    n_batches = batch_count(len(dataset), batch_size)
    lo = seq_id * batch_size
    return WireBatch(
        seq_id, seq_id == n_batches - 1, dataset.events[lo:lo + batch_size], list(lookup)
    )


def batch_count(n_events: int, batch_size: int) -> int:
    return max(1, -(-n_events // batch_size))


def replay_manifest(dataset: Dataset, batch_size: int, subscription_seed: int,
                    k: int = 100, p_change: float = 0.1) -> dict:
    """Digest of the exact byte stream a session with these settings is served."""
    sched = SubscriptionSchedule(subscription_seed, dataset.universe, k, p_change)
    total = hashlib.sha256()
    subs = hashlib.sha256()
    n = batch_count(len(dataset), batch_size)
    for seq in range(n):
        batch = build_batch(dataset, batch_size, seq, sched.for_seq(seq))
        total.update(encode_batch(batch))
        subs.update((",".join(batch.lookup_symbols) + "\n").encode())
    return {
        "dataset_sha256": dataset.digest(),
        "dataset_seed": dataset.seed,
        "events": len(dataset),
        "batch_size": batch_size,
        "subscription_seed": subscription_seed,
        "subscription_size": k,
        "p_change": p_change,
        "batches": n,
        "batch_stream_sha256": total.hexdigest(),
        "subscriptions_sha256": subs.hexdigest(),
    }


# scoring


def nearest_rank(samples: Sequence[int | float], percent: int):
    """Nearest-rank percentile: sorted[ceil(percent/100 * n) - 1]."""
    if not samples:
        raise EmptySamples("no samples")
    xs = sorted(samples)
    idx = max(0, (percent * len(xs) + 99) // 100 - 1)
    return xs[idx]


def percentile_p90(samples: Sequence[int | float]):
    return nearest_rank(samples, 90)


@dataclass(frozen=True)
class LatencyStats:
    mean_ns: float
    p90_ns: int
    samples: int


def _stats(samples: list[int]) -> Optional[LatencyStats]:
    if not samples:
        return None
    return LatencyStats(sum(samples) / len(samples), percentile_p90(samples), len(samples))


@dataclass
class LedgerEntry:
    t_sent: int
    t_q1: Optional[int] = None
    t_q2: Optional[int] = None


@dataclass
class SessionSummary:
    name: str
    benchmark_id: int
    batches: int
    answered: int
    duration_ns: int
    throughput_batches_per_s: float
    q1_latency: Optional[LatencyStats]
    q2_latency: Optional[LatencyStats]
    late_results: int
    complete: bool
    events: int = 0
    batch_size: int = 0
    dataset_seed: Optional[int] = None
    subscription_seed: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SessionSummary":
        d = dict(d)
        for key in ("q1_latency", "q2_latency"):
            if d.get(key) is not None:
                d[key] = LatencyStats(**d[key])
        return cls(**d)


def score_ledger(ledger: Sequence[LedgerEntry], t_start: int, t_end: int, *,
                 name: str = "", benchmark_id: int = 0, total_batches: Optional[int] = None,
                 **extra) -> SessionSummary:
    q1 = [e.t_q1 - e.t_sent for e in ledger if e.t_q1 is not None]
    q2 = [e.t_q2 - e.t_sent for e in ledger if e.t_q2 is not None]
    answered = sum(1 for e in ledger if e.t_q1 is not None and e.t_q2 is not None)
    duration = t_end - t_start
    total = len(ledger) if total_batches is None else total_batches
    return SessionSummary(
        name=name,
        benchmark_id=benchmark_id,
        batches=len(ledger),
        answered=answered,
        duration_ns=duration,
        throughput_batches_per_s=answered / (duration / 1e9) if duration > 0 else 0.0,
        q1_latency=_stats(q1),
        q2_latency=_stats(q2),
        late_results=len(ledger) - answered,
        complete=answered == total == len(ledger),
        **extra,
    )


@dataclass(frozen=True)
class LeaderboardEntry:
    position: int
    name: str
    rank_q1: int
    rank_q2: int
    mean_rank: float
    throughput: float
    summary: Optional[SessionSummary] = field(default=None, compare=False, repr=False)


def _p90(s: Optional[LatencyStats]) -> float:
    return s.p90_ns if s is not None else math.inf


def _competition_ranks(values: list[float]) -> list[int]:
    return [1 + sum(1 for other in values if other < v) for v in values]


def rank(summaries: Sequence[SessionSummary]) -> list[LeaderboardEntry]:
    """Rank per query by ascending p90, order by mean rank.

    Ties on mean rank go to the higher throughput, then to the name.
    """
    r1 = _competition_ranks([_p90(s.q1_latency) for s in summaries])
    r2 = _competition_ranks([_p90(s.q2_latency) for s in summaries])
    rows = [
        ((a + b) / 2, -s.throughput_batches_per_s, s.name, a, b, s)
        for s, a, b in zip(summaries, r1, r2)
    ]
    rows.sort(key=lambda r: r[:3])
    return [
        LeaderboardEntry(i + 1, s.name, a, b, m, s.throughput_batches_per_s, s)
        for i, (m, _, _, a, b, s) in enumerate(rows)
    ]


# sessions


class State(str, Enum):
    CREATED = "CREATED"
    RUNNING = "RUNNING"
    ENDED = "ENDED"


@dataclass
class BenchmarkSession:
    handle: BenchmarkHandle
    config: BenchmarkConfig
    dataset: Dataset
    schedule: SubscriptionSchedule
    last_activity: int
    state: State = State.CREATED
    cursor: int = 0
    ledger: list[LedgerEntry] = field(default_factory=list)
    t_start: Optional[int] = None
    t_end: Optional[int] = None
    timed_out: bool = False
    summary: Optional[SessionSummary] = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def n_batches(self) -> int:
        return batch_count(len(self.dataset), self.config.batch_size)


def score_session(session: BenchmarkSession) -> SessionSummary:
    if session.state is not State.ENDED or session.t_end is None:
        raise SessionNotEnded(f"session {session.handle.id} is {session.state.value}")
    return score_ledger(
        session.ledger,
        session.t_start if session.t_start is not None else session.t_end,
        session.t_end,
        name=session.config.name,
        benchmark_id=session.handle.id,
        total_batches=session.n_batches,
        events=len(session.dataset),
        batch_size=session.config.batch_size,
        dataset_seed=session.dataset.seed,
        subscription_seed=session.schedule.seed,
    )


DatasetProvider = Callable[[int], Dataset]


class Harness:
    """Implements the six benchmark calls; safe to share between server threads."""

    def __init__(
        self,
        datasets: Union[Dataset, DatasetProvider],
        subscription_seed: int = 0,
        subscription_size: int = 100,
        p_change: float = 0.1,
        max_sessions: int = 64,
        session_timeout_s: float = 600.0,
        pace: Optional[float] = None,
        out_dir: Optional[Union[str, os.PathLike]] = None,
        batch_size_override: Optional[int] = None,
        clock: Callable[[], int] = time.perf_counter_ns,
    ) -> None:
        self._datasets = datasets
        self.subscription_seed = subscription_seed
        self.subscription_size = subscription_size
        self.p_change = p_change
        self.max_sessions = max_sessions
        self.session_timeout_ns = int(session_timeout_s * 1e9)
        self.pace = pace
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.batch_size_override = batch_size_override
        self.clock = clock
        self.sessions: dict[int, BenchmarkSession] = {}
        self._next_id = 1
        self._lock = threading.Lock()

    def _dataset(self, seed: int) -> Dataset:
        if isinstance(self._datasets, Dataset):
            ds = self._datasets
            if ds.seed is not None and ds.seed != seed:
                log.warning("dataset_seed %d ignored; serving fixed dataset with seed %s", seed, ds.seed)
            return ds
        return self._datasets(seed)

    def _active(self) -> int:
        now = self.clock()
        return sum(
            1 for s in self.sessions.values()
            if s is None  # reserved, still loading its dataset
            or (s.state is not State.ENDED and now - s.last_activity <= self.session_timeout_ns)
        )

    # calls

    def create_benchmark(self, config: BenchmarkConfig) -> BenchmarkHandle:
        if not 1 <= config.batch_size <= MAX_BATCH_SIZE:
            raise BadConfig(f"batch_size must be in [1, {MAX_BATCH_SIZE}], got {config.batch_size}")
        if not config.name:
            raise BadConfig("name must be non-empty")
        if self.batch_size_override:
            config = replace(config, batch_size=self.batch_size_override)
        with self._lock:
            if self._active() >= self.max_sessions:
                raise CapacityExhausted(f"{self.max_sessions} sessions already active")
            bid = self._next_id
            self._next_id += 1
            handle = BenchmarkHandle(bid, secrets.token_hex(16))
            # reserve the slot before the (possibly slow) dataset load
            self.sessions[bid] = None  # type: ignore[assignment]
        try:
            dataset = self._dataset(config.dataset_seed)
        except Exception:
            with self._lock:
                del self.sessions[bid]
            raise
        sub_seed = self.subscription_seed if config.subscription_seed is None else config.subscription_seed
        schedule = SubscriptionSchedule(sub_seed, dataset.universe, self.subscription_size, self.p_change)
        session = BenchmarkSession(handle, config, dataset, schedule, last_activity=self.clock())
        with self._lock:
            self.sessions[bid] = session
        log.info("created benchmark %d (%s), %d events, batch size %d",
                 bid, config.name, len(dataset), config.batch_size)
        return handle

    def _session(self, h: BenchmarkHandle) -> BenchmarkSession:
        s = self.sessions.get(h.id)
        if s is None or not secrets.compare_digest(s.handle.token, h.token):
            raise UnknownBenchmark(f"no benchmark {h.id} with that token")
        return s

    def _enter(self, h: BenchmarkHandle) -> BenchmarkSession:
        s = self._session(h)
        if not s.lock.acquire(blocking=False):
            raise OutOfOrderCall("another call on this session is in progress")
        now = self.clock()
        if s.timed_out or (s.state is not State.ENDED and now - s.last_activity > self.session_timeout_ns):
            if not s.timed_out:
                s.timed_out = True
                s.state = State.ENDED
                s.t_end = s.last_activity
            s.lock.release()
            raise SessionTimeout(f"session {h.id} timed out")
        s.last_activity = now
        return s

    def start_benchmark(self, h: BenchmarkHandle) -> None:
        s = self._enter(h)
        try:
            if s.state is not State.CREATED:
                raise OutOfOrderCall(f"start in state {s.state.value}")
            s.state = State.RUNNING
            s.t_start = self.clock()
        finally:
            s.lock.release()

    def next_batch(self, h: BenchmarkHandle) -> WireBatch:
        s = self._enter(h)
        try:
            if s.state is not State.RUNNING:
                raise OutOfOrderCall(f"next_batch in state {s.state.value}")
            if s.cursor >= s.n_batches:
                raise OutOfOrderCall("last batch already delivered")
            if s.ledger:
                prev = s.ledger[-1]
                if prev.t_q1 is None or prev.t_q2 is None:
                    raise OutOfOrderCall(f"batch {len(s.ledger) - 1} still awaits results")
            seq = s.cursor
            batch = build_batch(s.dataset, s.config.batch_size, seq, s.schedule.for_seq(seq))
            if self.pace:
                self._pace(s, batch)
            s.cursor += 1
            s.ledger.append(LedgerEntry(self.clock()))
            return batch
        finally:
            s.lock.release()

    def _pace(self, s: BenchmarkSession, batch: WireBatch) -> None:
        if not batch.events or not s.dataset.events or s.t_start is None:
            return
        event_gap = batch.events[0].trading_ts - s.dataset.events[0].trading_ts
        due = s.t_start + int(event_gap * self.pace)  # type: ignore[operator]
        wait = due - self.clock()
        if wait > 0:
            time.sleep(wait / 1e9)

    def _result(self, h: BenchmarkHandle, benchmark_id: int, seq: int, slot: str) -> None:
        t = self.clock()
        s = self._enter(h)
        try:
            if s.state is not State.RUNNING:
                raise OutOfOrderCall(f"{slot} result in state {s.state.value}")
            if benchmark_id != h.id:
                raise UnknownBenchmark(f"result names benchmark {benchmark_id}, handle is {h.id}")
            if not 0 <= seq < len(s.ledger):
                raise UnknownSeqId(f"batch {seq} has not been delivered")
            entry = s.ledger[seq]
            if getattr(entry, slot) is not None:
                raise DuplicateResult(f"{slot} for batch {seq} already received")
            setattr(entry, slot, t)
        finally:
            s.lock.release()

    def result_q1(self, h: BenchmarkHandle, res: WireResultQ1) -> None:
        self._result(h, res.benchmark_id, res.batch_seq_id, "t_q1")

    def result_q2(self, h: BenchmarkHandle, res: WireResultQ2) -> None:
        self._result(h, res.benchmark_id, res.batch_seq_id, "t_q2")

    def end_benchmark(self, h: BenchmarkHandle) -> dict:
        s = self._enter(h)
        try:
            if s.state is not State.RUNNING:
                raise OutOfOrderCall(f"end in state {s.state.value}")
            s.t_end = self.clock()
            s.state = State.ENDED
            s.summary = score_session(s)
        finally:
            s.lock.release()
        if not s.summary.complete:
            log.warning("benchmark %d ended incomplete: %d/%d batches answered",
                        h.id, s.summary.answered, s.n_batches)
        if self.out_dir is not None:
            export_session(s, self.out_dir)
        return s.summary.to_dict()


def export_session(session: BenchmarkSession, out_dir: Union[str, os.PathLike]) -> None:
    """Append the summary to ``summaries.jsonl`` and write the per-batch ledger CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    assert session.summary is not None
    with open(out / "summaries.jsonl", "a") as fh:
        fh.write(json.dumps(session.summary.to_dict(), sort_keys=True) + "\n")
    with open(out / f"ledger-{session.handle.id}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "t_sent", "t_q1", "t_q2"])
        for i, e in enumerate(session.ledger):
            w.writerow([i, e.t_sent, "" if e.t_q1 is None else e.t_q1, "" if e.t_q2 is None else e.t_q2])
    manifest = replay_manifest(session.dataset, session.config.batch_size, session.schedule.seed,
                               session.schedule.k, session.schedule.p_change)
    (out / f"manifest-{session.handle.id}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_summaries(path: Union[str, os.PathLike]) -> list[SessionSummary]:
    with open(path) as fh:
        return [SessionSummary.from_dict(json.loads(line)) for line in fh if line.strip()]
