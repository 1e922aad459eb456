"""Seeded synthetic Trading Data generator and distribution checker.

The generator reproduces the shape of the real data rather than its
content: a Zipf-distributed symbol popularity, exchange and security-type
event shares of the price-only profile, and an intraday load curve with
spikes at open and close, a midday lull and silent weekends. Prices follow a
per-symbol geometric random walk.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
import os
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from . import __version__
from .marketdata import (
    COL_CURRENCY,
    COL_DATE,
    COL_LAST,
    COL_LAST_VOLUME,
    COL_SECTYPE,
    COL_SYMBOL,
    COL_TIME,
    COL_TRADING_DATE,
    COL_TRADING_TIME,
    N_COLUMNS,
    HEADER_LINE,
    NS_PER_DAY,
    TICK_NS,
    Exchange,
    RawRecord,
    SecurityType,
    Symbol,
    TickTimestamp,
    classify,
    format_csv_line,
    format_date,
    format_time,
    read_records,
)

MINUTES_PER_DAY = 1440
NS_PER_MINUTE = 60_000_000_000
TICKS_PER_MINUTE = NS_PER_MINUTE // TICK_NS

# intensity curve calibration constants (estimated from the published load plots)
OPEN_SPIKE = 3.0
OPEN_DECAY_MIN = 15.0
CLOSE_SPIKE = 2.5
CLOSE_RISE_MIN = 10.0
LULL_DEPTH = 0.45
LULL_CENTER = 12 * 60 + 30
LULL_WIDTH_MIN = 45.0

MIX_TOL = 0.02
SLOPE_TOL = 0.15
TOP1_MIN_SHARE = 0.30
SLOPE_MIN_COUNT = 10

_COL_ASK = 5
_COL_BID = 7


class BadConfig(ValueError):
    pass


class Unreadable(ValueError):
    pass


def _hhmm(text: str) -> int:
    h, m = text.split(":")
    return int(h) * 60 + int(m)


@dataclass
class GenConfig:
    seed: int = 0
    n_symbols: int = 5504
    days: int = 7
    total_events: int = 1_000_000
    start_date: dt.date = dt.date(2021, 11, 8)  # a Monday
    exchange_mix: dict[str, float] = field(
        default_factory=lambda: {"ETR": 0.54, "FR": 0.36, "NL": 0.10}
    )
    index_share: float = 0.82
    zipf_exponent: float = 1.2
    price_start: tuple[float, float] = (5.0, 500.0)
    volatility: tuple[float, float] = (2e-4, 2e-3)  # per-event log-return sd
    trading_open: str = "09:00"
    trading_close: str = "17:30"
    off_hours_share: float = 0.005
    full: bool = False
    nonprice_ratio: float = 4.0
    header: bool = False

    def validate(self) -> None:
        if self.n_symbols < 1:
            raise BadConfig("n_symbols must be >= 1")
        if self.days < 1:
            raise BadConfig("days must be >= 1")
        if self.total_events < 0:
            raise BadConfig("total_events must be >= 0")
        if set(self.exchange_mix) - {e.value for e in Exchange}:
            raise BadConfig(f"unknown exchange in mix {sorted(self.exchange_mix)}")
        if any(not 0 <= v <= 1 for v in self.exchange_mix.values()):
            raise BadConfig("exchange shares must lie in [0, 1]")
        if abs(sum(self.exchange_mix.values()) - 1) > 1e-9:
            raise BadConfig("exchange mix must sum to 1")
        for name in ("index_share", "off_hours_share"):
            if not 0 <= getattr(self, name) <= 1:
                raise BadConfig(f"{name} must lie in [0, 1]")
        if self.zipf_exponent <= 0:
            raise BadConfig("zipf_exponent must be > 0")
        lo, hi = self.price_start
        if not 0 < lo <= hi:
            raise BadConfig("price_start must be a positive range")
        vlo, vhi = self.volatility
        if not 0 <= vlo <= vhi:
            raise BadConfig("volatility must be a non-negative range")
        try:
            o, c = _hhmm(self.trading_open), _hhmm(self.trading_close)
        except ValueError:
            raise BadConfig("trading hours must be HH:MM") from None
        if not 0 <= o < c <= MINUTES_PER_DAY:
            raise BadConfig("trading_open must precede trading_close")
        if self.nonprice_ratio < 0:
            raise BadConfig("nonprice_ratio must be >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        d["price_start"] = list(self.price_start)
        d["volatility"] = list(self.volatility)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["start_date"] = dt.date.fromisoformat(d["start_date"])
        d["price_start"] = tuple(d["price_start"])
        d["volatility"] = tuple(d["volatility"])
        return cls(**d)


# intensity


@dataclass(frozen=True)
class IntensityCurve:
    """Per-minute event weights over the generated days."""

    weights: np.ndarray  # shape (days * 1440,), sums to 1
    weekday_profile: np.ndarray  # shape (1440,), one active day, sums to 1

    @classmethod
    def build(cls, cfg: GenConfig) -> "IntensityCurve":
        o, c = _hhmm(cfg.trading_open), _hhmm(cfg.trading_close)
        m = np.arange(MINUTES_PER_DAY, dtype=float)
        trading = (m >= o) & (m < c)
        shape = (
            1.0
            + OPEN_SPIKE * np.exp(-(m - o) / OPEN_DECAY_MIN)
            + CLOSE_SPIKE * np.exp(-(c - 1 - m) / CLOSE_RISE_MIN)
        ) * (1.0 - LULL_DEPTH * np.exp(-(((m - LULL_CENTER) / LULL_WIDTH_MIN) ** 2)))
        day = np.where(trading, shape, 0.0)
        day *= (1 - cfg.off_hours_share) / day.sum()
        off = ~trading
        if off.any():
            day[off] = cfg.off_hours_share / off.sum()
        else:
            day /= day.sum()

        active = [
            (cfg.start_date + dt.timedelta(days=d)).weekday() < 5 for d in range(cfg.days)
        ]
        if not any(active):
            raise BadConfig("the configured days contain no weekday")
        weights = np.concatenate([day if a else np.zeros(MINUTES_PER_DAY) for a in active])
        return cls(weights / weights.sum(), day / day.sum())


# universe


@dataclass(frozen=True)
class Universe:
    symbols: list[Symbol]
    sec_types: list[SecurityType]
    popularity: np.ndarray  # event probability per symbol, rank order
    start_price: np.ndarray
    volatility: np.ndarray


def _names(rng: np.random.Generator, n: int) -> list[str]:
    alphabet = np.array(list(string.ascii_uppercase + string.digits))
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        length = int(rng.integers(2, 6))
        first = string.ascii_uppercase[int(rng.integers(0, 26))]
        name = first + "".join(rng.choice(alphabet, size=length - 1))
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


def zipf_probabilities(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -exponent
    return w / w.sum()


def _assign_cells(popularity: np.ndarray, targets: list[float]) -> np.ndarray:
    """Greedy: give each symbol, most popular first, to the cell furthest below target."""
    assigned = np.zeros(len(targets))
    t = np.asarray(targets)
    cells = np.empty(len(popularity), dtype=int)
    total = 0.0
    for i, w in enumerate(popularity):
        total += w
        c = int(np.argmax(t * total - assigned))
        cells[i] = c
        assigned[c] += w
    return cells


def build_universe(cfg: GenConfig, rng: np.random.Generator) -> Universe:
    popularity = zipf_probabilities(cfg.n_symbols, cfg.zipf_exponent)
    cells = [
        (Exchange(ex), st)
        for ex in sorted(cfg.exchange_mix)
        for st in (SecurityType.INDEX, SecurityType.EQUITY)
    ]
    targets = [
        cfg.exchange_mix[ex.value] * (cfg.index_share if st is SecurityType.INDEX else 1 - cfg.index_share)
        for ex, st in cells
    ]
    assignment = _assign_cells(popularity, targets)
    names = _names(rng, cfg.n_symbols)
    lo, hi = cfg.price_start
    start = np.exp(rng.uniform(math.log(lo), math.log(hi), cfg.n_symbols))
    vlo, vhi = cfg.volatility
    vol = rng.uniform(vlo, vhi, cfg.n_symbols)
    return Universe(
        symbols=[Symbol(n, cells[c][0]) for n, c in zip(names, assignment)],
        sec_types=[cells[c][1] for c in assignment],
        popularity=popularity,
        start_price=start,
        volatility=vol,
    )


# generation


def _sample_times(rng: np.random.Generator, curve: IntensityCurve, start_day: int, n: int) -> np.ndarray:
    cdf = np.cumsum(curve.weights)
    cdf[-1] = 1.0
    minute = np.searchsorted(cdf, rng.random(n), side="right")
    ticks = rng.integers(0, TICKS_PER_MINUTE, n)
    return (start_day * MINUTES_PER_DAY + minute).astype(np.int64) * NS_PER_MINUTE + ticks * TICK_NS


def _sample_symbols(rng: np.random.Generator, popularity: np.ndarray, n: int) -> np.ndarray:
    cdf = np.cumsum(popularity)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(popularity) - 1)


def _walk_prices(rng: np.random.Generator, uni: Universe, sym: np.ndarray) -> np.ndarray:
    """Geometric random walk per symbol, in event order."""
    steps = rng.standard_normal(len(sym)) * uni.volatility[sym]
    order = np.argsort(sym, kind="stable")
    s_sorted = sym[order]
    cs = np.cumsum(steps[order])
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    offset = np.repeat(np.r_[0.0, cs[starts[1:] - 1]], np.diff(np.r_[starts, len(sym)]))
    log_walk = np.empty(len(sym))
    log_walk[order] = cs - offset
    return uni.start_price[sym] * np.exp(log_walk)


def _fmt_price(p: float) -> str:
    return f"{max(p, 1e-4):.4f}"


@dataclass
class _Columns:
    ts: np.ndarray
    sym: np.ndarray
    price: np.ndarray
    is_price: np.ndarray


def _generate_columns(cfg: GenConfig) -> tuple[Universe, _Columns]:
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    s_uni, s_time, s_sym, s_price, s_extra = (np.random.default_rng(s) for s in root.spawn(5))
    uni = build_universe(cfg, s_uni)
    curve = IntensityCurve.build(cfg)
    start_day = TickTimestamp(cfg.start_date, 0).day_ordinal
    n = cfg.total_events

    ts = _sample_times(s_time, curve, start_day, n)
    sym = _sample_symbols(s_sym, uni.popularity, n)
    is_price = np.ones(n, dtype=bool)
    if cfg.full and cfg.nonprice_ratio > 0:
        m = int(round(n * cfg.nonprice_ratio))
        ts = np.concatenate([ts, _sample_times(s_extra, curve, start_day, m)])
        sym = np.concatenate([sym, _sample_symbols(s_extra, uni.popularity, m)])
        is_price = np.concatenate([is_price, np.zeros(m, dtype=bool)])
    order = np.argsort(ts, kind="stable")
    ts, sym, is_price = ts[order], sym[order], is_price[order]

    price = np.empty(len(ts))
    price[is_price] = _walk_prices(s_price, uni, sym[is_price])
    price[~is_price] = uni.start_price[sym[~is_price]]
    return uni, _Columns(ts, sym, price, is_price)


def _records(uni: Universe, cols: _Columns) -> Iterator[tuple[int, RawRecord]]:
    sym_text = [str(s) for s in uni.symbols]
    type_text = [t.value for t in uni.sec_types]
    date_cache: dict[int, str] = {}
    for ts, s, p, is_price in zip(cols.ts.tolist(), cols.sym.tolist(), cols.price.tolist(),
                                  cols.is_price.tolist()):
        day, tod = divmod(ts, NS_PER_DAY)
        date_text = date_cache.get(day)
        if date_text is None:
            date_text = date_cache[day] = format_date(TickTimestamp.from_epoch_ns(ts).date)
        time_text = format_time(tod)
        cols_: list[Optional[str]] = [None] * N_COLUMNS
        cols_[COL_SYMBOL - 1] = sym_text[s]
        cols_[COL_SECTYPE - 1] = type_text[s]
        cols_[COL_DATE - 1] = date_text
        cols_[COL_TIME - 1] = time_text
        cols_[COL_CURRENCY - 1] = "EUR"
        cols_[COL_TRADING_TIME - 1] = time_text
        if is_price:
            cols_[COL_LAST - 1] = _fmt_price(p)
            cols_[COL_LAST_VOLUME - 1] = "100"
            cols_[COL_TRADING_DATE - 1] = date_text
        else:
            # bid/ask update: Last and Trading date stay NULL
            cols_[_COL_ASK - 1] = _fmt_price(p * 1.0005)
            cols_[_COL_BID - 1] = _fmt_price(p * 0.9995)
        yield day, RawRecord(tuple(cols_))


def generate(cfg: GenConfig) -> Iterator[RawRecord]:
    """Records in global timestamp order; a pure function of ``cfg``."""
    uni, cols = _generate_columns(cfg)
    for _, rec in _records(uni, cols):
        yield rec


def write_dataset(cfg: GenConfig, out_dir: Union[str, os.PathLike]) -> dict:
    """Write one ``YYYY-MM-DD.csv`` per day plus ``manifest.json``; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    uni, cols = _generate_columns(cfg)
    start_day = TickTimestamp(cfg.start_date, 0).day_ordinal
    handles = {}
    hashes = {}
    counts = Counter()
    try:
        for d in range(cfg.days):
            date = cfg.start_date + dt.timedelta(days=d)
            fh = open(out / f"{date.isoformat()}.csv", "w", encoding="utf-8", newline="\n")
            handles[start_day + d] = fh
            hashes[start_day + d] = hashlib.sha256()
            if cfg.header:
                fh.write(HEADER_LINE + "\n")
                hashes[start_day + d].update((HEADER_LINE + "\n").encode())
        for day, rec in _records(uni, cols):
            line = format_csv_line(rec) + "\n"
            handles[day].write(line)
            hashes[day].update(line.encode())
            counts[day] += 1
    finally:
        for fh in handles.values():
            fh.close()
    files = [
        {
            "name": f"{(cfg.start_date + dt.timedelta(days=d)).isoformat()}.csv",
            "records": counts[start_day + d],
            "sha256": hashes[start_day + d].hexdigest(),
        }
        for d in range(cfg.days)
    ]
    manifest = {"generator": f"tickcep {__version__}", "config": cfg.to_json(), "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# validation


@dataclass
class DistributionReport:
    events: int
    symbols: int
    exchange_shares: dict[str, float]
    index_share: float
    rank_frequency_slope: float
    top_1pct_share: float
    diurnal_correlation: float
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def rank_frequency_slope(counts: np.ndarray, min_count: int = SLOPE_MIN_COUNT, points: int = 50) -> float:
    """Least-squares log-log slope of the rank/frequency curve.

    Ranks are sampled log-uniformly so every decade weighs the same, and the
    tail below ``min_count`` events is cut off because sorting noise bends it.
    """
    freq = np.sort(np.asarray(counts))[::-1]
    freq = freq[freq >= min_count]
    if len(freq) < 2:
        return 0.0
    ranks = np.unique(np.geomspace(1, len(freq), points).round().astype(int))
    x = np.log(ranks)
    y = np.log(freq[ranks - 1])
    return float(np.polyfit(x, y, 1)[0])


def validate_distribution(
    path: Union[str, os.PathLike],
    config: Optional[GenConfig] = None,
    header: Optional[bool] = None,
) -> DistributionReport:
    """Measure a dataset (file or directory) against the generator's targets.

    Targets come from ``config``, else the directory's manifest, else defaults.
    """
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.csv"))
        manifest = p / "manifest.json"
        if config is None and manifest.exists():
            config = GenConfig.from_json(json.loads(manifest.read_text())["config"])
    else:
        files = [p]
    cfg = config or GenConfig()
    use_header = cfg.header if header is None else header

    by_symbol: Counter[str] = Counter()
    by_exchange: Counter[str] = Counter()
    by_type: Counter[str] = Counter()
    minute_hist = np.zeros(MINUTES_PER_DAY)
    n = 0
    try:
        for f in files:
            with open(f, encoding="utf-8") as fh:
                for rec in read_records(fh, header=use_header):
                    ev = classify(rec)
                    if ev is None:
                        continue
                    n += 1
                    by_symbol[str(ev.symbol)] += 1
                    by_exchange[ev.symbol.exchange.value] += 1
                    by_type[ev.sec_type.value] += 1
                    minute_hist[ev.trading_ts.time_of_day // NS_PER_MINUTE] += 1
    except (OSError, ValueError) as exc:
        raise Unreadable(f"cannot read {path}: {exc}") from exc
    if n == 0:
        raise Unreadable(f"{path} contains no price events")

    shares = {ex.value: by_exchange[ex.value] / n for ex in Exchange}
    idx_share = by_type[SecurityType.INDEX.value] / n
    counts = np.array(sorted(by_symbol.values(), reverse=True))
    top = max(1, int(math.ceil(0.01 * len(counts))))
    top_share = float(counts[:top].sum() / n)
    slope = rank_frequency_slope(counts)
    profile = IntensityCurve.build(cfg).weekday_profile
    corr = float(np.corrcoef(minute_hist, profile)[0, 1]) if minute_hist.std() > 0 else 0.0

    checks = {
        f"exchange_share_{ex}": abs(shares.get(ex, 0.0) - target) <= MIX_TOL
        for ex, target in cfg.exchange_mix.items()
    }
    checks["index_share"] = abs(idx_share - cfg.index_share) <= MIX_TOL
    checks["rank_frequency_slope"] = abs(slope + cfg.zipf_exponent) <= SLOPE_TOL
    checks["long_tail_top_1pct"] = top_share >= TOP1_MIN_SHARE
    return DistributionReport(n, len(by_symbol), shares, idx_share, slope, top_share, corr, checks)
