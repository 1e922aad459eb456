"""Symbols, tick events and the 39-column Trading Data CSV codec.

Only the columns the queries need (1, 2, 22, 24, 27) get typed accessors;
everything else is carried verbatim as text so that a parsed record can be
written back byte-for-byte.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Iterable, Iterator, Optional

N_COLUMNS = 39

# 1-based column ids as listed in the data set documentation
COL_SYMBOL = 1
COL_SECTYPE = 2
COL_DATE = 3
COL_TIME = 4
COL_CURRENCY = 12
COL_LAST = 22
COL_LAST_VOLUME = 23
COL_TRADING_TIME = 24
COL_TRADING_DATE = 27

COLUMN_TITLES = (
    "ID.[Exchange]", "SecType", "Date", "Time", "Ask", "Ask volume", "Bid",
    "Bid volume", "Ask time", "Day's high ask", "Close", "Currency",
    "Day's high ask time", "Day's high", "ISIN", "Auction price",
    "Day's low ask", "Day's low", "Day's low ask time", "Open",
    "Nominal value", "Last", "Last volume", "Trading time", "Total volume",
    "Mid price", "Trading date", "Profit", "Current price", "Related indices",
    "Day high bid time", "Day low bid time", "Open time", "Last price time",
    "Close time", "Day high time", "Day low time", "Bid time", "Auction time",
)
HEADER_LINE = ",".join(COLUMN_TITLES)
HEADER_PREFIX = "ID."

NS_PER_SECOND = 1_000_000_000
NS_PER_DAY = 86_400 * NS_PER_SECOND
TICK_NS = 100_000  # CSV time resolution: 100 microseconds

UNIX_EPOCH = dt.date(1970, 1, 1)
_EPOCH_ORDINAL = UNIX_EPOCH.toordinal()


class TickDataError(ValueError):
    """Base class for codec errors."""


class FieldCountMismatch(TickDataError):
    pass


class MalformedField(TickDataError):
    pass


class Exchange(str, Enum):
    FR = "FR"
    NL = "NL"
    ETR = "ETR"


class SecurityType(str, Enum):
    EQUITY = "E"
    INDEX = "I"


@dataclass(frozen=True, slots=True)
class Symbol:
    base: str
    exchange: Exchange

    def __post_init__(self) -> None:
        if not self.base or "." in self.base or any(c.isspace() for c in self.base):
            raise MalformedField(f"invalid symbol base {self.base!r}")
        if not isinstance(self.exchange, Exchange):
            object.__setattr__(self, "exchange", Exchange(self.exchange))

    @classmethod
    def parse(cls, text: str) -> "Symbol":
        base, sep, suffix = text.rpartition(".")
        if not sep:
            raise MalformedField(f"symbol {text!r} has no exchange suffix")
        try:
            exchange = Exchange(suffix)
        except ValueError:
            raise MalformedField(f"unknown exchange suffix in {text!r}") from None
        return cls(base, exchange)

    def __str__(self) -> str:
        return f"{self.base}.{self.exchange.value}"


@dataclass(frozen=True, slots=True, order=True)
class TickTimestamp:
    """Calendar date plus nanoseconds since local midnight.

    The clock is treated as opaque local time; no timezone or DST arithmetic
    is ever applied.
    """

    date: dt.date
    time_of_day: int  # ns since midnight

    def __post_init__(self) -> None:
        if not 0 <= self.time_of_day < NS_PER_DAY:
            raise MalformedField(f"time of day out of range: {self.time_of_day}")

    @property
    def day_ordinal(self) -> int:
        """Days since 1970-01-01."""
        return self.date.toordinal() - _EPOCH_ORDINAL

    @property
    def epoch_ns(self) -> int:
        return self.day_ordinal * NS_PER_DAY + self.time_of_day

    @classmethod
    def from_epoch_ns(cls, ns: int) -> "TickTimestamp":
        days, tod = divmod(ns, NS_PER_DAY)
        return cls(dt.date.fromordinal(days + _EPOCH_ORDINAL), tod)

    @classmethod
    def parse(cls, date_text: str, time_text: str) -> "TickTimestamp":
        return cls(parse_date(date_text), parse_time(time_text))

    def format_date(self) -> str:
        return format_date(self.date)

    def format_time(self) -> str:
        return format_time(self.time_of_day)


def parse_time(text: str) -> int:
    """``HH:MM:SS.ssss`` -> ns since midnight."""
    if len(text) != 13 or text[2] != ":" or text[5] != ":" or text[8] != ".":
        raise MalformedField(f"bad time {text!r}")
    hh, mm, ss, frac = text[0:2], text[3:5], text[6:8], text[9:13]
    if not (hh + mm + ss + frac).isdigit():
        raise MalformedField(f"bad time {text!r}")
    h, m, s = int(hh), int(mm), int(ss)
    if h > 23 or m > 59 or s > 59:
        raise MalformedField(f"bad time {text!r}")
    return ((h * 60 + m) * 60 + s) * NS_PER_SECOND + int(frac) * TICK_NS


def format_time(tod_ns: int) -> str:
    ticks, rem = divmod(tod_ns, TICK_NS)
    if rem:
        raise MalformedField(f"time {tod_ns} ns is not on the 100us grid")
    secs, frac = divmod(ticks, 10_000)
    mins, s = divmod(secs, 60)
    h, m = divmod(mins, 60)
    return f"{h:02d}:{m:02d}:{s:02d}.{frac:04d}"


def parse_date(text: str) -> dt.date:
    """``DD-MM-YYYY`` -> date."""
    if len(text) != 10 or text[2] != "-" or text[5] != "-":
        raise MalformedField(f"bad date {text!r}")
    try:
        return dt.date(int(text[6:10]), int(text[3:5]), int(text[0:2]))
    except ValueError:
        raise MalformedField(f"bad date {text!r}") from None


def format_date(date: dt.date) -> str:
    return f"{date.day:02d}-{date.month:02d}-{date.year:04d}"


def parse_price(text: str) -> Decimal:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise MalformedField(f"bad price {text!r}") from None
    if not value.is_finite():
        raise MalformedField(f"non-finite price {text!r}")
    return value


@dataclass(frozen=True, slots=True)
class TickEvent:
    symbol: Symbol
    sec_type: SecurityType
    last_price: Decimal
    trading_ts: TickTimestamp

    def __post_init__(self) -> None:
        if not self.last_price.is_finite() or self.last_price <= 0:
            raise ValueError(f"last_price must be finite and > 0, got {self.last_price}")


@dataclass(frozen=True, slots=True)
class RawRecord:
    """One CSV line as 39 positional optional strings (``None`` is NULL)."""

    columns: tuple[Optional[str], ...]

    def __post_init__(self) -> None:
        if len(self.columns) != N_COLUMNS:
            raise FieldCountMismatch(f"expected {N_COLUMNS} fields, got {len(self.columns)}")

    def __getitem__(self, col: int) -> Optional[str]:
        """1-based column access."""
        return self.columns[col - 1]

    @classmethod
    def from_mapping(cls, values: dict[int, str]) -> "RawRecord":
        cols: list[Optional[str]] = [None] * N_COLUMNS
        for col, text in values.items():
            cols[col - 1] = text or None
        return cls(tuple(cols))


def parse_csv_line(line: str) -> RawRecord:
    line = line.rstrip("\r\n")
    fields = line.split(",")
    if len(fields) != N_COLUMNS:
        raise FieldCountMismatch(f"expected {N_COLUMNS} fields, got {len(fields)}")
    return RawRecord(tuple(f if f else None for f in fields))


def format_csv_line(record: RawRecord) -> str:
    return ",".join(c if c is not None else "" for c in record.columns)


def classify(record: RawRecord) -> Optional[TickEvent]:
    """Return the price event carried by ``record``, or ``None`` if it is not one.

    A record is a price event iff Last, Trading time and Trading date are all
    present and Last is a positive decimal. Present-but-unparseable starred
    fields raise MalformedField.
    """
    last = record[COL_LAST]
    time_text = record[COL_TRADING_TIME]
    date_text = record[COL_TRADING_DATE]
    if last is None or time_text is None or date_text is None:
        return None
    price = parse_price(last)
    ts = TickTimestamp.parse(date_text, time_text)
    if price <= 0:
        return None
    symbol_text = record[COL_SYMBOL]
    sec_text = record[COL_SECTYPE]
    if symbol_text is None or sec_text is None:
        raise MalformedField("price event without symbol or security type")
    try:
        sec_type = SecurityType(sec_text)
    except ValueError:
        raise MalformedField(f"bad security type {sec_text!r}") from None
    return TickEvent(Symbol.parse(symbol_text), sec_type, price, ts)


def price_record(
    symbol: Symbol | str,
    sec_type: SecurityType | str,
    price: str,
    ts: TickTimestamp,
    extra: Optional[dict[int, str]] = None,
) -> RawRecord:
    """Build the RawRecord of a price event (system date/time mirror trading ones)."""
    date_text, time_text = ts.format_date(), ts.format_time()
    values = {
        COL_SYMBOL: str(symbol),
        COL_SECTYPE: sec_type.value if isinstance(sec_type, SecurityType) else sec_type,
        COL_DATE: date_text,
        COL_TIME: time_text,
        COL_LAST: price,
        COL_TRADING_TIME: time_text,
        COL_TRADING_DATE: date_text,
    }
    if extra:
        values.update(extra)
    return RawRecord.from_mapping(values)


def read_records(lines: Iterable[str], header: bool = False) -> Iterator[RawRecord]:
    """Yield RawRecords from an iterable of lines, skipping an ``ID.`` header if asked."""
    first = True
    for line in lines:
        if first:
            first = False
            if header and line.startswith(HEADER_PREFIX):
                continue
        if not line.strip():
            continue
        yield parse_csv_line(line)
