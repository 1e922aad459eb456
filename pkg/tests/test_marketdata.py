from __future__ import annotations

import datetime as dt
import itertools
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from tickcep.datagen import GenConfig, generate
from tickcep.marketdata import (
    COL_LAST,
    COL_SECTYPE,
    COL_SYMBOL,
    COL_TRADING_DATE,
    COL_TRADING_TIME,
    HEADER_LINE,
    N_COLUMNS,
    Exchange,
    FieldCountMismatch,
    MalformedField,
    RawRecord,
    SecurityType,
    Symbol,
    TickTimestamp,
    classify,
    format_csv_line,
    format_time,
    parse_csv_line,
    parse_time,
    price_record,
    read_records,
)

from _util import MONDAY


def _row(**cols: str) -> RawRecord:
    return RawRecord.from_mapping({int(k[1:]): v for k, v in cols.items()})


def test_all_null_line_parses_to_39_nulls():
    rec = parse_csv_line("," * 38)
    assert rec.columns == (None,) * N_COLUMNS


def test_all_null_record_formats_to_38_commas():
    assert format_csv_line(RawRecord((None,) * N_COLUMNS)) == "," * 38


@pytest.mark.parametrize("n_fields", [1, 38, 40])
def test_wrong_arity_is_rejected(n_fields):
    with pytest.raises(FieldCountMismatch):
        parse_csv_line(",".join(["x"] * n_fields))


def test_price_line_round_trips_through_writer():
    ts = TickTimestamp.parse("08-11-2021", "09:00:00.0000")
    line = format_csv_line(price_record("A2.FR", "I", "12.5", ts))
    rec = parse_csv_line(line)
    assert rec[COL_SYMBOL] == "A2.FR"
    assert rec[COL_SECTYPE] == "I"
    assert rec[COL_LAST] == "12.5"
    assert format_csv_line(rec) == line


def test_price_field_is_written_verbatim():
    rec = _row(c1="X.NL", c2="E", c22="10.5", c24="10:00:00.0000", c27="08-11-2021")
    assert format_csv_line(rec).split(",")[COL_LAST - 1] == "10.5"


def test_trailing_newline_is_ignored():
    line = "," * 38
    assert parse_csv_line(line + "\r\n") == parse_csv_line(line)


def test_classify_missing_last_is_not_a_price_event():
    rec = _row(c1="A.ETR", c2="E", c24="09:00:00.0000", c27="08-11-2021")
    assert classify(rec) is None


@pytest.mark.parametrize("missing", [COL_TRADING_TIME, COL_TRADING_DATE])
def test_classify_missing_trading_time_or_date(missing):
    cols = {COL_SYMBOL: "A.ETR", COL_SECTYPE: "E", COL_LAST: "1",
            COL_TRADING_TIME: "09:00:00.0000", COL_TRADING_DATE: "08-11-2021"}
    del cols[missing]
    assert classify(RawRecord.from_mapping(cols)) is None


def test_classify_maps_fields():
    rec = _row(c1="A.ETR", c2="I", c22="10.0", c24="09:00:00.0000", c27="08-11-2021")
    ev = classify(rec)
    assert ev is not None
    assert ev.last_price == Decimal("10.0")
    assert ev.symbol == Symbol("A", Exchange.ETR)
    assert ev.sec_type is SecurityType.INDEX
    assert ev.trading_ts == TickTimestamp(dt.date(2021, 11, 8), 9 * 3600 * 10**9)


@pytest.mark.parametrize("bad", ["abc", "NULL", "1,5", "nan", "inf"])
def test_classify_unparseable_price(bad):
    rec = _row(c1="A.ETR", c2="I", c22=bad, c24="09:00:00.0000", c27="08-11-2021")
    with pytest.raises(MalformedField):
        classify(rec)


@pytest.mark.parametrize("price", ["0", "-1.5", "0.0000"])
def test_classify_non_positive_price_is_not_a_price_event(price):
    rec = _row(c1="A.ETR", c2="I", c22=price, c24="09:00:00.0000", c27="08-11-2021")
    assert classify(rec) is None


@pytest.mark.parametrize("field,value", [
    ("c24", "9:00:00.0000"), ("c24", "24:00:00.0000"), ("c27", "31-02-2021"),
    ("c27", "2021-11-08"), ("c1", "A.XETRA"), ("c1", "NOSUFFIX"), ("c2", "X"),
])
def test_classify_malformed_starred_fields(field, value):
    cols = dict(c1="A.ETR", c2="I", c22="1", c24="09:00:00.0000", c27="08-11-2021")
    cols[field] = value
    with pytest.raises(MalformedField):
        classify(_row(**cols))


@pytest.mark.parametrize("text", ["X.ETR", "A2.FR", "ABC.NL"])
def test_symbol_text_round_trip(text):
    assert str(Symbol.parse(text)) == text


@pytest.mark.parametrize("text", [".ETR", "A.B.ETR", "A B.FR", "A.fr"])
def test_symbol_rejects_ambiguous_text(text):
    with pytest.raises(MalformedField):
        Symbol.parse(text)


def test_header_line_is_skipped_only_when_flagged():
    body = "," * 38 + "\n"
    assert len(list(read_records([HEADER_LINE + "\n", body], header=True))) == 1
    with pytest.raises(FieldCountMismatch):
        list(read_records(["ID.,Nope\n", body], header=False))


def test_blank_lines_are_skipped():
    assert len(list(read_records(["\n", "," * 38 + "\n", "  \n"]))) == 1


def test_time_boundaries():
    assert parse_time("00:00:00.0000") == 0
    assert parse_time("23:59:59.9999") == 86_400 * 10**9 - 100_000
    assert format_time(parse_time("09:07:30.0001")) == "09:07:30.0001"


@given(st.integers(0, 864_000_000 - 1))
def test_time_codec_identity(ticks):
    tod = ticks * 100_000
    assert parse_time(format_time(tod)) == tod


@given(st.dates(dt.date(1970, 1, 1), dt.date(2200, 1, 1)), st.integers(0, 86_400 * 10**9 - 1))
def test_epoch_ns_round_trip(date, tod):
    ts = TickTimestamp(date, tod)
    assert TickTimestamp.from_epoch_ns(ts.epoch_ns) == ts


_field = st.one_of(
    st.none(),
    st.text(st.characters(blacklist_characters=",\r\n", blacklist_categories=("Cs",)), min_size=1),
)


@given(st.lists(_field, min_size=N_COLUMNS, max_size=N_COLUMNS))
def test_codec_identity_on_arbitrary_records(cols):
    rec = RawRecord(tuple(cols))
    assert parse_csv_line(format_csv_line(rec)) == rec


@given(st.decimals(allow_nan=False, allow_infinity=False, places=4, min_value=-1000, max_value=1000))
def test_classify_never_yields_non_positive_price(price):
    rec = _row(c1="A.FR", c2="E", c22=str(price), c24="12:00:00.0000", c27="08-11-2021")
    ev = classify(rec)
    assert (ev is None) == (price <= 0)
    if ev is not None:
        assert ev.last_price > 0


def test_generated_records_round_trip_and_classify():
    cfg = GenConfig(seed=3, n_symbols=50, days=2, total_events=2000, full=True)
    n_price = 0
    for rec in generate(cfg):
        assert parse_csv_line(format_csv_line(rec)) == rec
        n_price += classify(rec) is not None
    assert n_price == 2000


def test_record_access_is_one_based():
    rec = RawRecord(tuple(str(i) for i in range(1, N_COLUMNS + 1)))
    assert [rec[i] for i in (1, 22, 39)] == ["1", "22", "39"]
    assert list(itertools.islice(rec.columns, 2)) == ["1", "2"]


def test_monday_fixture_is_a_monday():
    assert MONDAY.weekday() == 0
