from __future__ import annotations

import dataclasses
import random
from decimal import Decimal

from hypothesis import given, settings, strategies as st

from tickcep import windowing
from tickcep.engine import Engine, EngineConfig
from tickcep.marketdata import SecurityType, Symbol, TickEvent, TickTimestamp
from tickcep.oracle import OracleRow, diff, engine_output, load_engine_dump, oracle_run

from _util import MONDAY, tick, tick_ns

FIVE_MIN = 300 * 10**9
DAY = TickTimestamp(MONDAY, 0).day_ordinal


def _run_engine(events, **kw):
    eng = Engine(EngineConfig(retention="full", shards=kw.pop("shards", 1), **kw))
    eng.ingest(events)
    eng.close()
    return engine_output(eng)


def test_empty_dataset():
    assert oracle_run([]) == {}


def test_constant_two_window_stream():
    c = 12.5
    out = oracle_run([tick("A.ETR", c, "09:00:00.0000"), tick("A.ETR", c, "09:05:00.0000")])
    (row,) = out["A.ETR"]
    assert (row.day, row.slot, row.close) == (DAY, 108, c)
    # hand evaluation of the recurrence from a zero start
    assert row.ema38 == c * (2 / 39)
    assert row.ema100 == c * (2 / 101)
    assert row.advisory == "BUY"


def test_identical_outputs_have_no_diff():
    events = [tick_ns("A.ETR", 1 + i % 3, i * FIVE_MIN) for i in range(20)]
    out = oracle_run(events)
    assert diff(out, out) == []
    assert diff(out, _run_engine(events)) == []


def test_perturbed_ema_is_flagged():
    events = [tick_ns("A.ETR", 1 + i % 3, i * FIVE_MIN) for i in range(20)]
    out = oracle_run(events)
    rows = list(out["A.ETR"])
    rows[7] = dataclasses.replace(rows[7], ema38=rows[7].ema38 * (1 + 1e-6))
    problems = diff(out, {"A.ETR": rows})
    assert len(problems) == 1 and "ema38" in problems[0]


def test_tolerance_admits_tiny_float_noise():
    out = oracle_run([tick_ns("A.ETR", 3, i * FIVE_MIN) for i in range(5)])
    rows = [dataclasses.replace(r, ema100=r.ema100 * (1 + 1e-12)) for r in out["A.ETR"]]
    assert diff(out, {"A.ETR": rows}) == []


def test_missing_extra_and_advisory_mismatches():
    row = OracleRow(DAY, 0, 1.0, 0.05, 0.02, "BUY")
    assert diff({"A.ETR": [row]}, {}) == ["A.ETR: missing from engine output"]
    assert diff({}, {"A.ETR": [row]}) == ["A.ETR: unexpected in engine output"]
    assert "advisory" in diff({"A.ETR": [row]}, {"A.ETR": [dataclasses.replace(row, advisory=None)]})[0]
    assert diff({"A.ETR": []}, {}) == []


def test_diff_limit():
    row = OracleRow(DAY, 0, 1.0, 0.05, 0.02, "BUY")
    oracle = {f"S{i}.FR": [row] for i in range(10)}
    assert len(diff(oracle, {}, limit=3)) == 3


def _closed_interval_slot(tod, length_ns):
    # boundary instants belong to the window they close instead of the one they open
    return (tod - 1) // length_ns if tod > 0 and tod % length_ns == 0 else tod // length_ns


def test_mutated_boundary_rule_is_caught(monkeypatch):
    base = 9 * 3600 * 10**9
    fixture = [
        tick_ns("A.ETR", 10, base),
        tick_ns("A.ETR", 11, base + 4 * 60 * 10**9),
        tick_ns("A.ETR", 30, base + FIVE_MIN),
        tick_ns("A.ETR", 12, base + 2 * FIVE_MIN),
        tick_ns("A.ETR", 13, base + 3 * FIVE_MIN),
    ]
    expected = oracle_run(fixture)
    assert diff(expected, _run_engine(fixture)) == []
    monkeypatch.setattr(windowing, "slot_of", _closed_interval_slot)
    assert diff(expected, _run_engine(fixture)) != []


def test_engine_dump_round_trip(tmp_path):
    events = [tick_ns(f"S{i % 3}.NL", 1 + (i * 7) % 5, i * FIVE_MIN // 2) for i in range(40)]
    eng = Engine(EngineConfig(retention="full", shards=1))
    eng.ingest(events)
    eng.dump(tmp_path / "d.jsonl")
    assert load_engine_dump(tmp_path / "d.jsonl") == engine_output(eng)
    assert diff(oracle_run(events), load_engine_dump(tmp_path / "d.jsonl")) == []


def _stream(seed: int, n: int) -> list[TickEvent]:
    rng = random.Random(seed)
    t = DAY * 86_400 * 10**9 + rng.randrange(86_400) * 10**9
    out = []
    for _ in range(n):
        t += rng.choice([0, 10**8, 30 * 10**9, FIVE_MIN, 7 * FIVE_MIN, 3600 * 10**9])
        when = t - rng.choice([0, 0, 0, 0, 10**9, FIVE_MIN, 3 * FIVE_MIN])
        sym = Symbol.parse(f"S{rng.randrange(5)}.{rng.choice(['FR', 'NL'])}")
        price = Decimal(rng.randrange(1, 40000)) / 10000
        out.append(TickEvent(sym, SecurityType.INDEX, price, TickTimestamp.from_epoch_ns(when)))
    return out


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9), st.integers(0, 500), st.booleans(), st.sampled_from([1, 5, 15]))
def test_engine_matches_oracle_on_random_streams(seed, n, suppress, minutes):
    events = _stream(seed, n)
    expected = oracle_run(events, minutes, suppress)
    got = _run_engine(events, shards=2, window_minutes=minutes, suppress_first_window_advice=suppress)
    assert diff(expected, got) == []
