from __future__ import annotations

import socket
import struct

import pytest
from hypothesis import given, settings, strategies as st

from tickcep.harness import Dataset, Harness
from tickcep.wireproto import (
    CREATE,
    END,
    ERRORS,
    NEXT_BATCH,
    RESULT_Q1,
    RESULT_Q2,
    START,
    BadConfig,
    BenchmarkConfig,
    BenchmarkHandle,
    Client,
    ConnectionFailed,
    CrossoverEvent,
    Indicator,
    InternalError,
    LoopbackTransport,
    OutOfOrderCall,
    ProtocolError,
    ProtocolViolation,
    TcpServer,
    TcpTransport,
    UnknownSeqId,
    WireBatch,
    WireEvent,
    WireResultQ1,
    WireResultQ2,
    decode_request,
    decode_response,
    dispatch,
    encode_ack,
    encode_batch,
    encode_create,
    encode_error,
    encode_handle,
    encode_handle_call,
    encode_result_q1,
    encode_result_q2,
    encode_summary,
    frame,
    parse_addr,
    read_frame,
)

_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)
_u64 = st.integers(0, 2**64 - 1)
_handles = st.builds(BenchmarkHandle, _u64, _text)
_events = st.builds(WireEvent, _text, st.sampled_from(["E", "I"]), _text, _u64)
_batches = st.builds(WireBatch, _u64, st.booleans(), st.lists(_events, max_size=20), st.lists(_text, max_size=5))
_floats = st.floats(allow_nan=False)


def _events_fixture(n: int = 25) -> Dataset:
    day0 = 18_939 * 86_400 * 10**9  # 2021-11-08
    return Dataset([
        WireEvent(f"S{i % 4}.FR", "E", f"{1 + i % 5}.5", day0 + 9 * 3600 * 10**9 + i * 120 * 10**9)
        for i in range(n)
    ], seed=0)


@given(_batches)
def test_batch_round_trip(batch):
    assert decode_response(encode_batch(batch)) == batch


@given(_handles)
def test_handle_round_trip(h):
    assert decode_response(encode_handle(h)) == h
    for kind in (START, NEXT_BATCH, END):
        assert decode_request(encode_handle_call(kind, h)) == (kind, h)


@given(_text.filter(bool), _u64, st.integers(1, 2**32 - 1), st.one_of(st.none(), _u64))
def test_create_round_trip(name, seed, size, sub):
    cfg = BenchmarkConfig(name, seed, size, sub)
    assert decode_request(encode_create(cfg)) == (CREATE, cfg)


@given(_handles, _u64, _u64, st.lists(st.builds(Indicator, _text, _floats, _floats), max_size=10))
def test_q1_round_trip(h, bid, seq, inds):
    res = WireResultQ1(bid, seq, inds)
    assert decode_request(encode_result_q1(h, res)) == (RESULT_Q1, (h, res))


@given(_handles, _u64, _u64,
       st.lists(st.builds(CrossoverEvent, _text, st.sampled_from(["BUY", "SELL"]), _u64), max_size=10))
def test_q2_round_trip(h, bid, seq, evs):
    res = WireResultQ2(bid, seq, evs)
    assert decode_request(encode_result_q2(h, res)) == (RESULT_Q2, (h, res))


def test_summary_and_ack_round_trip():
    assert decode_response(encode_ack()) is None
    assert decode_response(encode_summary({"a": [1, 2.5, None]})) == {"a": [1, 2.5, None]}


@pytest.mark.parametrize("cls", sorted(ERRORS.values(), key=lambda c: c.code))
def test_errors_are_raised_by_code(cls):
    with pytest.raises(cls, match="boom"):
        decode_response(encode_error(cls("boom")))


def test_layout_is_little_endian():
    h = BenchmarkHandle(0x0102030405060708, "t")
    assert encode_handle_call(START, h) == bytes([START]) + struct.pack("<Q", h.id) + b"\x01\x00t"
    assert frame(b"\x82") == b"\x01\x00\x00\x00\x82"


@given(_batches, st.data())
def test_truncated_payloads_are_violations(batch, data):
    payload = encode_batch(batch)
    cut = data.draw(st.integers(0, len(payload) - 1))
    with pytest.raises(ProtocolViolation):
        decode_response(payload[:cut])


def test_trailing_bytes_are_violations():
    with pytest.raises(ProtocolViolation):
        decode_response(encode_ack() + b"\x00")
    with pytest.raises(ProtocolViolation):
        decode_request(encode_handle_call(START, BenchmarkHandle(1, "x")) + b"\x00")


def test_unknown_types_are_violations():
    with pytest.raises(ProtocolViolation):
        decode_request(b"\x7f")
    with pytest.raises(ProtocolViolation):
        decode_response(b"\x10")


@settings(max_examples=300)
@given(st.binary(max_size=64))
def test_dispatch_answers_garbage_with_an_error(payload):
    reply = dispatch(Harness(_events_fixture()), payload)
    try:
        decode_response(reply)
    except ProtocolError as exc:
        assert not isinstance(exc, InternalError)


def _client(n_events: int = 25, **kw) -> Client:
    return Client(LoopbackTransport(Harness(_events_fixture(n_events), **kw)))


def test_bad_batch_size():
    with pytest.raises(BadConfig):
        _client().create_benchmark(BenchmarkConfig(batch_size=0))


def test_creates_get_distinct_ids():
    c = _client()
    assert c.create_benchmark(BenchmarkConfig()).id != c.create_benchmark(BenchmarkConfig()).id


def test_result_before_any_batch():
    c = _client()
    h = c.create_benchmark(BenchmarkConfig(batch_size=10))
    c.start_benchmark(h)
    with pytest.raises(UnknownSeqId):
        c.result_q1(h, WireResultQ1(h.id, 0))


def test_next_after_last_batch():
    c = _client(10)
    h = c.create_benchmark(BenchmarkConfig(batch_size=10))
    c.start_benchmark(h)
    b = c.next_batch(h)
    assert b.last
    c.result_q1(h, WireResultQ1(h.id, 0))
    c.result_q2(h, WireResultQ2(h.id, 0))
    with pytest.raises(OutOfOrderCall):
        c.next_batch(h)


def _happy_path(c: Client, batch_size: int) -> dict:
    h = c.create_benchmark(BenchmarkConfig("happy", batch_size=batch_size))
    c.start_benchmark(h)
    seqs = []
    while True:
        b = c.next_batch(h)
        seqs.append(b.seq_id)
        c.result_q1(h, WireResultQ1(h.id, b.seq_id, [Indicator("S0.FR", 1.0, 0.5)]))
        c.result_q2(h, WireResultQ2(h.id, b.seq_id, [CrossoverEvent("S0.FR", "BUY", 1)]))
        if b.last:
            break
    summary = c.end_benchmark(h)
    assert seqs == list(range(len(seqs)))
    return summary


def test_three_batch_session():
    summary = _happy_path(_client(25), 10)
    assert summary["batches"] == 3 and summary["complete"]
    assert summary["q1_latency"]["samples"] == 3 and summary["q2_latency"]["samples"] == 3


@pytest.fixture
def server():
    srv = TcpServer(Harness(_events_fixture()), "127.0.0.1", 0)
    srv.serve_in_thread()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_tcp_session(server):
    host, port = server.server_address[:2]
    c = Client(TcpTransport(f"{host}:{port}"))
    try:
        assert _happy_path(c, 7)["batches"] == 4
    finally:
        c.close()


def test_tcp_oversized_frame_is_rejected(server):
    with socket.create_connection(server.server_address[:2]) as sock:
        sock.sendall(struct.pack("<I", 2**31))
        reply = read_frame(sock)
    with pytest.raises(ProtocolViolation):
        decode_response(reply)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_connection_failure():
    with pytest.raises(ConnectionFailed):
        TcpTransport(f"127.0.0.1:{_free_port()}", timeout=2)


def test_parse_addr(monkeypatch):
    monkeypatch.delenv("TICKCEP_ADDR", raising=False)
    assert parse_addr(None) == ("127.0.0.1", 5023)
    assert parse_addr("example:99") == ("example", 99)
    assert parse_addr(":7") == ("127.0.0.1", 7)
    monkeypatch.setenv("TICKCEP_ADDR", "h:1")
    assert parse_addr(None) == ("h", 1)
