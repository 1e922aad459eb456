"""Harness <-> solution RPC: messages, binary codec, transports and client.

Every message travels as a frame: ``u32`` little-endian payload length
followed by the payload. The first payload byte is the message type. The
full layout is documented in ``docs/wire.md``; this module is its reference
implementation.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

log = logging.getLogger(__name__)

DEFAULT_PORT = 5023
ADDR_ENV = "TICKCEP_ADDR"
MAX_FRAME = 64 * 1024 * 1024

# request types
CREATE, START, NEXT_BATCH, RESULT_Q1, RESULT_Q2, END = 0x01, 0x02, 0x03, 0x04, 0x05, 0x06
# response types
R_HANDLE, R_ACK, R_BATCH, R_SUMMARY, R_ERROR = 0x81, 0x82, 0x83, 0x84, 0xFF

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")
_BATCH_HEAD = struct.Struct("<QB")
_RESULT_HEAD = struct.Struct("<QQ")
_EMA = struct.Struct("<dd")
_CROSS = struct.Struct("<BQ")
_ERR = struct.Struct("<H")


# errors


class ProtocolError(Exception):
    code = 9

    def __init__(self, message: str = "") -> None:
        super().__init__(message or type(self).__name__)


class OutOfOrderCall(ProtocolError):
    code = 1


class UnknownSeqId(ProtocolError):
    code = 2


class DuplicateResult(ProtocolError):
    code = 3


class SessionTimeout(ProtocolError):
    code = 4


class CapacityExhausted(ProtocolError):
    code = 5


class BadConfig(ProtocolError):
    code = 6


class UnknownBenchmark(ProtocolError):
    code = 7


class ProtocolViolation(ProtocolError):
    """Malformed frame or unexpected message type."""

    code = 8


class InternalError(ProtocolError):
    code = 9


class ConnectionFailed(ConnectionError):
    pass


ERRORS: dict[int, type[ProtocolError]] = {
    cls.code: cls
    for cls in (OutOfOrderCall, UnknownSeqId, DuplicateResult, SessionTimeout,
                CapacityExhausted, BadConfig, UnknownBenchmark, ProtocolViolation,
                InternalError)
}


# messages


@dataclass(frozen=True, slots=True)
class BenchmarkHandle:
    id: int
    token: str


@dataclass(frozen=True, slots=True)
class BenchmarkConfig:
    name: str = "solution"
    dataset_seed: int = 0
    batch_size: int = 1000
    subscription_seed: Optional[int] = None


@dataclass(frozen=True, slots=True)
class WireEvent:
    symbol: str
    sec_type: str  # "E" | "I"
    last_price: str
    trading_ts: int  # epoch ns


@dataclass(slots=True)
class WireBatch:
    seq_id: int
    last: bool
    events: list[WireEvent] = field(default_factory=list)
    lookup_symbols: list[str] = field(default_factory=list)


@dataclass(frozen=True, slots=True)
class Indicator:
    symbol: str
    ema_38: float
    ema_100: float


@dataclass(frozen=True, slots=True)
class CrossoverEvent:
    symbol: str
    kind: str  # "BUY" | "SELL"
    ts: int  # epoch ns of the window close


@dataclass(slots=True)
class WireResultQ1:
    benchmark_id: int
    batch_seq_id: int
    indicators: list[Indicator] = field(default_factory=list)


@dataclass(slots=True)
class WireResultQ2:
    benchmark_id: int
    batch_seq_id: int
    crossover_events: list[CrossoverEvent] = field(default_factory=list)


_KINDS = ("BUY", "SELL")


# codec primitives


class _Writer:
    __slots__ = ("parts",)

    def __init__(self, msg_type: int) -> None:
        self.parts: list[bytes] = [_U8.pack(msg_type)]

    def str(self, s: str) -> None:
        b = s.encode()
        if len(b) > 0xFFFF:
            raise ProtocolViolation("string too long")
        self.parts.append(_U16.pack(len(b)))
        self.parts.append(b)

    def raw(self, st: struct.Struct, *values: Any) -> None:
        self.parts.append(st.pack(*values))

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 1  # skip message type

    def raw(self, st: struct.Struct) -> tuple:
        try:
            values = st.unpack_from(self.buf, self.pos)
        except struct.error:
            raise ProtocolViolation("truncated message") from None
        self.pos += st.size
        return values

    def str(self) -> str:
        (n,) = self.raw(_U16)
        end = self.pos + n
        if end > len(self.buf):
            raise ProtocolViolation("truncated string")
        try:
            s = self.buf[self.pos:end].decode()
        except UnicodeDecodeError:
            raise ProtocolViolation("invalid utf-8") from None
        self.pos = end
        return s

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise ProtocolViolation(f"{len(self.buf) - self.pos} trailing bytes")


def message_type(payload: bytes) -> int:
    if not payload:
        raise ProtocolViolation("empty message")
    return payload[0]


def _put_handle(w: _Writer, h: BenchmarkHandle) -> None:
    w.raw(_U64, h.id)
    w.str(h.token)


def _get_handle(r: _Reader) -> BenchmarkHandle:
    (bid,) = r.raw(_U64)
    return BenchmarkHandle(bid, r.str())


# requests


def encode_create(cfg: BenchmarkConfig) -> bytes:
    w = _Writer(CREATE)
    w.str(cfg.name)
    w.raw(_U64, cfg.dataset_seed)
    w.raw(_U32, cfg.batch_size)
    if cfg.subscription_seed is None:
        w.raw(_U8, 0)
    else:
        w.raw(_U8, 1)
        w.raw(_U64, cfg.subscription_seed)
    return w.bytes()


def encode_handle_call(msg_type: int, h: BenchmarkHandle) -> bytes:
    w = _Writer(msg_type)
    _put_handle(w, h)
    return w.bytes()


def encode_result_q1(h: BenchmarkHandle, res: WireResultQ1) -> bytes:
    w = _Writer(RESULT_Q1)
    _put_handle(w, h)
    w.raw(_RESULT_HEAD, res.benchmark_id, res.batch_seq_id)
    w.raw(_U32, len(res.indicators))
    for ind in res.indicators:
        w.str(ind.symbol)
        w.raw(_EMA, ind.ema_38, ind.ema_100)
    return w.bytes()


def encode_result_q2(h: BenchmarkHandle, res: WireResultQ2) -> bytes:
    w = _Writer(RESULT_Q2)
    _put_handle(w, h)
    w.raw(_RESULT_HEAD, res.benchmark_id, res.batch_seq_id)
    w.raw(_U32, len(res.crossover_events))
    for ev in res.crossover_events:
        w.str(ev.symbol)
        w.raw(_CROSS, _KINDS.index(ev.kind), ev.ts)
    return w.bytes()


def decode_request(payload: bytes) -> tuple[int, Any]:
    """Decode any request into ``(type, args)``; args shape depends on the type."""
    kind = message_type(payload)
    r = _Reader(payload)
    if kind == CREATE:
        name = r.str()
        (seed,) = r.raw(_U64)
        (batch_size,) = r.raw(_U32)
        (has_sub,) = r.raw(_U8)
        sub = r.raw(_U64)[0] if has_sub else None
        args: Any = BenchmarkConfig(name, seed, batch_size, sub)
    elif kind in (START, NEXT_BATCH, END):
        args = _get_handle(r)
    elif kind == RESULT_Q1:
        h = _get_handle(r)
        bid, seq = r.raw(_RESULT_HEAD)
        (n,) = r.raw(_U32)
        inds = []
        for _ in range(n):
            sym = r.str()
            e38, e100 = r.raw(_EMA)
            inds.append(Indicator(sym, e38, e100))
        args = (h, WireResultQ1(bid, seq, inds))
    elif kind == RESULT_Q2:
        h = _get_handle(r)
        bid, seq = r.raw(_RESULT_HEAD)
        (n,) = r.raw(_U32)
        evs = []
        for _ in range(n):
            sym = r.str()
            k, ts = r.raw(_CROSS)
            if k >= len(_KINDS):
                raise ProtocolViolation(f"bad crossover kind {k}")
            evs.append(CrossoverEvent(sym, _KINDS[k], ts))
        args = (h, WireResultQ2(bid, seq, evs))
    else:
        raise ProtocolViolation(f"unknown request type 0x{kind:02x}")
    r.done()
    return kind, args


# responses


def encode_handle(h: BenchmarkHandle) -> bytes:
    w = _Writer(R_HANDLE)
    _put_handle(w, h)
    return w.bytes()


def encode_ack() -> bytes:
    return _U8.pack(R_ACK)


def encode_batch(batch: WireBatch) -> bytes:
    w = _Writer(R_BATCH)
    w.raw(_BATCH_HEAD, batch.seq_id, int(batch.last))
    w.raw(_U32, len(batch.events))
    parts = w.parts
    pack16, pack64 = _U16.pack, _U64.pack
    for ev in batch.events:
        sym = ev.symbol.encode()
        price = ev.last_price.encode()
        sec = ev.sec_type.encode()
        if len(sec) != 1:
            raise ProtocolViolation(f"bad security type {ev.sec_type!r}")
        parts.append(
            pack16(len(sym)) + sym + sec + pack16(len(price)) + price + pack64(ev.trading_ts)
        )
    w.raw(_U32, len(batch.lookup_symbols))
    for s in batch.lookup_symbols:
        w.str(s)
    return w.bytes()


def encode_summary(summary: dict) -> bytes:
    w = _Writer(R_SUMMARY)
    body = json.dumps(summary, sort_keys=True).encode()
    w.raw(_U32, len(body))
    w.parts.append(body)
    return w.bytes()


def encode_error(exc: ProtocolError) -> bytes:
    w = _Writer(R_ERROR)
    w.raw(_ERR, exc.code)
    w.str(str(exc)[:1000])
    return w.bytes()


def decode_response(payload: bytes) -> Any:
    """Decode a response; error responses are raised as their ProtocolError."""
    kind = message_type(payload)
    r = _Reader(payload)
    if kind == R_ERROR:
        (code,) = r.raw(_ERR)
        raise ERRORS.get(code, InternalError)(r.str())
    if kind == R_ACK:
        out: Any = None
    elif kind == R_HANDLE:
        out = _get_handle(r)
    elif kind == R_BATCH:
        seq, last = r.raw(_BATCH_HEAD)
        (n,) = r.raw(_U32)
        events = _decode_events(r, n)
        (m,) = r.raw(_U32)
        lookup = [r.str() for _ in range(m)]
        out = WireBatch(seq, bool(last), events, lookup)
    elif kind == R_SUMMARY:
        (n,) = r.raw(_U32)
        body = r.buf[r.pos:r.pos + n]
        if len(body) != n:
            raise ProtocolViolation("truncated summary")
        r.pos += n
        out = json.loads(body)
    else:
        raise ProtocolViolation(f"unknown response type 0x{kind:02x}")
    r.done()
    return out


def _decode_events(r: _Reader, n: int) -> list[WireEvent]:
    buf, pos, size = r.buf, r.pos, len(r.buf)
    u16, u64 = _U16.unpack_from, _U64.unpack_from
    events = []
    try:
        for _ in range(n):
            (ln,) = u16(buf, pos)
            pos += 2
            sym = buf[pos:pos + ln].decode()
            pos += ln
            sec = chr(buf[pos])
            (lp,) = u16(buf, pos + 1)
            pos += 3
            price = buf[pos:pos + lp].decode()
            pos += lp
            (ts,) = u64(buf, pos)
            pos += 8
            events.append(WireEvent(sym, sec, price, ts))
    except (struct.error, IndexError, UnicodeDecodeError):
        raise ProtocolViolation("truncated or corrupt batch") from None
    if pos > size:
        raise ProtocolViolation("truncated batch")
    r.pos = pos
    return events


# framing


def frame(payload: bytes) -> bytes:
    return _U32.pack(len(payload)) + payload


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Optional[bytes]:
    """Read one frame; ``None`` on clean EOF before the header."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (n,) = _U32.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolViolation(f"frame of {n} bytes exceeds limit")
    body = _recv_exact(sock, n)
    if body is None:
        raise ProtocolViolation("connection closed mid-frame")
    return body


# server side


class Service(Protocol):
    def create_benchmark(self, config: BenchmarkConfig) -> BenchmarkHandle: ...
    def start_benchmark(self, h: BenchmarkHandle) -> None: ...
    def next_batch(self, h: BenchmarkHandle) -> WireBatch: ...
    def result_q1(self, h: BenchmarkHandle, res: WireResultQ1) -> None: ...
    def result_q2(self, h: BenchmarkHandle, res: WireResultQ2) -> None: ...
    def end_benchmark(self, h: BenchmarkHandle) -> dict: ...


def dispatch(service: Service, payload: bytes) -> bytes:
    """Serve one request payload and return the response payload. Never raises."""
    try:
        kind, args = decode_request(payload)
        if kind == CREATE:
            return encode_handle(service.create_benchmark(args))
        if kind == START:
            service.start_benchmark(args)
            return encode_ack()
        if kind == NEXT_BATCH:
            return encode_batch(service.next_batch(args))
        if kind == RESULT_Q1:
            service.result_q1(*args)
            return encode_ack()
        if kind == RESULT_Q2:
            service.result_q2(*args)
            return encode_ack()
        return encode_summary(service.end_benchmark(args))
    except ProtocolError as exc:
        return encode_error(exc)
    except Exception as exc:  # keep the server alive; report as internal error
        log.exception("internal error while serving request")
        return encode_error(InternalError(f"{type(exc).__name__}: {exc}"))


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                payload = read_frame(sock)
            except ProtocolViolation as exc:
                sock.sendall(frame(encode_error(exc)))
                return
            except OSError:
                return
            if payload is None:
                return
            sock.sendall(frame(dispatch(self.server.service, payload)))  # type: ignore[attr-defined]


class TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: Service, host: str = "127.0.0.1", port: int = DEFAULT_PORT) -> None:
        self.service = service
        super().__init__((host, port), _FrameHandler)

    def serve_in_thread(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="tickcep-server", daemon=True)
        t.start()
        return t


# client side


class Transport(Protocol):
    def call(self, payload: bytes) -> bytes: ...
    def close(self) -> None: ...


class LoopbackTransport:
    """In-process transport: requests still go through the binary codec."""

    def __init__(self, service: Service) -> None:
        self.service = service

    def call(self, payload: bytes) -> bytes:
        return dispatch(self.service, payload)

    def close(self) -> None:
        pass


def parse_addr(addr: Optional[str]) -> tuple[str, int]:
    addr = addr or os.environ.get(ADDR_ENV) or f"127.0.0.1:{DEFAULT_PORT}"
    host, sep, port = addr.rpartition(":")
    if not sep:
        return addr, DEFAULT_PORT
    return host or "127.0.0.1", int(port)


class TcpTransport:
    def __init__(self, addr: Optional[str] = None, timeout: float = 30.0) -> None:
        host, port = parse_addr(addr)
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionFailed(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def call(self, payload: bytes) -> bytes:
        try:
            self.sock.sendall(frame(payload))
            reply = read_frame(self.sock)
        except OSError as exc:
            raise ConnectionFailed(str(exc)) from exc
        if reply is None:
            raise ConnectionFailed("server closed the connection")
        return reply

    def close(self) -> None:
        self.sock.close()


class Client:
    """The six benchmark calls over any transport."""

    def __init__(self, transport: Transport) -> None:
        self.transport = transport

    def _call(self, payload: bytes) -> Any:
        return decode_response(self.transport.call(payload))

    def create_benchmark(self, config: BenchmarkConfig) -> BenchmarkHandle:
        return self._call(encode_create(config))

    def start_benchmark(self, h: BenchmarkHandle) -> None:
        self._call(encode_handle_call(START, h))

    def next_batch(self, h: BenchmarkHandle) -> WireBatch:
        return self._call(encode_handle_call(NEXT_BATCH, h))

    def result_q1(self, h: BenchmarkHandle, res: WireResultQ1) -> None:
        self._call(encode_result_q1(h, res))

    def result_q2(self, h: BenchmarkHandle, res: WireResultQ2) -> None:
        self._call(encode_result_q2(h, res))

    def end_benchmark(self, h: BenchmarkHandle) -> dict:
        return self._call(encode_handle_call(END, h))

    def close(self) -> None:
        self.transport.close()
