"""RESP2 wire protocol: typed frames, encoder, and an incremental decoder.

Frames are the five RESP2 types. Encoding is bit-exact and round-trips
through the decoder. The decoder is incremental: fed a partial frame it
reports needs-more-data without consuming anything; fed garbage it raises
ProtocolError. Hard limits on line length, bulk length, array length and
nesting depth guarantee that arbitrary input either yields frames or a
protocol error in bounded time and memory.
"""

from __future__ import annotations

from dataclasses import dataclass

CRLF = b"\r\n"

MAX_LINE = 64 * 1024  # type/length/simple lines (matches Redis inline cap)
MAX_BULK = 512 * 1024 * 1024  # proto-max-bulk-len default in Redis
MAX_ARRAY = 1024 * 1024  # multibulk element cap
MAX_DEPTH = 32
INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


class ProtocolError(Exception):
    """Malformed RESP input; the connection should be closed."""


@dataclass(frozen=True)
class SimpleString:
    value: bytes


@dataclass(frozen=True)
class ErrorReply:
    value: bytes


@dataclass(frozen=True)
class Integer:
    value: int


@dataclass(frozen=True)
class BulkString:
    value: bytes | None  # None is the RESP null bulk string


@dataclass(frozen=True)
class Array:
    items: tuple | None  # None is the RESP null array


Frame = SimpleString | ErrorReply | Integer | BulkString | Array

OK = SimpleString(b"OK")
PONG = SimpleString(b"PONG")
QUEUED = SimpleString(b"QUEUED")
NULL_BULK = BulkString(None)
NULL_ARRAY = Array(None)


def encode_frame(frame: Frame) -> bytes:
    """Serialize one frame to RESP2 bytes."""
    if isinstance(frame, SimpleString):
        return b"+%s\r\n" % _line_payload(frame.value)
    if isinstance(frame, ErrorReply):
        return b"-%s\r\n" % _line_payload(frame.value)
    if isinstance(frame, Integer):
        return b":%d\r\n" % frame.value
    if isinstance(frame, BulkString):
        if frame.value is None:
            return b"$-1\r\n"
        return b"$%d\r\n%s\r\n" % (len(frame.value), frame.value)
    if isinstance(frame, Array):
        if frame.items is None:
            return b"*-1\r\n"
        parts = [b"*%d\r\n" % len(frame.items)]
        parts.extend(encode_frame(item) for item in frame.items)
        return b"".join(parts)
    raise TypeError(f"not a RESP frame: {frame!r}")


def _line_payload(value: bytes) -> bytes:
    if b"\r" in value or b"\n" in value:
        raise ProtocolError("CR/LF not allowed in simple string or error payload")
    return value


def encode_command(args) -> bytes:
    """Encode a client command: an array of bulk strings."""
    parts = [b"*%d\r\n" % len(args)]
    for arg in args:
        parts.append(b"$%d\r\n%s\r\n" % (len(arg), arg))
    return b"".join(parts)


class _NeedMore(Exception):
    pass


def decode_frame(data, pos: int = 0) -> tuple[Frame | None, int]:
    """Decode one frame from data[pos:].

    Returns (frame, bytes_consumed), or (None, 0) when the input holds only
    an incomplete frame. Raises ProtocolError on malformed input. Never
    consumes bytes of an incomplete frame.
    """
    view = memoryview(data)
    try:
        frame, end = _decode(view, pos, 0)
    except _NeedMore:
        return None, 0
    return frame, end - pos


def _decode(view: memoryview, pos: int, depth: int):
    if depth > MAX_DEPTH:
        raise ProtocolError("nesting too deep")
    if pos >= len(view):
        raise _NeedMore
    kind = view[pos]
    payload, after = _read_line(view, pos + 1)
    if kind == 0x2B:  # '+'
        return SimpleString(payload), after
    if kind == 0x2D:  # '-'
        return ErrorReply(payload), after
    if kind == 0x3A:  # ':'
        return Integer(_parse_int(payload, INT64_MIN, INT64_MAX)), after
    if kind == 0x24:  # '$'
        length = _parse_int(payload, -1, MAX_BULK)
        if length == -1:
            return NULL_BULK, after
        end = after + length + 2
        if end > len(view):
            raise _NeedMore
        if view[after + length : end] != CRLF:
            raise ProtocolError("bulk string missing CRLF terminator")
        return BulkString(bytes(view[after : after + length])), end
    if kind == 0x2A:  # '*'
        count = _parse_int(payload, -1, MAX_ARRAY)
        if count == -1:
            return NULL_ARRAY, after
        items = []
        for _ in range(count):
            item, after = _decode(view, after, depth + 1)
            items.append(item)
        return Array(tuple(items)), after
    raise ProtocolError(f"unknown type byte {bytes(view[pos:pos + 1])!r}")


def _read_line(view: memoryview, pos: int) -> tuple[bytes, int]:
    limit = min(len(view), pos + MAX_LINE + 2)
    idx = bytes(view[pos:limit]).find(CRLF)
    if idx < 0:
        if limit - pos >= MAX_LINE + 2:
            raise ProtocolError("line exceeds maximum length")
        raise _NeedMore
    return bytes(view[pos : pos + idx]), pos + idx + 2


def _parse_int(payload: bytes, lo: int, hi: int) -> int:
    digits = payload[1:] if payload[:1] == b"-" else payload
    if not digits or not digits.isdigit():
        raise ProtocolError(f"invalid integer {payload!r}")
    value = int(payload)
    if not lo <= value <= hi:
        raise ProtocolError(f"integer {value} out of range [{lo}, {hi}]")
    return value


class StreamDecoder:
    """Incremental frame reader for one connection's byte stream."""

    def __init__(self):
        self._buf = bytearray()
        self._pos = 0

    def feed(self, data: bytes) -> None:
        self._buf += data

    def next_frame(self) -> Frame | None:
        """Pop one complete frame, or None if more bytes are needed."""
        frame, consumed = decode_frame(self._buf, self._pos)
        if frame is None:
            return None
        self._pos += consumed
        if self._pos > 65536:
            del self._buf[: self._pos]
            self._pos = 0
        return frame

    def pending(self) -> int:
        return len(self._buf) - self._pos
