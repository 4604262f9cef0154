"""Minimal RESP2 server backed by the embedded store's versioned cell map.

Commands cover exactly what the benchmark client needs: string and hash
reads/writes, atomic increments, WATCH/MULTI/EXEC transactions, FLUSHALL
and PING, with Redis-compatible reply types. Scalar keys map to the bare
node (key, []) and hash fields to the one-subscript path (key, [field]) of
the shared cell map, so the data model is the same one the embedded
backend uses; hierarchical locks are deliberately not exposed over the
wire.

Each single command executes atomically under the cell-map mutex. EXEC
validates the connection's watched keys (per-root touch versions) and
applies the whole queue under one mutex hold, so no client ever observes a
partial batch. Writes a connection makes itself refresh its own watch
versions: only another client's change invalidates an EXEC.
"""

from __future__ import annotations

import socket
import threading

from .keys import MAX_SEGMENT_BYTES, MAX_VALUE_BYTES, encode_segment
from .memstore import CellMap
from .resp import (
    Array,
    BulkString,
    ErrorReply,
    Integer,
    NULL_ARRAY,
    OK,
    PONG,
    ProtocolError,
    QUEUED,
    StreamDecoder,
    encode_frame,
)
from .store import StoreError


class _CmdError(Exception):
    def __init__(self, message: str):
        super().__init__(message)
        self.reply = ErrorReply(message.encode())


class _ConnState:
    __slots__ = ("watching", "queue", "dirty")

    def __init__(self):
        self.watching: dict[bytes, int] = {}
        self.queue: list | None = None  # None = not inside MULTI
        self.dirty = False


# command name -> (handler, min_args, max_args or None, writes_keys_at)
# writes_keys_at: arg indexes whose roots a write touches; "*" = all args,
# "!" = every key in the store (FLUSHALL).
_COMMANDS: dict[bytes, tuple] = {}


def _command(name: str, min_args: int, max_args: int | None, writes=()):
    def register(fn):
        _COMMANDS[name.encode()] = (fn, min_args, max_args, writes)
        return fn

    return register


class RespServer:
    """Threaded TCP server; one handler thread per client connection."""

    def __init__(self, cells: CellMap | None = None, host: str = "127.0.0.1", port: int = 6379):
        self.cells = cells if cells is not None else CellMap()
        self._host = host
        self._port = port
        self._listener: socket.socket | None = None
        self._conns: set[socket.socket] = set()
        self._conns_mu = threading.Lock()
        self._stopping = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        if self._listener is None:
            raise RuntimeError("server not started")
        return self._listener.getsockname()[:2]

    def start(self) -> "RespServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, self._port))
        listener.listen(128)
        self._listener = listener
        threading.Thread(target=self._accept_loop, name="resp-accept", daemon=True).start()
        return self

    def close(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._conns_mu:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                conn.close()
            except OSError:
                pass

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, addr = self._listener.accept()
            except OSError:
                return
            with self._conns_mu:
                self._conns.add(conn)
            threading.Thread(
                target=self._serve_conn, args=(conn,), name=f"resp-conn-{addr[1]}", daemon=True
            ).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        state = _ConnState()
        decoder = StreamDecoder()
        try:
            while True:
                data = conn.recv(65536)
                if not data:
                    return
                decoder.feed(data)
                out = []
                while True:
                    frame = decoder.next_frame()
                    if frame is None:
                        break
                    out.append(self._handle_frame(state, frame))
                if out:
                    conn.sendall(b"".join(out))
        except ProtocolError as exc:
            try:
                conn.sendall(encode_frame(ErrorReply(b"ERR protocol error: %s" % str(exc).encode())))
            except OSError:
                pass
        except OSError:
            pass
        finally:
            with self._conns_mu:
                self._conns.discard(conn)
            try:
                conn.close()
            except OSError:
                pass

    # -- dispatch ------------------------------------------------------------

    def _handle_frame(self, state: _ConnState, frame) -> bytes:
        if not isinstance(frame, Array) or frame.items is None or not frame.items:
            raise ProtocolError("expected a non-empty command array")
        args = []
        for item in frame.items:
            if not isinstance(item, BulkString) or item.value is None:
                raise ProtocolError("command arguments must be bulk strings")
            args.append(item.value)
        return encode_frame(self._dispatch(state, args[0].upper(), args[1:]))

    def _dispatch(self, state: _ConnState, name: bytes, args: list):
        if state.queue is not None and name not in (b"MULTI", b"EXEC", b"DISCARD", b"WATCH"):
            spec = _COMMANDS.get(name)
            if spec is None:
                state.dirty = True
                return ErrorReply(b"ERR unknown command '%s'" % name)
            if not _arity_ok(spec, args):
                state.dirty = True
                return _wrong_arity(name)
            state.queue.append((name, args))
            return QUEUED

        if name == b"MULTI":
            if args:
                return _wrong_arity(name)
            if state.queue is not None:
                return ErrorReply(b"ERR MULTI calls can not be nested")
            state.queue = []
            state.dirty = False
            return OK
        if name == b"EXEC":
            if args:
                return _wrong_arity(name)
            return self._exec(state)
        if name == b"DISCARD":
            if args:
                return _wrong_arity(name)
            if state.queue is None:
                return ErrorReply(b"ERR DISCARD without MULTI")
            state.queue = None
            state.dirty = False
            state.watching.clear()
            return OK
        if name == b"WATCH":
            if state.queue is not None:
                return ErrorReply(b"ERR WATCH inside MULTI is not allowed")
            if not args:
                return _wrong_arity(name)
            with self.cells.mu:
                for key in args:
                    state.watching[key] = self.cells.root_version_u(key)
            return OK

        spec = _COMMANDS.get(name)
        if spec is None:
            return ErrorReply(b"ERR unknown command '%s'" % name)
        if not _arity_ok(spec, args):
            return _wrong_arity(name)
        handler, _, _, writes = spec
        with self.cells.mu:
            try:
                reply = handler(self, args)
            except _CmdError as exc:
                return exc.reply
            self._refresh_own_watches(state, writes, args)
        return reply

    def _exec(self, state: _ConnState):
        if state.queue is None:
            return ErrorReply(b"ERR EXEC without MULTI")
        queue, dirty = state.queue, state.dirty
        state.queue = None
        state.dirty = False
        watching, state.watching = state.watching, {}
        if dirty:
            return ErrorReply(b"EXECABORT Transaction discarded because of previous errors.")
        with self.cells.mu:
            for root, version in watching.items():
                if self.cells.root_version_u(root) != version:
                    return NULL_ARRAY
            replies = []
            for name, args in queue:
                handler = _COMMANDS[name][0]
                try:
                    replies.append(handler(self, args))
                except _CmdError as exc:
                    replies.append(exc.reply)
        return Array(tuple(replies))

    def _refresh_own_watches(self, state: _ConnState, writes, args) -> None:
        if not state.watching or writes == ():
            return
        if writes == "!":
            touched = list(state.watching)
        elif writes == "*":
            touched = args
        else:
            touched = [args[i] for i in writes]
        for root in touched:
            if root in state.watching:
                state.watching[root] = self.cells.root_version_u(root)

    # -- command handlers (cell-map mutex held) ------------------------------

    @_command("PING", 0, 1)
    def _cmd_ping(self, args):
        return PONG if not args else BulkString(args[0])

    @_command("GET", 1, 1)
    def _cmd_get(self, args):
        enc, _, _ = _scalar(args[0])
        return BulkString(self.cells.read_u(enc)[0])

    @_command("SET", 2, 2, writes=(0,))
    def _cmd_set(self, args):
        enc, parent, root = _scalar(args[0])
        self.cells.write_u(enc, parent, root, _checked_value(args[1]))
        return OK

    @_command("DEL", 1, None, writes="*")
    def _cmd_del(self, args):
        removed = 0
        for key in args:
            enc, parent, root = _scalar(key)
            removed += 1 if self.cells.remove_subtree_u(enc, parent, root) else 0
        return Integer(removed)

    @_command("INCRBY", 2, 2, writes=(0,))
    def _cmd_incrby(self, args):
        enc, parent, root = _scalar(args[0])
        return Integer(self._incr(enc, parent, root, args[1]))

    @_command("HGET", 2, 2)
    def _cmd_hget(self, args):
        enc, _, _ = _field(args[0], args[1])
        return BulkString(self.cells.read_u(enc)[0])

    @_command("HSET", 3, None, writes=(0,))
    def _cmd_hset(self, args):
        if len(args) % 2 == 0:
            raise _CmdError("ERR wrong number of arguments for 'hset' command")
        added = 0
        for i in range(1, len(args), 2):
            enc, parent, root = _field(args[0], args[i])
            if self.cells.read_u(enc)[0] is None:
                added += 1
            self.cells.write_u(enc, parent, root, _checked_value(args[i + 1]))
        return Integer(added)

    @_command("HDEL", 2, None, writes=(0,))
    def _cmd_hdel(self, args):
        removed = 0
        for field in args[1:]:
            enc, parent, root = _field(args[0], field)
            removed += 1 if self.cells.remove_u(enc, parent, root) else 0
        return Integer(removed)

    @_command("HLEN", 1, 1)
    def _cmd_hlen(self, args):
        enc, _, _ = _scalar(args[0])
        return Integer(self.cells.child_count_u(enc))

    @_command("HINCRBY", 3, 3, writes=(0,))
    def _cmd_hincrby(self, args):
        enc, parent, root = _field(args[0], args[1])
        return Integer(self._incr(enc, parent, root, args[2]))

    @_command("FLUSHALL", 0, 0, writes="!")
    def _cmd_flushall(self, args):
        self.cells.flush_all_u()
        return OK

    def _incr(self, enc: bytes, parent: bytes, root: bytes, raw_delta: bytes) -> int:
        delta = _int_arg(raw_delta)
        try:
            return self.cells.incr_u(enc, parent, root, delta)
        except StoreError:
            raise _CmdError("ERR value is not an integer or out of range") from None


def _arity_ok(spec, args) -> bool:
    _, min_args, max_args, _ = spec
    if len(args) < min_args:
        return False
    return max_args is None or len(args) <= max_args


def _wrong_arity(name: bytes) -> ErrorReply:
    return ErrorReply(b"ERR wrong number of arguments for '%s' command" % name.lower())


def _scalar(key: bytes) -> tuple[bytes, bytes, bytes]:
    _check_segment(key)
    return encode_segment(key), b"", key


def _field(key: bytes, field: bytes) -> tuple[bytes, bytes, bytes]:
    _check_segment(key)
    _check_segment(field)
    parent = encode_segment(key)
    return parent + encode_segment(field), parent, key


def _check_segment(seg: bytes) -> None:
    if not seg:
        raise _CmdError("ERR empty key or field name")
    if len(seg) > MAX_SEGMENT_BYTES:
        raise _CmdError("ERR key or field exceeds maximum size")


def _checked_value(value: bytes) -> bytes:
    if len(value) > MAX_VALUE_BYTES:
        raise _CmdError("ERR value exceeds maximum size")
    return value


def _int_arg(raw: bytes) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise _CmdError("ERR value is not an integer or out of range") from None
    if not -(1 << 63) <= value < (1 << 63):
        raise _CmdError("ERR value is not an integer or out of range")
    return value
