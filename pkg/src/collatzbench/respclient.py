"""RESP2 TCP client implementing the backend-neutral store contract.

One connection belongs to one worker context; requests are strictly
sequential (no pipelining), matching how the benchmark issues calls. Node
handles cache their path pre-encoded as RESP bulk-string fragments, so a
command splices cached buffers instead of re-encoding key and field on
every call.

The store mapping: a bare node (k, []) is the string key k (GET/SET/
INCRBY/DEL), a one-subscript node (k, [f]) is field f of hash k (HGET/
HSET/HINCRBY/HDEL), and subtree_size of a bare node is HLEN. Deeper paths
have no wire mapping and raise.

transaction(body) is the optimistic WATCH/MULTI/EXEC retry loop: while the
body runs, the first read of each key WATCHes it before GETting, and
writes are buffered client-side (reads see them back); when the body
returns, the buffered writes are queued inside MULTI..EXEC. A null EXEC
reply means a watched key changed, and the body re-runs from scratch.
"""

from __future__ import annotations

import random
import socket
import time

from .keys import Key, as_value
from .resp import (
    BulkString,
    ErrorReply,
    Integer,
    NULL_ARRAY,
    SimpleString,
    StreamDecoder,
    encode_command,
)
from .store import Node, ReplyError, StoreError, TxnRetryError, parse_int

DEFAULT_TXN_RETRY_LIMIT = 10_000
_EAGER_RETRIES = 4


def _bulk(arg: bytes) -> bytes:
    return b"$%d\r\n%s\r\n" % (len(arg), arg)


class RespNode(Node):
    """Node handle bound to a client connection.

    `wire` caches the bulk-encoded path segments (for a bare node the key
    bulk, for depth 1 the key and field bulks); commands concatenate the
    cached buffer with a constant header instead of re-encoding.
    """

    __slots__ = ("client", "wire")

    def __init__(self, client: "RespClient", key: Key):
        super().__init__(key)
        self.client = client
        self.wire = b"".join(_bulk(seg) for seg in key.path)

    def _derive(self, key, parent_encoded, encoded):
        node = RespNode.__new__(RespNode)
        node.key = key
        node.parent_encoded = parent_encoded
        node.encoded = encoded
        node.client = self.client
        node.wire = self.wire + _bulk(key.subscripts[-1])
        return node

    def _depth(self) -> int:
        depth = self.key.depth
        if depth > 1:
            raise StoreError(
                f"the wire backend has no mapping for {depth}-subscript paths: {self.key!r}"
            )
        return depth

    def get(self, default: bytes | None = None) -> bytes | None:
        verb = b"*2\r\n$3\r\nGET\r\n" if self._depth() == 0 else b"*3\r\n$4\r\nHGET\r\n"
        value = self.client._node_get(self, verb)
        return default if value is None else value

    def set(self, value) -> None:
        value = as_value(value)
        if self._depth() == 0:
            self.client._node_set(self, b"*3\r\n$3\r\nSET\r\n", value)
        else:
            self.client._node_set(self, b"*4\r\n$4\r\nHSET\r\n", value)

    def incr(self, delta: int = 1) -> int:
        if self._depth() == 0:
            return self.client._node_incr(self, b"INCRBY", delta)
        return self.client._node_incr(self, b"HINCRBY", delta)

    def delete_tree(self) -> None:
        self.client._no_txn("delete_tree")
        if self._depth() == 0:
            self.client.call_wire(b"*2\r\n$3\r\nDEL\r\n" + self.wire)
        else:
            self.client.call_wire(b"*3\r\n$4\r\nHDEL\r\n" + self.wire)

    def set_tree(self, entries) -> None:
        self.client._no_txn("set_tree")
        if self._depth() != 0:
            raise StoreError("set_tree is only mapped for bare nodes on the wire backend")
        if not entries:
            return
        args = [b"HSET", self.key.varname]
        for sub, value in entries.items():
            args.append(Key(self.key.varname, (sub,)).subscripts[0])
            args.append(as_value(value))
        self.client.call(*args)

    def subtree_size(self) -> int:
        self.client._no_txn("subtree_size")
        if self._depth() != 0:
            raise StoreError("subtree_size is only mapped for bare nodes on the wire backend")
        reply = self.client.call_wire(b"*2\r\n$4\r\nHLEN\r\n" + self.wire)
        return self.client._expect_integer(reply)


class _TxnBuffer:
    __slots__ = ("watched", "reads", "values", "ops")

    def __init__(self):
        self.watched: set[bytes] = set()
        self.reads: dict[bytes, bytes | None] = {}
        self.values: dict[bytes, bytes | None] = {}  # encoded path -> buffered write
        self.ops: list[bytes] = []  # wire-format commands to queue at commit


class RespClient:
    """Client-side store backend over one RESP2 connection."""

    hierarchical = False

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 6379,
        connect_timeout: float | None = 10.0,
        txn_retry_limit: int = DEFAULT_TXN_RETRY_LIMIT,
    ):
        self.txn_retry_limit = txn_retry_limit
        self.txn_retry_hook = None
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._decoder = StreamDecoder()
        self._in_multi = False
        self._txn: _TxnBuffer | None = None

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def node(self, varname, *subscripts) -> RespNode:
        return RespNode(self, Key(varname, subscripts))

    # -- wire primitives -----------------------------------------------------

    def call(self, *args) -> object:
        """Send one command (list of byte strings) and return its reply frame."""
        wire = encode_command([arg if isinstance(arg, bytes) else as_value(arg) for arg in args])
        return self.call_wire(wire)

    def call_wire(self, wire: bytes) -> object:
        self._sock.sendall(wire)
        return self._read_reply()

    def _read_reply(self) -> object:
        while True:
            frame = self._decoder.next_frame()
            if frame is not None:
                if isinstance(frame, ErrorReply):
                    raise ReplyError(frame.value.decode(errors="replace"))
                return frame
            data = self._sock.recv(65536)
            if not data:
                raise StoreError("connection closed by server")
            self._decoder.feed(data)

    def _expect_integer(self, reply) -> int:
        if not isinstance(reply, Integer):
            raise StoreError(f"expected integer reply, got {reply!r}")
        return reply.value

    # -- node operation plumbing ----------------------------------------------

    def _node_get(self, node: RespNode, verb: bytes) -> bytes | None:
        txn = self._txn
        if txn is not None:
            if node.encoded in txn.values:
                return txn.values[node.encoded]
            if node.encoded in txn.reads:
                return txn.reads[node.encoded]
            self._watch_for_txn(txn, node)
            value = self._fetch(verb + node.wire)
            txn.reads[node.encoded] = value
            return value
        if self._in_multi:
            raise StoreError("cannot read inside MULTI: reads are not queueable")
        return self._fetch(verb + node.wire)

    def _fetch(self, wire: bytes) -> bytes | None:
        reply = self.call_wire(wire)
        if isinstance(reply, BulkString):
            return reply.value
        raise StoreError(f"expected bulk string reply, got {reply!r}")

    def _node_set(self, node: RespNode, header: bytes, value: bytes) -> None:
        txn = self._txn
        if txn is not None:
            txn.values[node.encoded] = value
            txn.ops.append(header + node.wire + _bulk(value))
            return
        reply = self.call_wire(header + node.wire + _bulk(value))
        if not isinstance(reply, (SimpleString, Integer)):
            raise StoreError(f"unexpected reply to write: {reply!r}")

    def _node_incr(self, node: RespNode, verb: bytes, delta: int) -> int:
        txn = self._txn
        if txn is not None:
            current = self._node_get(node, b"*2\r\n$3\r\nGET\r\n" if node.key.depth == 0 else b"*3\r\n$4\r\nHGET\r\n")
            new = delta if current is None else parse_int(current) + delta
            value = b"%d" % new
            txn.values[node.encoded] = value
            header = b"*3\r\n$3\r\nSET\r\n" if node.key.depth == 0 else b"*4\r\n$4\r\nHSET\r\n"
            txn.ops.append(header + node.wire + _bulk(value))
            return new
        reply = self.call(verb, *node.key.path, b"%d" % delta)
        return self._expect_integer(reply)

    def _watch_for_txn(self, txn: _TxnBuffer, node: RespNode) -> None:
        root = node.key.varname
        if root not in txn.watched:
            self.call(b"WATCH", root)
            txn.watched.add(root)

    def _no_txn(self, opname: str) -> None:
        if self._txn is not None:
            raise StoreError(f"{opname} is not supported inside a transaction")

    # -- WATCH / MULTI / EXEC ---------------------------------------------------

    def watch(self, *keys) -> None:
        """WATCH the given keys (byte strings or nodes' varnames)."""
        args = [k if isinstance(k, bytes) else as_value(k) for k in keys]
        self.call(b"WATCH", *args)

    def multi(self) -> None:
        self.call(b"MULTI")
        self._in_multi = True

    def exec(self) -> bool:
        """EXEC the queued commands; True iff the transaction committed."""
        try:
            reply = self.call(b"EXEC")
        finally:
            self._in_multi = False
        return reply != NULL_ARRAY

    def discard(self) -> None:
        try:
            self.call(b"DISCARD")
        finally:
            self._in_multi = False

    # -- optimistic transaction loop ---------------------------------------------

    def transaction(self, body, retry_limit: int | None = None):
        """Run `body(store)` atomically via the WATCH/MULTI/EXEC retry loop.

        The body must be restartable; it re-runs whenever a watched key was
        changed by another client between its first read and EXEC.
        """
        if self._txn is not None:
            return body(self)  # nested: flatten into the enclosing transaction
        limit = self.txn_retry_limit if retry_limit is None else retry_limit
        for attempt in range(1, limit + 1):
            txn = _TxnBuffer()
            self._txn = txn
            try:
                result = body(self)
            except BaseException:
                self._txn = None
                try:
                    if txn.watched:
                        self.multi()
                        self.discard()  # DISCARD also unwatches
                except (StoreError, OSError):
                    pass  # do not mask the body's error
                raise
            self._txn = None
            self.multi()
            for op in txn.ops:
                reply = self.call_wire(op)
                if not (isinstance(reply, SimpleString) and reply.value == b"QUEUED"):
                    raise StoreError(f"expected QUEUED, got {reply!r}")
            if self.exec():
                return result
            if self.txn_retry_hook is not None:
                self.txn_retry_hook(attempt)
            if attempt > _EAGER_RETRIES:
                time.sleep(random.uniform(0, 0.001))
        raise TxnRetryError(limit)
