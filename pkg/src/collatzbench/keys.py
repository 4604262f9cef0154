"""Hierarchical database keys: a variable name plus an ordered subscript path.

Both backends address nodes through the same Key type. A node handle caches
a contiguous encoded form of its full path (`Key.encode`), built once, so
repeated operations on the same node never re-encode the path. The encoding
is length-prefixed per segment, which makes it injective and gives it the
prefix property: enc(a) is a byte prefix of enc(b) iff a's path is a path
prefix of b's.
"""

from __future__ import annotations

import struct

MAX_SEGMENT_BYTES = 1 << 20  # varname / subscript size cap (1 MiB)
MAX_VALUE_BYTES = 1 << 20  # stored values share the same cap

_LEN = struct.Struct("<I")


def as_segment(sub: int | str | bytes | bytearray) -> bytes:
    """Coerce one varname or subscript to its canonical byte form.

    Integers canonicalize to their shortest decimal spelling, so a subscript
    given numerically compares byte-equal to the same subscript given as
    text. Strings are UTF-8 encoded; bytes pass through.
    """
    if isinstance(sub, bool):
        raise TypeError("boolean is not a valid path segment")
    if isinstance(sub, int):
        raw = b"%d" % sub
    elif isinstance(sub, str):
        raw = sub.encode("utf-8")
    elif isinstance(sub, (bytes, bytearray)):
        raw = bytes(sub)
    else:
        raise TypeError(f"path segment must be int, str or bytes, not {type(sub).__name__}")
    if len(raw) > MAX_SEGMENT_BYTES:
        raise ValueError(f"path segment exceeds {MAX_SEGMENT_BYTES} bytes")
    return raw


def as_value(value: int | str | bytes | bytearray) -> bytes:
    """Coerce a value to bytes with the same rules as segments."""
    if isinstance(value, bool):
        raise TypeError("boolean is not a valid stored value")
    if isinstance(value, int):
        raw = b"%d" % value
    elif isinstance(value, str):
        raw = value.encode("utf-8")
    elif isinstance(value, (bytes, bytearray)):
        raw = bytes(value)
    else:
        raise TypeError(f"value must be int, str or bytes, not {type(value).__name__}")
    if len(raw) > MAX_VALUE_BYTES:
        raise ValueError(f"value exceeds {MAX_VALUE_BYTES} bytes")
    return raw


def encode_segment(seg: bytes) -> bytes:
    return _LEN.pack(len(seg)) + seg


class Key:
    """Immutable (varname, subscripts) node path; equality is byte equality."""

    __slots__ = ("varname", "subscripts", "_hash")

    def __init__(self, varname: int | str | bytes, subscripts=()):
        vn = as_segment(varname)
        if not vn:
            raise ValueError("varname must be non-empty")
        self.varname = vn
        self.subscripts = tuple(as_segment(s) for s in subscripts)
        self._hash = hash((vn,) + self.subscripts)

    @property
    def path(self) -> tuple:
        return (self.varname,) + self.subscripts

    @property
    def depth(self) -> int:
        return len(self.subscripts)

    def child(self, sub) -> "Key":
        return Key(self.varname, self.subscripts + (as_segment(sub),))

    def encode(self) -> bytes:
        """Full path as one contiguous length-prefixed buffer."""
        return b"".join(encode_segment(s) for s in self.path)

    def __eq__(self, other):
        return (
            isinstance(other, Key)
            and self.varname == other.varname
            and self.subscripts == other.subscripts
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        subs = "".join(f"[{s!r}]" for s in self.subscripts)
        return f"Key({self.varname!r}{subs})"
