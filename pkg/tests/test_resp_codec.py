import random

import pytest
from hypothesis import given, settings, strategies as st

from collatzbench.resp import (
    Array,
    BulkString,
    ErrorReply,
    Integer,
    MAX_LINE,
    NULL_ARRAY,
    NULL_BULK,
    ProtocolError,
    SimpleString,
    StreamDecoder,
    decode_frame,
    encode_command,
    encode_frame,
)


def test_encode_example_frames():
    assert encode_frame(SimpleString(b"OK")) == b"+OK\r\n"
    assert encode_frame(NULL_BULK) == b"$-1\r\n"
    assert encode_frame(NULL_ARRAY) == b"*-1\r\n"
    assert encode_frame(Integer(1)) == b":1\r\n"
    assert encode_frame(Integer(-42)) == b":-42\r\n"
    assert encode_frame(ErrorReply(b"ERR boom")) == b"-ERR boom\r\n"
    assert encode_frame(BulkString(b"")) == b"$0\r\n\r\n"
    get_longest = Array((BulkString(b"GET"), BulkString(b"longest")))
    assert encode_frame(get_longest) == b"*2\r\n$3\r\nGET\r\n$7\r\nlongest\r\n"
    assert encode_command([b"GET", b"longest"]) == b"*2\r\n$3\r\nGET\r\n$7\r\nlongest\r\n"


def test_decode_example_frames():
    assert decode_frame(b":1\r\n") == (Integer(1), 4)
    assert decode_frame(b"+PONG\r\n") == (SimpleString(b"PONG"), 7)
    assert decode_frame(b"$-1\r\n") == (NULL_BULK, 5)
    frame, used = decode_frame(b"*2\r\n$3\r\nGET\r\n$7\r\nlongest\r\n")
    assert frame == Array((BulkString(b"GET"), BulkString(b"longest")))
    assert used == 26


def test_incomplete_input_consumes_nothing():
    assert decode_frame(b"$5\r\nhel") == (None, 0)
    assert decode_frame(b"$5\r\nhello\r") == (None, 0)
    assert decode_frame(b"*2\r\n$3\r\nGET\r\n") == (None, 0)
    assert decode_frame(b"+pon") == (None, 0)
    assert decode_frame(b"") == (None, 0)


def test_simple_string_rejects_crlf():
    with pytest.raises(ProtocolError):
        encode_frame(SimpleString(b"a\rb"))
    with pytest.raises(ProtocolError):
        encode_frame(ErrorReply(b"a\nb"))


@pytest.mark.parametrize(
    "payload",
    [
        b"?\r\n",  # unknown type byte
        b":\r\n",  # empty integer
        b":12a\r\n",  # trailing garbage
        b":+7\r\n",  # explicit plus sign not accepted
        b"$-2\r\n",  # negative length other than -1
        b"*-2\r\n",
        b"$99999999999999\r\n",  # length overflow
        b":99999999999999999999999999\r\n",  # out of 64-bit range
        b"$3\r\nabcd\r\n",  # bad terminator
        b"*1\r\n" * 64 + b":1\r\n",  # nesting too deep
    ],
)
def test_malformed_input_raises(payload):
    with pytest.raises(ProtocolError):
        decode_frame(payload)


def test_line_length_cap():
    with pytest.raises(ProtocolError):
        decode_frame(b"+" + b"a" * (MAX_LINE + 2))
    # just below the cap with no CRLF yet is merely incomplete
    assert decode_frame(b"+" + b"a" * (MAX_LINE - 1)) == (None, 0)


simple_payload = st.binary(max_size=32).filter(lambda b: b"\r" not in b and b"\n" not in b)

frames = st.recursive(
    st.one_of(
        st.builds(SimpleString, simple_payload),
        st.builds(ErrorReply, simple_payload),
        st.builds(Integer, st.integers(min_value=-(2**63), max_value=2**63 - 1)),
        st.builds(BulkString, st.one_of(st.none(), st.binary(max_size=48))),
    ),
    lambda children: st.one_of(
        st.just(NULL_ARRAY),
        st.builds(lambda items: Array(tuple(items)), st.lists(children, max_size=4)),
    ),
    max_leaves=12,
)


@given(frames)
def test_roundtrip(frame):
    wire = encode_frame(frame)
    assert decode_frame(wire) == (frame, len(wire))


@given(frames, st.integers(min_value=1, max_value=64))
def test_strict_prefixes_are_incomplete(frame, cut):
    wire = encode_frame(frame)
    prefix = wire[: max(0, len(wire) - cut)]
    assert decode_frame(prefix) == (None, 0)


@given(st.lists(frames, min_size=1, max_size=6), st.integers(min_value=1, max_value=7))
def test_stream_decoder_reassembles_chunked_frames(frame_list, chunk):
    wire = b"".join(encode_frame(f) for f in frame_list)
    decoder = StreamDecoder()
    out = []
    for i in range(0, len(wire), chunk):
        decoder.feed(wire[i : i + chunk])
        while True:
            frame = decoder.next_frame()
            if frame is None:
                break
            out.append(frame)
    assert out == frame_list
    assert decoder.pending() == 0


def test_fuzz_smoke_random_bytes_never_hang():
    # the acceptance suite runs the full-size fuzz; this is the quick version
    rng = random.Random(1234)
    corpus = [b"+OK\r\n", b"$5\r\nhello\r\n", b"*2\r\n:1\r\n:2\r\n"]
    for _ in range(20_000):
        if rng.random() < 0.5:
            data = bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 24)))
        else:
            base = bytearray(rng.choice(corpus))
            for _ in range(rng.randrange(1, 4)):
                base[rng.randrange(len(base))] = rng.getrandbits(8)
            data = bytes(base)
        decoder = StreamDecoder()
        decoder.feed(data)
        try:
            for _ in range(64):
                if decoder.next_frame() is None:
                    break
        except ProtocolError:
            pass
