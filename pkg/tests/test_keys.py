import pytest
from hypothesis import given, strategies as st

from collatzbench.keys import (
    Key,
    MAX_SEGMENT_BYTES,
    MAX_VALUE_BYTES,
    as_segment,
    as_value,
    encode_segment,
)


def test_numeric_subscripts_canonicalize():
    assert Key("step", [27]) == Key("step", ["27"]) == Key("step", [b"27"])
    assert Key("step", [27]).subscripts == (b"27",)


def test_varname_must_be_nonempty():
    with pytest.raises(ValueError):
        Key("")
    with pytest.raises(ValueError):
        Key(b"")


def test_segment_type_errors():
    with pytest.raises(TypeError):
        as_segment(3.5)
    with pytest.raises(TypeError):
        as_segment(True)
    with pytest.raises(TypeError):
        as_value(None)


def test_segment_and_value_size_limits():
    as_segment(b"x" * MAX_SEGMENT_BYTES)  # at the limit is fine
    with pytest.raises(ValueError):
        as_segment(b"x" * (MAX_SEGMENT_BYTES + 1))
    with pytest.raises(ValueError):
        as_value(b"x" * (MAX_VALUE_BYTES + 1))


def test_child_appends():
    base = Key("demographics", ["country", "person"])
    assert base.child(21) == Key("demographics", ["country", "person", "21"])
    assert base.depth == 2
    assert base.child(21).depth == 3


def test_key_repr_and_hash():
    k1 = Key("blocks", [3, "taken"])
    k2 = Key("blocks", ["3", b"taken"])
    assert hash(k1) == hash(k2)
    assert "blocks" in repr(k1)


def test_encoding_prefix_property():
    parent = Key("a", ["b"])
    child = parent.child("c")
    other = Key("a", ["bc"])
    assert child.encode().startswith(parent.encode())
    # sibling-ish paths that concatenate to the same bytes must not collide
    assert not other.encode().startswith(parent.encode())
    assert Key("ab").encode() != Key("a", ["b"]).encode()


segments = st.one_of(
    st.integers(min_value=0, max_value=10**12),
    st.binary(min_size=0, max_size=12),
    st.text(max_size=8),
)


@given(st.binary(min_size=1, max_size=12), st.lists(segments, max_size=4))
def test_encoding_is_pure_function_of_key(varname, subs):
    k1 = Key(varname, subs)
    k2 = Key(varname, list(subs))
    assert k1 == k2
    assert k1.encode() == k2.encode()


@given(st.binary(min_size=1, max_size=12), st.lists(segments, min_size=1, max_size=4))
def test_chained_children_equal_direct_construction(varname, subs):
    direct = Key(varname, subs)
    chained = Key(varname)
    for sub in subs:
        chained = chained.child(sub)
    assert chained == direct
    assert chained.encode() == direct.encode()


@given(st.binary(min_size=1, max_size=8), st.binary(min_size=1, max_size=8))
def test_distinct_paths_encode_distinctly(a, b):
    k1 = Key(a, [b])
    k2 = Key(a + b)
    if k1.path != k2.path:
        assert k1.encode() != k2.encode()


def test_encode_segment_roundtrip_structure():
    seg = encode_segment(b"abc")
    assert seg == b"\x03\x00\x00\x00abc"
