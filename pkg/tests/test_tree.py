"""Tree addressing: counts, paths, the edge-index bijection, and bar shifts."""

import pytest
from hypothesis import given, settings, strategies as st

from stirtree.bars import Bar
from stirtree.tree import (
    ROOT,
    CapacityError,
    TreeShape,
    edge_count,
    edge_from_index,
    edge_index,
    edge_level,
    is_valid_edge,
    level,
    parent,
    path_to_root,
    shift_bar,
    unshift_bar,
    vertex_from_str,
    vertex_to_str,
)


def test_edge_count_examples():
    assert edge_count(TreeShape(2, 1)) == 2
    # closed form d/(d-1)(d^n - 1) at (2, 2)
    assert edge_count(TreeShape(2, 2)) == 6
    # independent oracle: enumerate level sizes d^(i+1)
    assert edge_count(TreeShape(3, 2)) == sum(3 ** (i + 1) for i in range(2)) == 12


def test_vertex_count_and_level_partition():
    for d, n in [(2, 3), (3, 2), (5, 4)]:
        shape = TreeShape(d, n)
        assert shape.vertex_count == (d ** (n + 1) - 1) // (d - 1)
        assert sum(shape.level_vertex_count(i) for i in range(n + 1)) == shape.vertex_count
        assert sum(shape.level_edge_count(i) for i in range(n)) == shape.edge_count


def test_capacity_guard():
    with pytest.raises(CapacityError):
        TreeShape(2, 62)
    with pytest.raises(ValueError):
        TreeShape(1, 3)
    with pytest.raises(ValueError):
        TreeShape(3, 0)
    TreeShape(2, 61)  # largest depth that still fits


def test_path_to_root_examples():
    assert path_to_root(ROOT) == ()
    assert path_to_root(b"\x00") == (b"\x00",)
    assert path_to_root(b"\x00\x01") == (b"\x00", b"\x00\x01")


@given(st.lists(st.integers(0, 2), min_size=0, max_size=6))
@settings(max_examples=100, deadline=None)
def test_path_structure(symbols):
    v = bytes(symbols)
    path = path_to_root(v)
    assert len(path) == level(v)
    for i, e in enumerate(path):
        assert edge_level(e) == i
        assert e[:-1] == (ROOT if i == 0 else path[i - 1])
    if v:
        assert level(parent(v)) == level(v) - 1


@given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 10**6))
@settings(max_examples=200, deadline=None)
def test_edge_index_roundtrip(d, n, raw):
    shape = TreeShape(d, n)
    idx = raw % shape.edge_count
    e = edge_from_index(shape, idx)
    assert is_valid_edge(shape, e)
    assert edge_index(shape, e) == idx


def test_shift_examples():
    b = Bar(b"\x00\x00", 0.3)
    assert shift_bar(b, (ROOT, 0.0)) == b  # identity anchor
    shifted = shift_bar(b, (b"\x00", 0.1))
    assert shifted.edge == b"\x00"
    assert shifted.height == (0.3 - 0.1) % 1.0
    wrapped = shift_bar(Bar(b"\x00\x00", 0.05), (b"\x00", 0.1))
    assert wrapped == Bar(b"\x00", 0.95)  # modular wrap


def test_shift_domain_error():
    with pytest.raises(ValueError):
        shift_bar(Bar(b"\x01\x00", 0.2), (b"\x00", 0.1))
    with pytest.raises(ValueError):
        shift_bar(Bar(b"\x00", 0.2), (b"\x00", 0.1))  # edge is the anchor itself


@given(
    st.lists(st.integers(0, 2), min_size=1, max_size=3),
    st.lists(st.integers(0, 2), min_size=1, max_size=3),
    st.floats(0, 0.999999),
    st.floats(0, 0.999999),
)
@settings(max_examples=150, deadline=None)
def test_shift_unshift_roundtrip(anchor_syms, edge_syms, h_anchor, h_bar):
    anchor = (bytes(anchor_syms), h_anchor)
    bar = Bar(anchor[0] + bytes(edge_syms), h_bar)
    back = unshift_bar(shift_bar(bar, anchor), anchor)
    assert back.edge == bar.edge
    assert abs(back.height - bar.height) < 1e-12 or abs(abs(back.height - bar.height) - 1.0) < 1e-12


def test_vertex_serialization():
    assert vertex_to_str(ROOT, 2) == "ε"
    assert vertex_to_str(b"\x00\x01", 2) == "01"
    assert vertex_from_str("ε", 2) == ROOT
    assert vertex_from_str("01", 2) == b"\x00\x01"
    # degrees above ten use base-36 digits, still separator-free
    assert vertex_to_str(bytes([15, 3]), 16) == "f3"
    assert vertex_from_str("f3", 16) == bytes([15, 3])
    with pytest.raises(ValueError):
        vertex_from_str("3", 2)
