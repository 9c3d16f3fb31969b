"""Addressing and geometry of the rooted d-ary tree of finite depth.

Vertices are immutable byte strings over the alphabet ``{0, ..., d-1}``;
the root is the empty string.  An edge is addressed by its child vertex,
so ``e[:-1]`` is the parent endpoint and ``e`` itself the child endpoint.
The tree is never materialized: every operation is arithmetic on
addresses, which keeps depth-n trees with billions of vertices usable.
"""

from __future__ import annotations

from dataclasses import dataclass

ROOT: bytes = b""

# All counters must stay inside 64-bit signed range (numpy indexing).
_CAPACITY_LIMIT = 2**62

_DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"


class CapacityError(ValueError):
    """Raised when (d, n) would push vertex/edge counts past 2**62."""


@dataclass(frozen=True)
class TreeShape:
    """Parameters of the depth-n tree with offspring degree d."""

    d: int
    n: int

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ValueError(f"offspring degree must be >= 2, got {self.d}")
        if self.n < 1:
            raise ValueError(f"depth must be >= 1, got {self.n}")
        if self.d > 255:
            raise CapacityError("byte addressing supports degree <= 255")
        if self.d ** (self.n + 1) > _CAPACITY_LIMIT:
            raise CapacityError(
                f"d**(n+1) = {self.d}**{self.n + 1} exceeds the 2**62 counter range"
            )

    @property
    def vertex_count(self) -> int:
        return (self.d ** (self.n + 1) - 1) // (self.d - 1)

    @property
    def edge_count(self) -> int:
        return self.d * (self.d**self.n - 1) // (self.d - 1)

    def level_vertex_count(self, i: int) -> int:
        """Number of vertices at distance i from the root."""
        if not 0 <= i <= self.n:
            raise ValueError(f"level {i} outside [0, {self.n}]")
        return self.d**i

    def level_edge_count(self, i: int) -> int:
        """Number of edges whose parent endpoint sits at level i."""
        if not 0 <= i <= self.n - 1:
            raise ValueError(f"edge level {i} outside [0, {self.n - 1}]")
        return self.d ** (i + 1)


def edge_count(shape: TreeShape) -> int:
    """Total number of edges of the depth-n tree."""
    return shape.edge_count


def level(v: bytes) -> int:
    return len(v)


def parent(v: bytes) -> bytes:
    if not v:
        raise ValueError("the root has no parent")
    return v[:-1]


def child(v: bytes, symbol: int) -> bytes:
    return v + bytes((symbol,))


def children(v: bytes, shape: TreeShape) -> list[bytes]:
    if len(v) >= shape.n:
        return []
    return [v + bytes((i,)) for i in range(shape.d)]


def is_valid_vertex(shape: TreeShape, v: bytes) -> bool:
    return len(v) <= shape.n and all(sym < shape.d for sym in v)


def is_valid_edge(shape: TreeShape, e: bytes) -> bool:
    return 1 <= len(e) <= shape.n and all(sym < shape.d for sym in e)


def edge_level(e: bytes) -> int:
    """Level of the parent endpoint; e belongs to edge layer ``edge_level(e)``."""
    return len(e) - 1


def path_to_root(v: bytes) -> tuple[bytes, ...]:
    """Edges of the path from the root to v, ordered from the root outward."""
    return tuple(v[: k + 1] for k in range(len(v)))


def edge_index(shape: TreeShape, e: bytes) -> int:
    """Bijection from edges to ``range(edge_count)``, level-major order."""
    d = shape.d
    lvl = len(e)  # = edge_level + 1 symbols
    below = d * (d ** (lvl - 1) - 1) // (d - 1)  # edges on shallower layers
    offset = 0
    for sym in e:
        offset = offset * d + sym
    return below + offset


def edge_from_index(shape: TreeShape, idx: int) -> bytes:
    """Inverse of :func:`edge_index`."""
    if not 0 <= idx < shape.edge_count:
        raise ValueError(f"edge index {idx} out of range")
    d = shape.d
    lvl = 1
    layer = d
    rem = idx
    while rem >= layer:
        rem -= layer
        layer *= d
        lvl += 1
    syms = bytearray(lvl)
    for k in range(lvl - 1, -1, -1):
        rem, syms[k] = divmod(rem, d)
    return bytes(syms)


def vertex_to_str(v: bytes, d: int) -> str:
    """Serialize an address as a separator-free digit string; root is 'ε'."""
    if d > len(_DIGITS):
        raise CapacityError("string serialization supports degree <= 36")
    if not v:
        return "ε"
    return "".join(_DIGITS[sym] for sym in v)


def vertex_from_str(s: str, d: int) -> bytes:
    if s == "ε":
        return ROOT
    out = bytes(_DIGITS.index(ch) for ch in s)
    if any(sym >= d for sym in out):
        raise ValueError(f"address {s!r} has symbols outside base {d}")
    return out


def shift_bar(bar, anchor: tuple[bytes, float]):
    """Translate a bar of the descendent tree of ``anchor[0]`` back to the root.

    The edge address drops the anchor prefix and the height is reduced mod 1,
    so shifting by ``(ROOT, 0.0)`` is the identity.
    """
    from stirtree.bars import Bar  # local import, bars depends on tree

    v, h = anchor
    edge, height = bar.edge, bar.height
    if len(edge) <= len(v) or edge[: len(v)] != v:
        raise ValueError(
            f"bar edge {edge!r} is not in the descendent tree of {v!r}"
        )
    return Bar(edge[len(v):], (height - h) % 1.0)


def unshift_bar(bar, anchor: tuple[bytes, float]):
    """Inverse of :func:`shift_bar`: re-anchor a root-relative bar below v."""
    from stirtree.bars import Bar

    v, h = anchor
    return Bar(v + bar.edge, (bar.height + h) % 1.0)
