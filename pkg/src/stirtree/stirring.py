"""Permutation view of the bar collection after unit time.

Two independent routes compute the same permutation: the meander engine run
for unit time from every pole, and a pure-algebra oracle that composes the
bar transpositions in increasing height order.  Their exact agreement on
random instances is the primary correctness check for the engine; the two
paths deliberately share no trajectory code.
"""

from __future__ import annotations

from dataclasses import dataclass

from stirtree.meander import hit_level, stirred_vertex
from stirtree.tree import ROOT, vertex_to_str


class Permutation:
    """Sparse bijection on vertices; identity outside the stored support."""

    __slots__ = ("_map",)

    def __init__(self, mapping: dict[bytes, bytes] | None = None) -> None:
        self._map = {v: w for v, w in (mapping or {}).items() if v != w}
        if len(set(self._map.values())) != len(self._map):
            raise ValueError("mapping is not injective")
        if set(self._map.values()) != set(self._map):
            raise ValueError("support is not closed under the mapping")

    def __call__(self, v: bytes) -> bytes:
        return self._map.get(v, v)

    def support(self) -> frozenset:
        return frozenset(self._map)

    def cycles(self) -> list[tuple[bytes, ...]]:
        """Nontrivial cycles, each starting at its least vertex."""
        seen = set()
        out = []
        for v in sorted(self._map):
            if v in seen:
                continue
            cyc = [v]
            w = self._map[v]
            while w != v:
                seen.add(w)
                cyc.append(w)
                w = self._map[w]
            out.append(tuple(cyc))
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and self._map == other._map

    def __len__(self) -> int:
        return len(self._map)


def transposition_oracle(bars) -> Permutation:
    """Compose the transpositions (parent child) of all bars, lowest first.

    Pure permutation algebra over the height-sorted bar list; the composition
    order matches the meander's single upward sweep of the unit of time.
    """
    items = []
    for e in bars.edges_with_bars():
        for h in bars.heights_on(e):
            items.append((h, e))
    items.sort()
    forward: dict[bytes, bytes] = {}  # current permutation sigma
    inverse: dict[bytes, bytes] = {}
    for _, e in items:
        a, b = e[:-1], e  # parent, child endpoints
        va = inverse.get(a, a)
        vb = inverse.get(b, b)
        forward[va], forward[vb] = b, a
        inverse[a], inverse[b] = vb, va
    return Permutation(forward)


def stirring_permutation(bars) -> Permutation:
    """Unit-time stirring permutation computed through the meander engine.

    Runs the engine from (v, 0) for every vertex incident to a bar;
    untouched vertices are fixed points.  Must equal the oracle exactly.
    """
    support = set()
    for e in bars.edges_with_bars():
        if bars.count_on(e):
            support.add(e)
            support.add(e[:-1])
    mapping = {v: stirred_vertex(bars, v) for v in sorted(support)}
    return Permutation(mapping)


@dataclass(frozen=True)
class CycleReport:
    cycle: tuple[bytes, ...]  # orbit of the root, starting at the root
    length: int
    boundary_truncated: bool  # the meander circuit from the root hits depth n

    def to_json_dict(self, d: int) -> dict:
        return {
            "cycle": [vertex_to_str(v, d) for v in self.cycle],
            "length": self.length,
            "boundary_truncated": self.boundary_truncated,
        }


def cycle_of_root(bars, shape=None) -> CycleReport:
    """Cycle of the root under the stirring permutation.

    ``boundary_truncated`` records whether the meander circuit from the root
    origin reaches the depth-n poles before returning, the finite-tree proxy
    for the root lying on an unbounded cycle.
    """
    sigma = transposition_oracle(bars)
    cyc = [ROOT]
    w = sigma(ROOT)
    while w != ROOT:
        cyc.append(w)
        w = sigma(w)
    truncated = hit_level(bars).reached
    return CycleReport(tuple(cyc), len(cyc), truncated)
