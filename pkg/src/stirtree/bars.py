"""Bar collections: Poisson sampling, the uniform added bar, and interval sets.

A bar is a point ``(edge, height)`` with height in the unit circle; a
collection stores, per edge, the strictly increasing tuple of heights it
supports.  Heights are kept in the open interval (0, 1) with exact-duplicate
resampling, so joint comparisons in the meander engine can be exact float
equality rather than tolerance-based.
"""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from typing import Iterable, NamedTuple

import numpy as np

from stirtree.tree import (
    TreeShape,
    edge_from_index,
    edge_index,
    is_valid_edge,
    vertex_from_str,
    vertex_to_str,
)


class Bar(NamedTuple):
    edge: bytes
    height: float


def _distinct_heights(rng: np.random.Generator, k: int) -> tuple[float, ...]:
    """k i.i.d. heights, sorted, all distinct and strictly inside (0, 1)."""
    while True:
        hs = rng.random(k)
        if k == 0:
            return ()
        hs.sort()
        if hs[0] > 0.0 and all(hs[i] < hs[i + 1] for i in range(k - 1)):
            return tuple(hs.tolist())
        # exact collision or exact 0.0: astronomically rare, redraw


class _PoleIndexMixin:
    """Lazily built per-pole index of incident joints.

    ``pole(v)`` returns ``(heights, hops)`` where heights is the ascending
    list of joint heights on the pole at v and ``hops[i] = (edge, dest)``
    names the supporting edge and the vertex at the other joint.  Built on
    first visit and cached; collections are immutable afterwards, so sharing
    across concurrent runs is safe once built.
    """

    shape: TreeShape

    def _init_pole_cache(self) -> None:
        self._poles: dict[bytes, tuple[list[float], list[tuple[bytes, bytes]]]] = {}

    def heights_on(self, edge: bytes) -> tuple[float, ...]:  # pragma: no cover
        raise NotImplementedError

    def count_on(self, edge: bytes) -> int:
        return len(self.heights_on(edge))

    def pole(self, v: bytes):
        cached = self._poles.get(v)
        if cached is not None:
            return cached
        entries: list[tuple[float, bytes, bytes]] = []
        if v:
            up = v[:-1]
            for h in self.heights_on(v):
                entries.append((h, v, up))
        if len(v) < self.shape.n:
            for i in range(self.shape.d):
                c = v + bytes((i,))
                for h in self.heights_on(c):
                    entries.append((h, c, c))
        entries.sort()
        built = ([e[0] for e in entries], [(e[1], e[2]) for e in entries])
        self._poles[v] = built
        return built


class BarCollection(_PoleIndexMixin):
    """Immutable, fully materialized bar collection on the depth-n tree."""

    __slots__ = ("shape", "_by_edge", "count", "_poles")

    def __init__(
        self,
        shape: TreeShape,
        by_edge: dict[bytes, tuple[float, ...]],
        validate: bool = True,
    ) -> None:
        self.shape = shape
        self._by_edge = by_edge
        self.count = sum(len(v) for v in by_edge.values())
        self._init_pole_cache()
        if validate:
            self._validate()

    def _validate(self) -> None:
        for e, hs in self._by_edge.items():
            if not is_valid_edge(self.shape, e):
                raise ValueError(f"edge {e!r} not in the depth-{self.shape.n} tree")
            if any(not 0.0 <= h < 1.0 for h in hs):
                raise ValueError(f"height outside [0,1) on edge {e!r}")
            if any(hs[i] >= hs[i + 1] for i in range(len(hs) - 1)):
                raise ValueError(f"heights on edge {e!r} not strictly increasing")

    @classmethod
    def sample_poisson(
        cls, shape: TreeShape, t: float, rng: np.random.Generator
    ) -> "BarCollection":
        """Poisson-t collection: one total count, then multinomial placement."""
        if t < 0:
            raise ValueError("intensity must be nonnegative")
        total = int(rng.poisson(t * shape.edge_count)) if t > 0 else 0
        by_edge: dict[bytes, tuple[float, ...]] = {}
        if total:
            idx = rng.integers(0, shape.edge_count, size=total)
            idx.sort()
            start = 0
            while start < total:
                stop = start + 1
                while stop < total and idx[stop] == idx[start]:
                    stop += 1
                e = edge_from_index(shape, int(idx[start]))
                by_edge[e] = _distinct_heights(rng, stop - start)
                start = stop
        return cls(shape, by_edge, validate=False)

    @classmethod
    def from_bars(cls, shape: TreeShape, bars: Iterable[Bar]) -> "BarCollection":
        by_edge: dict[bytes, list[float]] = {}
        for b in bars:
            by_edge.setdefault(b.edge, []).append(b.height)
        packed = {e: tuple(sorted(hs)) for e, hs in by_edge.items()}
        for e, hs in packed.items():
            if len(set(hs)) != len(hs):
                raise ValueError(f"duplicate heights on edge {e!r}")
        return cls(shape, packed)

    def heights_on(self, edge: bytes) -> tuple[float, ...]:
        return self._by_edge.get(edge, ())

    def edges_with_bars(self) -> Iterable[bytes]:
        return self._by_edge.keys()

    def iter_bars(self) -> Iterable[Bar]:
        """All bars in (edge-index, height) order; a stable serialization order."""
        for e in sorted(self._by_edge, key=lambda e: edge_index(self.shape, e)):
            for h in self._by_edge[e]:
                yield Bar(e, h)

    def with_added(self, bar: Bar) -> "BarCollection":
        """New collection with one extra bar (the two-level coupling B, B∪A)."""
        if not is_valid_edge(self.shape, bar.edge):
            raise ValueError(f"added bar edge {bar.edge!r} outside the tree")
        hs = self._by_edge.get(bar.edge, ())
        if bar.height in hs:
            raise ValueError("added bar coincides with an existing bar")
        pos = bisect_left(hs, bar.height)
        by_edge = dict(self._by_edge)
        by_edge[bar.edge] = hs[:pos] + (bar.height,) + hs[pos:]
        return BarCollection(self.shape, by_edge, validate=False)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BarCollection)
            and self.shape == other.shape
            and self._by_edge == other._by_edge
        )

    def __hash__(self):  # collections are dict values in a few test helpers
        return hash((self.shape, tuple(sorted(self._by_edge.items()))))

    def to_json(self) -> str:
        d = self.shape.d
        rows = [
            {"edge": vertex_to_str(b.edge, d), "h": b.height} for b in self.iter_bars()
        ]
        return json.dumps(
            {"schema": 1, "d": d, "n": self.shape.n, "bars": rows}
        )

    @classmethod
    def from_json(cls, text: str) -> "BarCollection":
        obj = json.loads(text)
        shape = TreeShape(obj["d"], obj["n"])
        bars = [Bar(vertex_from_str(r["edge"], shape.d), r["h"]) for r in obj["bars"]]
        return cls.from_bars(shape, bars)


class LazyPoissonBars(_PoleIndexMixin):
    """Poisson-t collection realized on demand from a counter-based stream.

    Per-edge counts (and then heights) are sampled the first time an edge is
    queried.  Query order is a deterministic function of the realized bars,
    so a fixed (seed, trial) substream reproduces the same collection; the
    joint law over every touched edge is exactly Poisson-t.  Used where
    materializing all of E(T_n) is infeasible.
    """

    __slots__ = ("shape", "t", "_rng", "_counts", "_heights", "_poles")

    def __init__(self, shape: TreeShape, t: float, rng: np.random.Generator) -> None:
        self.shape = shape
        self.t = t
        self._rng = rng
        self._counts: dict[bytes, int] = {}
        self._heights: dict[bytes, tuple[float, ...]] = {}
        self._init_pole_cache()

    def prefill_counts(self, edges: Iterable[bytes], counts: Iterable[int]) -> None:
        """Adopt externally sampled counts (e.g. a batched root layer)."""
        for e, k in zip(edges, counts):
            self._counts[e] = int(k)

    def count_on(self, edge: bytes) -> int:
        k = self._counts.get(edge)
        if k is None:
            k = int(self._rng.poisson(self.t))
            self._counts[edge] = k
        return k

    def heights_on(self, edge: bytes) -> tuple[float, ...]:
        hs = self._heights.get(edge)
        if hs is None:
            hs = _distinct_heights(self._rng, self.count_on(edge))
            self._heights[edge] = hs
        return hs

    def pole(self, v: bytes):
        cached = self._poles.get(v)
        if cached is not None:
            return cached
        # Vector-sample the unknown incident counts in one call; at dilute
        # intensities most of them are zero and no heights are ever drawn.
        unknown = []
        if v and v not in self._counts:
            unknown.append(v)
        if len(v) < self.shape.n:
            for i in range(self.shape.d):
                c = v + bytes((i,))
                if c not in self._counts:
                    unknown.append(c)
        if unknown:
            ks = self._rng.poisson(self.t, size=len(unknown))
            for e, k in zip(unknown, ks):
                self._counts[e] = int(k)
        return _PoleIndexMixin.pole(self, v)


def sample_poisson(
    shape: TreeShape, t: float, stream: np.random.Generator
) -> BarCollection:
    """Module-level alias for :meth:`BarCollection.sample_poisson`."""
    return BarCollection.sample_poisson(shape, t, stream)


def sample_added(shape: TreeShape, stream: np.random.Generator) -> Bar:
    """Uniform bar on E(T_n) x [0,1): uniform edge, independent uniform height."""
    idx = int(stream.integers(0, shape.edge_count))
    h = float(stream.random())
    while h == 0.0:
        h = float(stream.random())
    return Bar(edge_from_index(shape, idx), h)


class LocationSet:
    """Per-edge disjoint unions of half-open height intervals."""

    __slots__ = ("shape", "intervals", "_measure")

    def __init__(
        self,
        shape: TreeShape,
        intervals: dict[bytes, tuple[tuple[float, float], ...]],
        validate: bool = True,
    ) -> None:
        self.shape = shape
        self.intervals = {e: ivs for e, ivs in intervals.items() if ivs}
        self._measure: float | None = None
        if validate:
            self._validate()

    def _validate(self) -> None:
        for e, ivs in self.intervals.items():
            lo_prev = None
            for a, b in ivs:
                if not (0.0 <= a < b <= 1.0):
                    raise ValueError(f"bad interval ({a}, {b}) on edge {e!r}")
                if lo_prev is not None and a < lo_prev:
                    raise ValueError(f"overlapping intervals on edge {e!r}")
                lo_prev = b

    def measure(self) -> float:
        if self._measure is None:
            self._measure = sum(
                b - a for ivs in self.intervals.values() for a, b in ivs
            )
        return self._measure

    def contains(self, edge: bytes, h: float) -> bool:
        ivs = self.intervals.get(edge)
        if not ivs:
            return False
        starts = [a for a, _ in ivs]
        i = bisect_right(starts, h) - 1
        return i >= 0 and h < ivs[i][1]

    def union(self, other: "LocationSet") -> "LocationSet":
        merged: dict[bytes, tuple[tuple[float, float], ...]] = dict(self.intervals)
        for e, ivs in other.intervals.items():
            mine = merged.get(e)
            merged[e] = merge_intervals(list(mine) + list(ivs)) if mine else ivs
        return LocationSet(self.shape, merged, validate=False)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LocationSet)
            and self.shape == other.shape
            and self.intervals == other.intervals
        )


def merge_intervals(ivs: list[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    """Sort half-open intervals and fuse exactly adjacent or overlapping ones."""
    if not ivs:
        return ()
    ivs = sorted(ivs)
    out = [ivs[0]]
    for a, b in ivs[1:]:
        la, lb = out[-1]
        if a <= lb:
            if b > lb:
                out[-1] = (la, b)
        else:
            out.append((a, b))
    return tuple(out)


def measure(s: LocationSet) -> float:
    """Total length of the set; the [0,1) factor carries Lebesgue measure."""
    return s.measure()


def sample_uniform_on(s: LocationSet, stream: np.random.Generator) -> Bar:
    """Bar with normalized-Lebesgue law on the set, via inverse CDF over the
    concatenated intervals (edges in index order, intervals ascending)."""
    total = s.measure()
    if total <= 0.0:
        raise ValueError("cannot sample from a measure-zero location set")
    edges = sorted(s.intervals, key=lambda e: edge_index(s.shape, e))
    u = float(stream.random()) * total
    acc = 0.0
    for e in edges:
        for a, b in s.intervals[e]:
            width = b - a
            if u < acc + width:
                h = a + (u - acc)
                if h >= b:  # float guard at the right endpoint
                    h = b - (b - a) * 1e-16
                return Bar(e, h)
            acc += width
    # u == total up to rounding: return the last point
    e = edges[-1]
    a, b = s.intervals[e][-1]
    return Bar(e, a + (b - a) * 0.5)


def normalized_position(s: LocationSet, bar: Bar) -> float:
    """Position of a bar inside the set's concatenated intervals, in [0, 1).

    Uniform bars on the set map to uniform positions; used to pool
    Kolmogorov-Smirnov comparisons across different conditioning sets.
    """
    total = s.measure()
    acc = 0.0
    for e in sorted(s.intervals, key=lambda e: edge_index(s.shape, e)):
        for a, b in s.intervals[e]:
            if e == bar.edge and a <= bar.height < b:
                return (acc + (bar.height - a)) / total
            acc += b - a
    raise ValueError("bar does not lie inside the location set")
