"""Deterministic cyclic-time meander over a bar collection.

The state rises at unit speed on the pole of its current vertex, wraps from
height 1 to 0 on the same pole, and on reaching a bar joint from below jumps
to the joint on the neighbouring pole.  The process is right-continuous:
joint search is strictly-above, so a run that starts exactly on a joint does
not cross it at time zero, and a jump landing never re-triggers its own bar.

Height equals elapsed time modulo one along every trajectory, which gives
two exact bookkeeping rules used throughout:

* elapsed time at an event is ``wraps + (event_height - start_height)``,
  with no accumulated float error;
* the first wrap of a run started at height zero happens at time exactly 1,
  which is how the unit-time stirring map is extracted.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from stirtree.bars import merge_intervals
from stirtree.tree import ROOT

# Test-only fault injection: when True the joint search is inclusive, i.e.
# the right-continuity rule is skipped.  Never enable outside tests.
_joint_search_inclusive = False


class EngineError(RuntimeError):
    """Internal inconsistency: a trajectory revisited a state or broke a bound."""


class SpaceTimePoint(NamedTuple):
    vertex: bytes
    height: float


class Outcome(NamedTuple):
    kind: str  # "hit_level" | "returned" | "hit_point"
    time: float
    point: tuple[bytes, float]


@dataclass(frozen=True)
class StopRule:
    """Stop targets for a run; return-to-start is always implicit."""

    level: Optional[int] = None
    points: frozenset = field(default_factory=frozenset)


@dataclass
class Trajectory:
    start: SpaceTimePoint
    outcome: Outcome
    wraps: int
    # (edge, height, to_child, time) per bar crossing, in order
    crossings: list
    # (vertex, lo, hi) rise segments, in order; hi is exclusive
    segments: list
    _coverage: Optional[dict] = None

    @property
    def elapsed(self) -> float:
        return self.outcome.time

    def coverage(self) -> dict[bytes, tuple[tuple[float, float], ...]]:
        """Per-pole union of visited heights, merged half-open intervals."""
        if self._coverage is None:
            self._coverage = build_coverage(self.segments)
        return self._coverage

    def covers(self, vertex: bytes, h: float) -> bool:
        ivs = self.coverage().get(vertex)
        if not ivs:
            return False
        for a, b in ivs:
            if a <= h < b:
                return True
        return False

    def coverage_until(self, at_time: float) -> dict[bytes, list[tuple[float, float]]]:
        """Coverage restricted to [0, at_time]; slices the final segment."""
        cov: dict[bytes, list[tuple[float, float]]] = {}
        t = 0.0
        for v, lo, hi in self.segments:
            width = hi - lo
            if t + width > at_time:
                part = at_time - t
                if part > 0:
                    cov.setdefault(v, []).append((lo, lo + part))
                break
            cov.setdefault(v, []).append((lo, hi))
            t += width
        return cov

    def vertex_at(self, at_time: float) -> bytes:
        t = 0.0
        for v, lo, hi in self.segments:
            t += hi - lo
            if at_time < t:
                return v
        # at or past the final event: the trajectory sits at the outcome point
        return self.outcome.point[0]

    def to_json_dict(self) -> dict:
        """Debug serialization; not a stable format."""
        from stirtree.tree import vertex_to_str

        return {
            "start": [vertex_to_str(self.start.vertex, 36), self.start.height],
            "outcome": {
                "kind": self.outcome.kind,
                "time": self.outcome.time,
                "vertex": vertex_to_str(self.outcome.point[0], 36),
                "height": self.outcome.point[1],
            },
            "crossings": [
                [vertex_to_str(e, 36), h, down, t] for (e, h, down, t) in self.crossings
            ],
        }


def build_coverage(segments) -> dict[bytes, tuple[tuple[float, float], ...]]:
    per_pole: dict[bytes, list[tuple[float, float]]] = {}
    for v, lo, hi in segments:
        if hi > lo:
            per_pole.setdefault(v, []).append((lo, hi))
    out = {}
    for v, ivs in per_pole.items():
        ivs.sort()
        for i in range(len(ivs) - 1):
            if ivs[i + 1][0] < ivs[i][1]:
                raise EngineError(f"overlapping coverage on pole {v!r}")
        out[v] = merge_intervals(ivs)
    return out


class HitResult(NamedTuple):
    reached: bool
    time: Optional[float]
    trajectory: Trajectory


class ReturnResult(NamedTuple):
    time: Optional[float]  # absent when the depth-n poles were hit first
    truncated: bool
    trajectory: Trajectory


def run(
    bars,
    start: SpaceTimePoint,
    stop: StopRule,
    record: bool = True,
    _stop_first_wrap: bool = False,
) -> Trajectory:
    """Simulate from ``start`` until a stop target or the return to start.

    Engine invariants enforced on every run: no state is ever visited twice
    (each bar is crossed at most twice, each pole covered at most once), and
    for materialized collections the crossing count stays within twice the
    bar count and the wrap count within the vertex count.
    """
    shape = bars.shape
    v0, h0 = start
    if not 0.0 <= h0 < 1.0:
        raise ValueError(f"start height {h0} outside [0,1)")
    if stop.level is not None and len(v0) >= stop.level:
        raise ValueError("run started at or beyond the stop level")

    search = bisect_left if _joint_search_inclusive else bisect_right
    points = stop.points
    stop_level = stop.level
    max_cross = 2 * bars.count if isinstance(getattr(bars, "count", None), int) else None
    max_wraps = shape.vertex_count

    v, h = v0, h0
    heights, hops = bars.pole(v)
    wraps = 0
    ncross = 0
    seen: set = set()
    segments: list = [] if record else None
    crossings: list = [] if record else None

    while True:
        i = search(heights, h)
        boundary = heights[i] if i < len(heights) else 1.0

        # Triggers strictly inside the rise (h, boundary): the start point
        # or an explicit stop point lying on this pole.
        trig_h = None
        trig_kind = None
        trig_pt = None
        if v == v0 and h < h0 < boundary:
            trig_h, trig_kind, trig_pt = h0, "returned", (v0, h0)
        for pv, ph in points:
            if pv == v and h < ph < boundary and (trig_h is None or ph < trig_h):
                trig_h, trig_kind, trig_pt = ph, "hit_point", (pv, ph)
        if trig_h is not None:
            if record:
                segments.append((v, h, trig_h))
            outcome = Outcome(trig_kind, wraps + (trig_h - h0), trig_pt)
            break

        if i < len(heights):  # cross the bar at height `boundary`
            edge_k, w = hops[i]
            hb = boundary
            t_ev = wraps + (hb - h0)
            if record:
                segments.append((v, h, hb))
                crossings.append((edge_k, hb, w == edge_k, t_ev))
            ncross += 1
            if max_cross is not None and ncross > max_cross:
                raise EngineError("crossing count exceeded twice the bar count")
            state = (w, hb)
            if w == v0 and hb == h0:
                outcome = Outcome("returned", t_ev, (v0, h0))
                break
            if state in points:
                outcome = Outcome("hit_point", t_ev, state)
                break
            if stop_level is not None and len(w) == stop_level:
                outcome = Outcome("hit_level", t_ev, state)
                break
            if state in seen:
                raise EngineError(f"trajectory revisited state {state!r}")
            seen.add(state)
            v, h = w, hb
            heights, hops = bars.pole(v)
        else:  # wrap 1 -> 0 on the current pole
            if record:
                segments.append((v, h, 1.0))
            wraps += 1
            if wraps > max_wraps:
                raise EngineError("wrap count exceeded the vertex count")
            if _stop_first_wrap:
                outcome = Outcome("hit_point", float(wraps), (v, 0.0))
                break
            state = (v, 0.0)
            if v == v0 and h0 == 0.0:
                outcome = Outcome("returned", float(wraps), (v0, 0.0))
                break
            if state in points:
                outcome = Outcome("hit_point", wraps - h0, state)
                break
            if state in seen:
                raise EngineError(f"trajectory revisited state {state!r}")
            seen.add(state)
            h = 0.0

    return Trajectory(
        start=SpaceTimePoint(v0, h0),
        outcome=outcome,
        wraps=wraps,
        crossings=crossings if record else [],
        segments=segments if record else [],
    )


def hit_level(bars, record: bool = False) -> HitResult:
    """Whether the meander from the root origin reaches the depth-n poles.

    The run ends either at the first depth-n pole or back at the root
    origin; on the finite tree this dichotomy is exhaustive, and a return
    decides non-reaching exactly (the continuation is periodic).
    """
    n = bars.shape.n
    traj = run(bars, SpaceTimePoint(ROOT, 0.0), StopRule(level=n), record=record)
    kind = traj.outcome.kind
    if kind == "hit_level":
        return HitResult(True, traj.outcome.time, traj)
    if kind == "returned":
        return HitResult(False, None, traj)
    raise EngineError(f"hit_level run ended with unexpected outcome {kind!r}")


def stirred_vertex(bars, v: bytes) -> bytes:
    """Vertex occupied after running the meander from (v, 0) for time one.

    Height equals elapsed time mod 1, so time one is exactly the first wrap;
    no stopwatch arithmetic is involved.
    """
    traj = run(
        bars, SpaceTimePoint(v, 0.0), StopRule(), record=False, _stop_first_wrap=True
    )
    if traj.outcome.time != 1.0:
        raise EngineError("first wrap did not occur at unit time")
    return traj.outcome.point[0]


def return_time(bars, start: SpaceTimePoint, record: bool = False) -> ReturnResult:
    """Time of first return to ``start``, censored by the depth-n poles."""
    traj = run(bars, start, StopRule(level=bars.shape.n), record=record)
    if traj.outcome.kind == "returned":
        return ReturnResult(traj.outcome.time, False, traj)
    return ReturnResult(None, True, traj)
