"""Monte Carlo estimators: boundary-hit probability, the derivative identity,
viable-location mass, cluster and level-visit tails, and the branching bound.

Every estimator is a pure function of its parameters and a seed.  Trials are
grouped into fixed-size batches with counter-based substreams, so results
are bit-identical for any worker count; failing checks can always be
replayed from (seed, trial).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from stirtree.bars import Bar, BarCollection, LazyPoissonBars
from stirtree.events import multibar_cluster, root_trajectory, viable_locations
from stirtree.meander import EngineError, hit_level
from stirtree.rng import batch_ranges, substream
from stirtree.tree import TreeShape, edge_from_index

# Above these sizes collections are realized lazily, edge by edge.
_MATERIALIZE_EDGE_LIMIT = 20_000
_MATERIALIZE_MEAN_BARS = 64.0


@dataclass(frozen=True)
class Estimate:
    label: str
    mean: float
    stderr: float
    trials: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "label": self.label,
            "mean": self.mean,
            "stderr": self.stderr,
            "trials": self.trials,
            "seed": self.seed,
        }


def _bernoulli(label: str, successes: int, trials: int, seed: int) -> Estimate:
    p = successes / trials
    return Estimate(label, p, math.sqrt(p * (1.0 - p) / trials), trials, seed)


@lru_cache(maxsize=16)
def _edge_addresses(shape: TreeShape) -> list[bytes]:
    return [edge_from_index(shape, i) for i in range(shape.edge_count)]


class _RedrawTrial(Exception):
    """Exact duplicate or exact-zero height in a batched draw (measure zero)."""


def _collection_from_slices(shape, addresses, eidx, heights) -> BarCollection:
    by_edge: dict[bytes, tuple[float, ...]] = {}
    order = np.argsort(eidx, kind="stable")
    k = len(order)
    pos = 0
    while pos < k:
        stop = pos + 1
        ei = eidx[order[pos]]
        while stop < k and eidx[order[stop]] == ei:
            stop += 1
        hs = sorted(float(heights[order[j]]) for j in range(pos, stop))
        if hs[0] <= 0.0 or any(hs[i] >= hs[i + 1] for i in range(len(hs) - 1)):
            raise _RedrawTrial
        by_edge[addresses[ei]] = tuple(hs)
        pos = stop
    return BarCollection(shape, by_edge, validate=False)


def _use_lazy(shape: TreeShape, t: float) -> bool:
    return (
        shape.edge_count > _MATERIALIZE_EDGE_LIMIT
        or t * shape.edge_count > _MATERIALIZE_MEAN_BARS
    )


def _map_batches(fn, jobs: list, workers: int) -> list:
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# --- boundary-hit probability ------------------------------------------------


def _pn_batch(job) -> int:
    shape, t, seed, b, lo, hi = job
    m = hi - lo
    hits = 0
    if _use_lazy(shape, t):
        for i in range(m):
            gen = substream(seed, "pn", shape.d, shape.n, t, lo + i)
            if hit_level(LazyPoissonBars(shape, t, gen)).reached:
                hits += 1
        return hits
    addresses = _edge_addresses(shape)
    gen = substream(seed, "pn", shape.d, shape.n, t, "batch", b)
    counts = gen.poisson(t * shape.edge_count, size=m)
    total = int(counts.sum())
    eidx = gen.integers(0, shape.edge_count, size=total)
    heights = gen.random(total)
    pos = 0
    for i in range(m):
        k = int(counts[i])
        try:
            bars = _collection_from_slices(
                shape, addresses, eidx[pos : pos + k], heights[pos : pos + k]
            )
        except _RedrawTrial:
            bars = BarCollection.sample_poisson(shape, t, gen)
        pos += k
        if hit_level(bars).reached:
            hits += 1
    return hits


def estimate_pn(
    shape: TreeShape, t: float, trials: int, seed: int, workers: int = 1
) -> Estimate:
    """Probability that the meander from the root origin reaches depth n."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if t == 0.0:
        return Estimate(f"pn(d={shape.d},n={shape.n},t=0)", 0.0, 0.0, trials, seed)
    jobs = [(shape, t, seed, b, lo, hi) for b, lo, hi in batch_ranges(trials)]
    hits = sum(_map_batches(_pn_batch, jobs, workers))
    return _bernoulli(f"pn(d={shape.d},n={shape.n},t={t})", hits, trials, seed)


# --- derivative identity ------------------------------------------------------


@dataclass(frozen=True)
class RussoCheck:
    lhs: Estimate  # |E(T_n)| * (P(on-pivotal) - P(off-pivotal))
    rhs: Estimate  # central finite difference of the hit probability
    zscore: float
    bias_allowance: float
    p_on: float
    p_off: float
    pn_center: Estimate
    pn_plus: Estimate
    pn_minus: Estimate


def _pair_batch(job) -> tuple[int, int]:
    """One batch of joint (B, B with added bar) trials; returns (on, off)."""
    shape, t, seed, b, lo, hi = job
    m = hi - lo
    addresses = _edge_addresses(shape)
    ecount = shape.edge_count
    gen = substream(seed, "russo-pairs", shape.d, shape.n, t, b)
    counts = gen.poisson(t * ecount, size=m)
    total = int(counts.sum())
    eidx = gen.integers(0, ecount, size=total)
    heights = gen.random(total)
    a_idx = gen.integers(0, ecount, size=m)
    a_h = gen.random(m)
    on = off = 0
    pos = 0
    for i in range(m):
        k = int(counts[i])
        try:
            bars = _collection_from_slices(
                shape, addresses, eidx[pos : pos + k], heights[pos : pos + k]
            )
        except _RedrawTrial:
            bars = BarCollection.sample_poisson(shape, t, gen)
        pos += k
        edge = addresses[int(a_idx[i])]
        h = float(a_h[i])
        while h == 0.0 or h in bars.heights_on(edge):
            h = float(gen.random())
        reached = hit_level(bars).reached
        reached_added = hit_level(bars.with_added(Bar(edge, h))).reached
        if reached_added and not reached:
            on += 1
        elif reached and not reached_added:
            off += 1
    return on, off


def russo_check(
    shape: TreeShape,
    t: float,
    fd_step: float,
    trials: int,
    seed: int,
    workers: int = 1,
) -> RussoCheck:
    """Compare the pivotal-difference form of dp_n/dt with a finite difference.

    The bias allowance follows the three-point rule: the second difference
    p(t+h) - 2 p(t) + p(t-h) estimates h^2 p'', and its magnitude is charged
    as the systematic error of the central difference.  The z-score combines
    it in quadrature with both Monte Carlo standard errors.
    """
    if not 0.0 < fd_step < t:
        raise ValueError("fd_step must lie in (0, t)")
    jobs = [(shape, t, seed, b, lo, hi) for b, lo, hi in batch_ranges(trials)]
    results = _map_batches(_pair_batch, jobs, workers)
    on = sum(r[0] for r in results)
    off = sum(r[1] for r in results)
    p_on = on / trials
    p_off = off / trials
    ecount = shape.edge_count
    diff = p_on - p_off
    lhs_mean = ecount * diff
    lhs_se = ecount * math.sqrt(max(p_on + p_off - diff * diff, 0.0) / trials)
    lhs = Estimate(f"russo-lhs(t={t})", lhs_mean, lhs_se, trials, seed)

    pn_plus = estimate_pn(shape, t + fd_step, trials, seed, workers)
    pn_minus = estimate_pn(shape, t - fd_step, trials, seed, workers)
    pn_center = estimate_pn(shape, t, trials, seed, workers)
    rhs_mean = (pn_plus.mean - pn_minus.mean) / (2.0 * fd_step)
    rhs_se = math.hypot(pn_plus.stderr, pn_minus.stderr) / (2.0 * fd_step)
    rhs = Estimate(f"russo-rhs(t={t},h={fd_step})", rhs_mean, rhs_se, trials, seed)

    bias = abs(pn_plus.mean - 2.0 * pn_center.mean + pn_minus.mean)
    denom = math.sqrt(lhs_se**2 + rhs_se**2 + bias**2)
    z = (lhs_mean - rhs_mean) / denom if denom > 0 else 0.0
    return RussoCheck(lhs, rhs, z, bias, p_on, p_off, pn_center, pn_plus, pn_minus)


# --- viable-location mass -----------------------------------------------------


def _z_batch(job) -> tuple[float, float, int]:
    shape, t, seed, lo, hi = job
    s = s2 = 0.0
    for i in range(lo, hi):
        gen = substream(seed, "z", shape.d, shape.n, t, i)
        bars = LazyPoissonBars(shape, t, gen)
        traj = root_trajectory(bars)
        m = viable_locations(bars, traj).measure()
        s += m
        s2 += m * m
    return s, s2, hi - lo


def z_estimate(
    shape: TreeShape, t: float, trials: int, seed: int, workers: int = 1
) -> Estimate:
    """Mean Lebesgue mass of the viable-location set under Poisson-t bars."""
    jobs = [(shape, t, seed, lo, hi) for _b, lo, hi in batch_ranges(trials)]
    parts = _map_batches(_z_batch, jobs, workers)
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s / trials
    var = max(s2 / trials - mean * mean, 0.0)
    return Estimate(
        f"z(d={shape.d},n={shape.n},t={t})",
        mean,
        math.sqrt(var / trials),
        trials,
        seed,
    )


def z_bracket(d: int, tau: float) -> tuple[float, float]:
    """Analytic bracket for the viable-location mass, valid for d >= 15 tau^2."""
    return d * math.exp(-tau), 1.2 * d


# --- tail checks ----------------------------------------------------------------


@dataclass(frozen=True)
class TailRow:
    label: str
    threshold: int
    empirical: float
    stderr: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class TailReport:
    cluster_rows: tuple
    level_rows: tuple
    cluster_skipped: Optional[str]
    notes: tuple = ()

    @property
    def all_ok(self) -> bool:
        return all(r.ok for r in self.cluster_rows + self.level_rows)


def cluster_size_bound(d: int, tau: float, ell: int) -> float:
    """Tail bound for the root cluster size, valid for d >= 11 tau^2."""
    return 1.1 * math.exp(-1.0) * (math.e * tau * tau / d) ** ell


def _cluster_tail_batch(job) -> np.ndarray:
    """Cluster sizes for one batch; vectorized root layer, lazy deep trials."""
    shape, t, seed, b, lo, hi = job
    m = hi - lo
    root_edges = [bytes((i,)) for i in range(shape.d)]
    gen_root = substream(seed, "tails-root", shape.d, shape.n, t, b)
    counts = gen_root.poisson(t, size=(m, shape.d))
    multi = (counts >= 2).sum(axis=1)
    sizes = np.zeros(m, dtype=np.int64)
    for i in np.nonzero(multi)[0]:
        gen = substream(seed, "tails-deep", shape.d, shape.n, t, lo + int(i))
        bars = LazyPoissonBars(shape, t, gen)
        bars.prefill_counts(root_edges, counts[i])
        sizes[i] = multibar_cluster(bars).size
    return sizes


def tail_checks(
    shape: TreeShape,
    t: float,
    trials: int,
    seed: int,
    workers: int = 1,
    level_pairs: Sequence[tuple[int, int]] = ((1, 2), (1, 3), (2, 2)),
    level_trials: Optional[int] = None,
) -> TailReport:
    """Empirical cluster-size and level-visit tails against their bounds.

    The cluster part needs d >= 11 tau^2 and is otherwise skipped with a
    notice.  The level-visit part plugs an independently seeded estimate of
    the deeper hit probability into the bound and widens the 4-sigma flag by
    the propagated plug-in error.
    """
    d = shape.d
    tau = t * d
    notes = []

    cluster_rows: list[TailRow] = []
    skipped = None
    if d < 11 * tau * tau:
        skipped = f"cluster tail skipped: d={d} < 11*tau^2={11 * tau * tau:.3g}"
    else:
        jobs = [(shape, t, seed, b, lo, hi) for b, lo, hi in batch_ranges(trials)]
        sizes = np.concatenate(_map_batches(_cluster_tail_batch, jobs, workers))
        for ell in (1, 2, 3, 4):
            emp = float((sizes >= ell).mean())
            se = math.sqrt(emp * (1.0 - emp) / trials)
            bound = cluster_size_bound(d, tau, ell)
            cluster_rows.append(
                TailRow(
                    f"P(cluster>= {ell})", ell, emp, se, bound, emp <= bound + 4 * se
                )
            )

    level_rows: list[TailRow] = []
    lv_trials = level_trials if level_trials is not None else min(trials, 20_000)
    if lv_trials > 0 and level_pairs:
        levels = sorted({i for i, _k in level_pairs})
        visit_counts = {i: np.zeros(lv_trials, dtype=np.int64) for i in levels}
        for j in range(lv_trials):
            gen = substream(seed, "tails-level", shape.d, shape.n, t, j)
            bars = LazyPoissonBars(shape, t, gen)
            cov = root_trajectory(bars).coverage()
            for i in levels:
                visit_counts[i][j] = sum(1 for v in cov if len(v) == i)
        plugins = {
            i: estimate_pn(
                TreeShape(d, shape.n - i), t, lv_trials, seed + 101, workers
            )
            for i in levels
            if shape.n - i >= 1
        }
        for i, k in level_pairs:
            if i not in plugins:
                notes.append(f"level pair ({i},{k}) skipped: n-i < 1")
                continue
            p = plugins[i]
            emp = float((visit_counts[i] >= k).mean())
            se = math.sqrt(emp * (1.0 - emp) / lv_trials)
            base = 1.0 - p.mean * math.exp(-t)
            bound = base ** (k - 1)
            dslope = (k - 1) * base ** max(k - 2, 0) * math.exp(-t)
            slack = 4.0 * (se + dslope * p.stderr)
            level_rows.append(
                TailRow(
                    f"P(level-{i} visits >= {k})", k, emp, se, bound, emp <= bound + slack
                )
            )

    return TailReport(tuple(cluster_rows), tuple(level_rows), skipped, tuple(notes))


# --- branching bound -------------------------------------------------------------


@dataclass(frozen=True)
class GwBound:
    q_ext: float
    p_upper: float
    iterations: int


def generation_survival(d: int, t: float, generations: int) -> float:
    """Probability the bar-occupancy branching process reaches a generation.

    The depth-n hit probability is dominated by survival to generation n
    (reaching depth n needs an occupied path), making this the finite-depth
    companion of :func:`gw_extinction`.
    """
    p_occ = -math.expm1(-t)
    q = 1.0 - p_occ
    s = 0.0
    for _ in range(generations):
        s = (p_occ * s + q) ** d
    return 1.0 - s


def gw_extinction(d: int, t: float) -> GwBound:
    """Extinction probability of the bar-occupancy branching process.

    Offspring are Binomial(d, 1 - e^-t); the smallest fixed point of its
    generating function is found by monotone iteration from zero.  The
    complement upper-bounds the never-return probability, and for d >= 6
    with t inside the critical window it is checked against 6/d.
    """
    if d < 2 or t < 0:
        raise ValueError("need d >= 2 and t >= 0")
    p_occ = -math.expm1(-t)  # 1 - e^-t
    q = 1.0 - p_occ

    def f(s: float) -> float:
        return (p_occ * s + q) ** d

    s = 0.0
    iterations = 0
    while iterations < 10_000_000:
        s_next = f(s)
        iterations += 1
        if abs(s_next - s) < 1e-12:
            s = s_next
            break
        s = s_next
    p_upper = 1.0 - s
    if d >= 6 and t <= 1.0 / d + 2.0 / d**2 and p_upper > 6.0 / d + 1e-9:
        raise EngineError("branching bound violated; fixed-point solver is wrong")
    return GwBound(s, p_upper, iterations)


# --- critical window scan ---------------------------------------------------------


@dataclass(frozen=True)
class ScanTable:
    rows: tuple  # (d, n, t, p_hat, stderr, bracket_lo, bracket_hi)
    trials: int
    seed: int

    def to_dicts(self) -> list[dict]:
        keys = ("d", "n", "t", "p_hat", "stderr", "bracket_lo", "bracket_hi")
        return [dict(zip(keys, row), schema=1) for row in self.rows]


def critical_window(d: int) -> tuple[float, float]:
    """Bracket for the transition rate: [1/d + 1/(2 d^2), 1/d + 2/d^2]."""
    return 1.0 / d + 0.5 / d**2, 1.0 / d + 2.0 / d**2


def critical_scan(
    shapes: Sequence[TreeShape],
    t_grid: Sequence[float],
    trials: int,
    seed: int,
    workers: int = 1,
) -> ScanTable:
    """Descriptive table of hit probabilities over a (shape, t) grid."""
    if not t_grid:
        raise ValueError("empty t grid")
    rows = []
    for shape in sorted(shapes, key=lambda s: (s.d, s.n)):
        lo, hi = critical_window(shape.d)
        for t in t_grid:
            est = estimate_pn(shape, t, trials, seed, workers)
            rows.append((shape.d, shape.n, t, est.mean, est.stderr, lo, hi))
    return ScanTable(tuple(rows), trials, seed)


# --- coupled thinning ---------------------------------------------------------------


def coupled_hit_indicators(
    shape: TreeShape, t_values: Sequence[float], trials: int, seed: int
) -> np.ndarray:
    """Hit indicators under the shared-bar thinning coupling.

    Bars are drawn once per trial at the largest rate with uniform marks;
    the collection at rate t keeps the bars with mark <= t, realizing the
    nested coupling of collections across rates on every seed.
    """
    ts = list(t_values)
    if ts != sorted(ts):
        raise ValueError("t values must be ascending")
    t_max = ts[-1]
    addresses = _edge_addresses(shape)
    out = np.zeros((trials, len(ts)), dtype=bool)
    for b, lo, hi in batch_ranges(trials):
        gen = substream(seed, "coupled", shape.d, shape.n, t_max, b)
        m = hi - lo
        counts = gen.poisson(t_max * shape.edge_count, size=m)
        total = int(counts.sum())
        eidx = gen.integers(0, shape.edge_count, size=total)
        heights = gen.random(total)
        marks = gen.random(total) * t_max
        pos = 0
        for i in range(m):
            k = int(counts[i])
            sl = slice(pos, pos + k)
            pos += k
            for j, t in enumerate(ts):
                keep = marks[sl] <= t
                try:
                    bars = _collection_from_slices(
                        shape, addresses, eidx[sl][keep], heights[sl][keep]
                    )
                except _RedrawTrial:
                    bars = BarCollection.sample_poisson(shape, t, gen)
                out[lo + i, j] = hit_level(bars).reached
    return out


def bar_cluster_reaches_boundary(bars) -> bool:
    """Percolation proxy: >=1-bar edges connect the root to depth n.

    Monotone under bar addition, unlike the meander hit indicator.
    """
    shape = bars.shape
    stack = [bytes((i,)) for i in range(shape.d)]
    while stack:
        e = stack.pop()
        if bars.count_on(e) == 0:
            continue
        if len(e) == shape.n:
            return True
        stack.extend(e + bytes((i,)) for i in range(shape.d))
    return False


def coupled_percolation_indicators(
    shape: TreeShape, t_values: Sequence[float], trials: int, seed: int
) -> np.ndarray:
    """Percolation indicators under the same thinning coupling."""
    ts = list(t_values)
    if ts != sorted(ts):
        raise ValueError("t values must be ascending")
    t_max = ts[-1]
    addresses = _edge_addresses(shape)
    out = np.zeros((trials, len(ts)), dtype=bool)
    for b, lo, hi in batch_ranges(trials):
        gen = substream(seed, "coupled", shape.d, shape.n, t_max, b)
        m = hi - lo
        counts = gen.poisson(t_max * shape.edge_count, size=m)
        total = int(counts.sum())
        eidx = gen.integers(0, shape.edge_count, size=total)
        gen.random(total)  # heights: drawn to keep the stream aligned
        marks = gen.random(total) * t_max
        pos = 0
        for i in range(m):
            k = int(counts[i])
            sl = slice(pos, pos + k)
            pos += k
            for j, t in enumerate(ts):
                keep = marks[sl] <= t
                kept_edges = {addresses[int(e)] for e in eidx[sl][keep]}
                out[lo + i, j] = _edges_reach_boundary(shape, kept_edges)
    return out


def _edges_reach_boundary(shape: TreeShape, kept: set[bytes]) -> bool:
    stack = [bytes((i,)) for i in range(shape.d)]
    while stack:
        e = stack.pop()
        if e not in kept:
            continue
        if len(e) == shape.n:
            return True
        stack.extend(e + bytes((i,)) for i in range(shape.d))
    return False


# --- gain-channel check --------------------------------------------------------------


def bare_root_gain_check(
    shape: TreeShape, t: float, trials: int, seed: int
) -> tuple[Estimate, Estimate, float]:
    """On-pivotal rate with a bar-free root layer versus the depth-(n-1) rate.

    Samples the conditional law directly (Poisson bars off the root edges,
    none on them), places the added bar uniformly on the root layer, and
    compares the on-pivotal frequency with an independent estimate of the
    one-level-shallower hit probability.
    """
    if shape.n < 2:
        raise ValueError("needs depth >= 2")
    d = shape.d
    hits = 0
    for i in range(trials):
        gen = substream(seed, "bare-root-gain", d, shape.n, t, i)
        sampled = BarCollection.sample_poisson(shape, t, gen)
        bars = BarCollection.from_bars(
            shape, (b for b in sampled.iter_bars() if len(b.edge) > 1)
        )
        edge = bytes((int(gen.integers(0, d)),))
        h = float(gen.random())
        while h == 0.0:
            h = float(gen.random())
        if hit_level(bars).reached:
            raise EngineError("bar-free root layer cannot reach depth n unaided")
        if hit_level(bars.with_added(Bar(edge, h))).reached:
            hits += 1
    gain = _bernoulli(f"on-pivotal|bar-free-root(t={t})", hits, trials, seed)
    ref = estimate_pn(TreeShape(d, shape.n - 1), t, trials, seed + 7)
    denom = math.hypot(gain.stderr, ref.stderr)
    z = (gain.mean - ref.mean) / denom if denom else 0.0
    return gain, ref, z
