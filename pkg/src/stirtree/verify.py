"""Invariant suite: the exact per-sample inclusions and the statistical laws.

Each check returns a :class:`CheckResult`; a failing stochastic check always
carries enough replay data (seed plus trial coordinates) to rerun the exact
offending sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from stirtree.bars import (
    BarCollection,
    normalized_position,
    sample_added,
    sample_uniform_on,
)
from stirtree.events import (
    _eval_routes,
    crossed_bars,
    crossing_without_bottleneck,
    detect,
    multibar_cluster,
    root_stats,
    root_trajectory,
    scan_crossings,
    untouched_locations,
    viable_locations,
)
from stirtree.meander import EngineError, SpaceTimePoint, return_time
from stirtree.rng import substream
from stirtree.stirring import stirring_permutation, transposition_oracle
from stirtree.tree import ROOT, TreeShape
from stirtree import estimators


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    replay: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"[{status}] {self.name}: {self.detail}"
        if not self.passed and self.replay:
            text += f" (replay: {self.replay})"
        return text


ORACLE_GRID = tuple(
    (d, n, tau / d) for d in (2, 3) for n in (2, 3) for tau in (0.5, 1.0, 2.0)
)


def check_oracle_equivalence(instances: int, seed: int) -> CheckResult:
    """Engine-vs-algebra agreement of the unit-time permutation, exactly."""
    mismatches = []
    for i in range(instances):
        d, n, t = ORACLE_GRID[i % len(ORACLE_GRID)]
        shape = TreeShape(d, n)
        gen = substream(seed, "oracle", d, n, t, i)
        bars = BarCollection.sample_poisson(shape, t, gen)
        try:
            ok = stirring_permutation(bars) == transposition_oracle(bars)
        except EngineError as exc:
            ok = False
            mismatches.append({"d": d, "n": n, "t": t, "trial": i, "error": str(exc)})
            continue
        if not ok:
            mismatches.append({"d": d, "n": n, "t": t, "trial": i})
    detail = f"{instances} instances, {len(mismatches)} mismatches"
    replay = {"seed": seed, "first_failure": mismatches[0]} if mismatches else {}
    return CheckResult("oracle-equivalence", not mismatches, detail, replay)


_INCLUSION_NAMES = (
    "pivot-subset-crossing",
    "pivot-bottleneck-no-escape",
    "crossing-no-bottleneck-matches-viable-set",
    "viable-set-inside-cluster-closure",
    "viable-mass-forces-cluster-size",
    "static-routes-subset-witnessed",
    "clusterless-confined-full-root-layer",
    "bare-added-edge-never-off-pivotal",
)


def inclusion_violations(bars, added, n1: int = 1) -> list[str]:
    """Names of violated per-sample inclusions for one (B, A) draw."""
    shape = bars.shape
    d = shape.d
    traj = root_trajectory(bars)
    rec = detect(bars, added, n1=n1, trajectory=traj)
    vl = viable_locations(bars, traj)
    cluster = multibar_cluster(bars)
    rstats = root_stats(bars, trajectory=traj)
    out = []

    if rec.pivot != "neither" and not rec.crossed:
        out.append("pivot-subset-crossing")
    if rec.pivot != "neither" and rec.bottleneck_edge is not None:
        if not (rec.crossed and rec.no_escape):
            out.append("pivot-bottleneck-no-escape")
    cnb = crossing_without_bottleneck(bars, added, traj)
    if cnb != vl.contains(added.edge, added.height):
        out.append("crossing-no-bottleneck-matches-viable-set")
    closure = cluster.cluster | cluster.boundary
    if any(e not in closure for e in vl.intervals):
        out.append("viable-set-inside-cluster-closure")
    mass = vl.measure()
    k = 1
    while mass > d * k + 1e-9:  # 1e-9 absorbs interval-sum rounding only
        if cluster.size < k:
            out.append("viable-mass-forces-cluster-size")
            break
        k += 1
    for _idx, _tip, cov, _t in scan_crossings(bars, traj):
        routes = _eval_routes(bars, cov, _tip)
        static_above_root = {e for e in routes.static if len(e) > 1}
        if not static_above_root <= routes.witnessed:
            out.append("static-routes-subset-witnessed")
            break
    if rstats.confined_clusterless:
        full = ((0.0, 1.0),)
        root_edges = {bytes((i,)) for i in range(d)}
        if set(vl.intervals) != root_edges or any(
            vl.intervals[e] != full for e in root_edges
        ):
            out.append("clusterless-confined-full-root-layer")
    if bars.count_on(added.edge) == 0 and rec.pivot == "off":
        out.append("bare-added-edge-never-off-pivotal")
    return out


def check_inclusions(
    samples: int,
    seed: int,
    shape: TreeShape = TreeShape(3, 4),
    ts: tuple = (0.2, 0.33, 0.5),
    n1: int = 1,
) -> CheckResult:
    """Zero-tolerance event inclusions over random (B, A) samples."""
    per_t = (samples + len(ts) - 1) // len(ts)
    violations = []
    total = 0
    for t in ts:
        for i in range(per_t):
            gen = substream(seed, "inclusions", shape.d, shape.n, t, i)
            bars = BarCollection.sample_poisson(shape, t, gen)
            added = sample_added(shape, gen)
            total += 1
            bad = inclusion_violations(bars, added, n1=n1)
            if bad:
                violations.append({"t": t, "trial": i, "violated": bad})
    detail = f"{total} samples over t={ts}, {len(violations)} violations"
    replay = {"seed": seed, "first_failure": violations[0]} if violations else {}
    return CheckResult("event-inclusions", not violations, detail, replay)


def check_shift_invariance(
    trials: int,
    seed: int,
    shape: TreeShape = TreeShape(2, 4),
    t: float = 0.5,
    heights: tuple = (0.0, 0.25, 0.5, 0.75),
    p_floor: float = 1e-3,
) -> CheckResult:
    """Return-time laws from the root pole agree across start heights.

    Truncated runs (depth-n poles hit first) enter as +inf, so the censoring
    pattern is compared too.  Two-sample KS on every pair of start heights.
    """
    samples = {}
    for h in heights:
        vals = np.empty(trials)
        for i in range(trials):
            gen = substream(seed, "shift", shape.d, shape.n, t, h, i)
            bars = BarCollection.sample_poisson(shape, t, gen)
            res = return_time(bars, SpaceTimePoint(ROOT, h))
            vals[i] = res.time if res.time is not None else np.inf
        samples[h] = vals
    worst = None
    for i, a in enumerate(heights):
        for b in heights[i + 1 :]:
            p = stats.ks_2samp(samples[a], samples[b]).pvalue
            if worst is None or p < worst[2]:
                worst = (a, b, p)
    passed = bool(worst[2] > p_floor)
    detail = f"min pairwise KS p={worst[2]:.4g} at heights {worst[:2]}"
    return CheckResult(
        "shift-invariance", passed, detail, {"seed": seed} if not passed else {}
    )


def check_conditional_sampler(
    instances: int,
    per_instance: int,
    seed: int,
    shape: TreeShape = TreeShape(3, 4),
    t: float = 0.4,
    p_floor: float = 1e-3,
) -> CheckResult:
    """Rejection-conditioned added bars match the direct viable-set sampler.

    For each fixed collection, rejection sampling accepts uniform added bars
    on crossing-without-bottleneck (decided by the event detector), while the
    direct route draws from the viable-location set; positions normalized by
    the set's inverse CDF pool into one two-sample KS test.
    """
    rej, direct = [], []
    tries_total = 0
    for b_i in range(instances):
        gen = substream(seed, "cond-b", shape.d, shape.n, t, b_i)
        bars = BarCollection.sample_poisson(shape, t, gen)
        traj = root_trajectory(bars)
        vl = viable_locations(bars, traj)
        if vl.measure() <= 0.0:
            continue  # not reachable; cannot happen from the root pole
        gen_r = substream(seed, "cond-rej", shape.d, shape.n, t, b_i)
        got = tries = 0
        while got < per_instance and tries < 500_000:
            a = sample_added(shape, gen_r)
            tries += 1
            if crossing_without_bottleneck(bars, a, traj):
                rej.append(normalized_position(vl, a))
                got += 1
        tries_total += tries
        gen_d = substream(seed, "cond-dir", shape.d, shape.n, t, b_i)
        for _ in range(per_instance):
            direct.append(normalized_position(vl, sample_uniform_on(vl, gen_d)))
    p = stats.ks_2samp(rej, direct).pvalue
    passed = bool(p > p_floor)
    efficiency = len(rej) / tries_total if tries_total else 0.0
    detail = (
        f"pooled KS p={p:.4g} over {instances} collections x {per_instance},"
        f" rejection efficiency {efficiency:.3f}"
    )
    return CheckResult(
        "conditional-sampler", passed, detail, {"seed": seed} if not passed else {}
    )


def check_exploration_law(
    trials: int,
    seed: int,
    shape: TreeShape = TreeShape(2, 3),
    t: float = 0.7,
) -> CheckResult:
    """Bars off the trajectory stay Poisson-t on the untouched region.

    Exact part: every uncrossed bar's joints avoid the trajectory.  Statistical
    part: the uncrossed counts match a Poisson with the untouched mass, and
    their positions are uniform within the region.
    """
    count_excess = 0.0
    mu_total = 0.0
    positions = []
    exact_bad = 0
    for i in range(trials):
        gen = substream(seed, "explore", shape.d, shape.n, t, i)
        bars = BarCollection.sample_poisson(shape, t, gen)
        traj = root_trajectory(bars)
        found = crossed_bars(traj)
        unt = untouched_locations(bars, traj)
        leftover = [b for b in bars.iter_bars() if b not in found]
        for b in leftover:
            if not unt.contains(b.edge, b.height):
                exact_bad += 1
            else:
                positions.append(normalized_position(unt, b))
        mu = t * unt.measure()
        count_excess += len(leftover) - mu
        mu_total += mu
    z = count_excess / math.sqrt(mu_total) if mu_total > 0 else 0.0
    p_ks = stats.kstest(positions, "uniform").pvalue if positions else 1.0
    passed = bool(exact_bad == 0 and abs(z) < 4.0 and p_ks > 1e-3)
    detail = (
        f"{exact_bad} touched leftovers, count z={z:.2f}, position KS p={p_ks:.4g}"
    )
    return CheckResult(
        "exploration-law", passed, detail, {"seed": seed} if not passed else {}
    )


def check_russo(
    trials: int,
    seed: int,
    shape: TreeShape = TreeShape(2, 2),
    t: float = 0.5,
    fd_step: float = 0.05,
    workers: int = 1,
) -> CheckResult:
    rc = estimators.russo_check(shape, t, fd_step, trials, seed, workers)
    passed = abs(rc.zscore) < 3.0
    detail = (
        f"lhs={rc.lhs.mean:.4f}±{rc.lhs.stderr:.4f} rhs={rc.rhs.mean:.4f}"
        f"±{rc.rhs.stderr:.4f} bias={rc.bias_allowance:.4f} z={rc.zscore:.2f}"
    )
    return CheckResult(
        "russo-derivative", passed, detail, {"seed": seed} if not passed else {}
    )


def check_tails(
    trials: int,
    seed: int,
    shape: TreeShape = TreeShape(16, 4),
    t: float = 1.0 / 16,
    workers: int = 1,
    level_trials: int | None = None,
) -> CheckResult:
    rep = estimators.tail_checks(
        shape, t, trials, seed, workers, level_trials=level_trials
    )
    rows = rep.cluster_rows + rep.level_rows
    bad = [r for r in rows if not r.ok]
    detail = f"{len(rows)} tail rows, {len(bad)} beyond bound+4se"
    if rep.cluster_skipped:
        detail += f" ({rep.cluster_skipped})"
    return CheckResult(
        "tail-bounds",
        not bad,
        detail,
        {"seed": seed, "rows": [r.label for r in bad]} if bad else {},
    )


def check_z_bracket(
    trials: int,
    seed: int,
    shape: TreeShape = TreeShape(16, 4),
    t: float = 1.0 / 16,
    workers: int = 1,
) -> CheckResult:
    est = estimators.z_estimate(shape, t, trials, seed, workers)
    lo, hi = estimators.z_bracket(shape.d, t * shape.d)
    passed = lo - 4 * est.stderr <= est.mean <= hi + 4 * est.stderr
    detail = f"mean={est.mean:.3f}±{est.stderr:.3f} bracket [{lo:.3f}, {hi:.3f}]"
    return CheckResult(
        "viable-mass-bracket", passed, detail, {"seed": seed} if not passed else {}
    )


SUITE = (
    "oracle",
    "inclusions",
    "shift",
    "russo",
    "tails",
    "z",
    "conditional",
    "exploration",
)


def run_suite(
    seed: int,
    trials: int | None = None,
    only: tuple[str, ...] | None = None,
    workers: int = 1,
) -> list[CheckResult]:
    """Run the named checks at suite-default scales (or a shared override)."""
    chosen = only or SUITE
    results = []
    for name in chosen:
        if name == "oracle":
            results.append(check_oracle_equivalence(trials or 2400, seed))
        elif name == "inclusions":
            results.append(check_inclusions(trials or 3000, seed))
        elif name == "shift":
            results.append(check_shift_invariance(trials or 2000, seed))
        elif name == "russo":
            results.append(check_russo(trials or 150_000, seed, workers=workers))
        elif name == "tails":
            results.append(
                check_tails(trials or 200_000, seed, workers=workers, level_trials=4000)
            )
        elif name == "z":
            results.append(check_z_bracket(trials or 20_000, seed, workers=workers))
        elif name == "conditional":
            results.append(check_conditional_sampler(40, 25, seed))
        elif name == "exploration":
            results.append(check_exploration_law(trials or 600, seed))
        else:
            raise ValueError(f"unknown check {name!r}; choose from {SUITE}")
    return results
