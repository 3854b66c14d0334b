"""Randomized property suite for :mod:`stochapprox.finprob`.

Used by ``stochapprox finprob selftest`` and by the test-suite. Every check
draws its instances from one ``numpy`` generator seeded by the caller, so a
(seed, trials, max_size) triple always reproduces the same table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import finprob as fp

TOL = fp.TOL


@dataclass(frozen=True)
class PropertyResult:
    name: str
    trials: int
    worst: float
    tol: float
    passed: bool


def random_space(rng, size):
    w = rng.random(size) + 0.05
    w = w / w.sum()
    # renormalising can leave the sum one ulp away from 1
    w[-1] = 1.0 - w[:-1].sum()
    if w[-1] <= 0:
        w = np.full(size, 1.0 / size)
    return fp.FiniteProbSpace(w)


def random_partition(rng, size, max_blocks=None):
    k = int(rng.integers(1, (max_blocks or size) + 1))
    labels = rng.integers(0, k, size)
    return fp.Partition.from_labels(labels)


def random_refinement(rng, coarse):
    """Split each coarse block further by an independent random label."""
    extra = rng.integers(0, 3, coarse.size)
    return fp.Partition.from_labels(coarse.block_of * 3 + extra)


def random_measurable(rng, part, scale=3.0):
    return rng.uniform(-scale, scale, part.block_count)[part.block_of]


def _instance(rng, max_size):
    size = int(rng.integers(1, max_size + 1))
    sp = random_space(rng, size)
    part = random_partition(rng, size)
    X = rng.uniform(-3.0, 3.0, size)
    return sp, part, X


def run_suite(trials=1000, seed=0, max_size=64, competitors=50, minimality_instances=200):
    rng = np.random.default_rng(seed)
    results = []

    def record(name, worst, tol, passed, n=trials):
        results.append(PropertyResult(name, n, float(worst), tol, bool(passed)))

    worst = 0.0
    for _ in range(trials):
        sp, part, X = _instance(rng, max_size)
        ce = fp.cond_expectation(sp, part, X)
        worst = max(worst, fp.check_universal_property(sp, part, X, ce))
    record("universal_property", worst, TOL, worst < TOL)

    worst = 0.0
    for _ in range(trials):
        sp, coarse, X = _instance(rng, max_size)
        fine = random_refinement(rng, coarse)
        worst = max(worst, fp.check_tower(sp, coarse, fine, X))
    record("tower_law", worst, TOL, worst < TOL)

    worst = 0.0
    for _ in range(trials):
        sp, part, Y = _instance(rng, max_size)
        Xm = random_measurable(rng, part)
        worst = max(worst, fp.check_factor_out(sp, part, Xm, Y))
    record("factor_out", worst, TOL, worst < TOL)

    for label, phi in (("x^2", np.square), ("|x|", np.abs), ("exp", np.exp)):
        low = np.inf
        for _ in range(trials):
            sp, part, X = _instance(rng, max_size)
            low = min(low, fp.jensen_check(sp, part, X, phi))
        record(f"jensen[{label}]", low, -TOL, low >= -TOL)

    worst = 0.0
    for _ in range(trials):
        sp, part, X = _instance(rng, max_size)
        Y = rng.uniform(-3.0, 3.0, sp.size)
        c = rng.uniform(-2.0, 2.0)
        lhs = fp.cond_expectation(sp, part, c * X + Y)
        rhs = c * fp.cond_expectation(sp, part, X) + fp.cond_expectation(sp, part, Y)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    record("linearity", worst, TOL, worst < TOL)

    worst = -np.inf
    for _ in range(trials):
        sp, part, X = _instance(rng, max_size)
        Y = X + rng.uniform(0.0, 1.0, sp.size)
        diff = fp.cond_expectation(sp, part, X) - fp.cond_expectation(sp, part, Y)
        worst = max(worst, float(diff.max()))
    record("monotonicity", worst, TOL, worst <= TOL)

    ok = True
    for _ in range(trials):
        sp, part, X = _instance(rng, max_size)
        ce = fp.cond_expectation(sp, part, X)
        ok &= bool(np.array_equal(fp.cond_expectation(sp, part, ce), ce))
    record("idempotence", 0.0 if ok else 1.0, 0.0, ok)

    worst = -np.inf
    for _ in range(minimality_instances):
        sp, part, X = _instance(rng, max_size)
        best = fp.lp_norm(sp, X - fp.cond_expectation(sp, part, X), 2)
        for _ in range(competitors):
            other = random_measurable(rng, part)
            worst = max(worst, best - fp.lp_norm(sp, X - other, 2))
    record("l2_minimality", worst, TOL, worst <= TOL, n=minimality_instances)

    for p in (1, 2):
        worst = -np.inf
        for _ in range(trials):
            sp, part, X = _instance(rng, max_size)
            gap = fp.lp_norm(sp, fp.cond_expectation(sp, part, X), p) - fp.lp_norm(sp, X, p)
            worst = max(worst, gap)
        record(f"lp_contractive[p={p}]", worst, TOL, worst <= TOL)

    worst = -np.inf
    for _ in range(trials):
        sp, _, X = _instance(rng, max_size)
        a = float(rng.uniform(0.1, 3.0))
        b = fp.chebyshev_check(sp, X, a)
        worst = max(worst, b.lhs - b.rhs)
    record("chebyshev", worst, TOL, worst <= TOL)

    ok = True
    for _ in range(trials):
        sp, part, X = _instance(rng, max_size)
        ok &= fp.is_measurable(fp.cond_expectation(sp, part, X), part)
    record("ce_measurable", 0.0 if ok else 1.0, 0.0, ok)

    return results


def format_table(results) -> str:
    lines = [f"{'property':<24} {'trials':>6} {'worst':>12} {'tol':>9}  result"]
    for r in results:
        lines.append(
            f"{r.name:<24} {r.trials:>6} {r.worst:>12.3e} {r.tol:>9.1e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
