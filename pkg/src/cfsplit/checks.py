"""Invariant checks shared by the ``verify`` command and the test-suite."""
from __future__ import annotations

import numpy as np

from .core import FixedPointOperator, apply_coordinate, cache_audit, commit


def coordinate_equivalence(op: FixedPointOperator, sample, trials: int = 1000, seed: int = 0) -> float:
    """Worst relative gap between ``(Tx)_i`` by coordinate and by full update.

    ``sample(rng)`` draws a point; the block index is uniform.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = np.asarray(sample(rng), dtype=float)
        i = int(rng.integers(op.m))
        cache = op.init_cache(x)
        v, _ = apply_coordinate(op, x, i, cache)
        ref = op.apply_full(x)[op.partition.slice(i)]
        d = float(np.linalg.norm(v - ref) / max(1.0, np.linalg.norm(ref)))
        worst = max(worst, d) if np.isfinite(d) else np.inf
    return worst


def audit_storm(op: FixedPointOperator, x0, updates: int = 10000, seed: int = 0, eta: float = 1.0,
                audit_every: int | None = None) -> float:
    """Random damped coordinate commits; worst cache deviation seen at the audit points."""
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float)
    cache = op.init_cache(x)
    every = audit_every or max(1, updates // 10)
    worst = 0.0
    for k in range(1, updates + 1):
        i = int(rng.integers(op.m))
        sl = op.partition.slice(i)
        v = op.coordinate(x, i, cache)
        commit(op, x, i, x[sl] - eta * (x[sl] - v), cache)
        if k % every == 0 or k == updates:
            d = cache_audit(op, x, cache)
            worst = max(worst, d) if np.isfinite(d) else np.inf
    return worst
