"""Consensus over a star network by forward-backward-forward splitting.

Variables: ``x_i`` (one copy per worker), the master copy ``y`` and duals
``s_i`` for ``x_i = y``. The iterate is laid out as ``[y, x_1, s_1, ...,
x_m, s_m]`` so that each worker's pair is one block; the master keeps
``sum_j s_j`` and ``sum_j x_j``.

The ``corrected`` variant applies ``gamma C + (I - gamma C) J (I - gamma C)``
with the skew coupling ``C = [[0, 0, I], [0, 0, -e^T], [-I, e, 0]]``;
``verbatim`` keeps the older coefficient pattern (3 gamma y, gamma^2 sum s).
"""
from __future__ import annotations

import numpy as np

from ..core import CF, NULL_COUNTER, FixedPointOperator, OperatorDescriptor, Sep, make_partition
from ..prox import _call
from .base import ProblemInstance

VARIANTS = ("corrected", "verbatim")


class NetworkFBFOperator(FixedPointOperator):
    cache_schema = {"sum_s": None, "sum_x": None}

    def __init__(self, proxes, d: int = 1, gamma=None, variant: str = "corrected"):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.proxes = list(proxes)
        self.mw = len(self.proxes)
        if self.mw < 1:
            raise ValueError("need at least one worker")
        self.d = int(d)
        # ||C|| = sqrt(m + 1) for the skew coupling
        self.lip = np.sqrt(self.mw + 1.0)
        self.gamma = 0.9 / self.lip if gamma is None else float(gamma)
        if not 0 < self.gamma < 1.0 / self.lip:
            raise ValueError(f"gamma must lie in (0, 1/||C||) = (0, {1.0 / self.lip:g})")
        self.variant = variant
        full = 16 * self.mw * self.d
        super().__init__(make_partition([self.d] + [2 * self.d] * self.mw),
                         OperatorDescriptor(Sep.NON, CF.CACHE, full, full / (self.mw + 1)))

    # layout helpers
    def y(self, z):
        return z[:self.d]

    def xs(self, z):
        W = z[self.d:].reshape(self.mw, 2, self.d)
        return W[:, 0, :], W[:, 1, :]

    def pack(self, y, X, S):
        return np.concatenate([y, np.stack([X, S], axis=1).ravel()])

    def _p(self, i, v):
        return _call(self.proxes[i], v, self.gamma, None)

    def _worker(self, i, xi, si, y, sum_s, counter):
        g = self.gamma
        p = self._p(i, xi - g * si)
        counter.add(12 * self.d)
        if self.variant == "corrected":
            xn = p - g * g * xi + g * g * y
            sn = si - g * y - g * g * sum_s + g * p
        else:
            xn = p + g * g * xi - g * g * y - 2 * g * si
            sn = si - 2 * g * xi - g * p + 3 * g * y + g * g * sum_s
        return xn, sn

    def _master(self, y, sum_s, sum_x, counter):
        g, m = self.gamma, self.mw
        counter.add(6 * self.d)
        if self.variant == "corrected":
            return (1 - m * g * g) * y + g * sum_s + g * g * sum_x
        return (1 + m * g * g) * y + 3 * g * sum_s - g * g * sum_x

    def apply_full(self, z, counter=NULL_COUNTER):
        y = self.y(z)
        X, S = self.xs(z)
        sum_s, sum_x = S.sum(axis=0), X.sum(axis=0)
        counter.add(4 * self.mw * self.d)
        Xn, Sn = np.empty_like(X), np.empty_like(S)
        for i in range(self.mw):
            Xn[i], Sn[i] = self._worker(i, X[i], S[i], y, sum_s, counter)
        return self.pack(self._master(y, sum_s, sum_x, counter), Xn, Sn)

    def recompute_cache(self, z):
        X, S = self.xs(z)
        return {"sum_s": S.sum(axis=0), "sum_x": X.sum(axis=0)}

    def coordinate(self, z, i, cache, counter=NULL_COUNTER):
        y = self.y(z)
        if i == 0:
            return self._master(y, cache["sum_s"], cache["sum_x"], counter)
        X, S = self.xs(z)
        xn, sn = self._worker(i - 1, X[i - 1], S[i - 1], y, cache["sum_s"], counter)
        return np.concatenate([xn, sn])

    def refresh(self, cache, z, i, old, new, counter=NULL_COUNTER):
        if i == 0:
            return
        d = self.d
        counter.add(4 * d)
        cache["sum_x"] = cache["sum_x"] + (new[:d] - old[:d])
        cache["sum_s"] = cache["sum_s"] + (new[d:] - old[d:])

    def solution(self, z):
        return self.y(z).copy()

    def consensus_gap(self, z) -> float:
        X, _ = self.xs(z)
        return float(np.max(np.abs(X - self.y(z)[None, :]), initial=0.0))


def build_network_consensus(proxes, d: int = 1, gamma=None, variant: str = "corrected",
                            values=None, oracle=None) -> ProblemInstance:
    """``proxes[i](v, t)`` is the prox of ``t f_i``; ``values[i](x)`` evaluates ``f_i``."""
    op = NetworkFBFOperator(proxes, d, gamma, variant)
    m = op.mw

    def objective(y):
        if values is None:
            return None
        return float(sum(f(y) for f in values))

    if values is not None:
        op.objective = lambda z: objective(op.solution(z))
    return ProblemInstance("network", {"workers": m, "d": d}, op, np.zeros(op.dim), objective, oracle)
