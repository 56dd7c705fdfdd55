"""Nonnegative matrix factorization by projected-gradient column updates."""
from __future__ import annotations

import numpy as np

from ..core import CF, NULL_COUNTER, FixedPointOperator, OperatorDescriptor, Sep, make_partition
from .base import ProblemInstance

EPS = 1e-12


class NMFOperator(FixedPointOperator):
    """Blocks ``w_1..w_r, h_1..h_r`` (columns of ``W`` and ``H``); cache ``R = W H^T - A``.

    The step for ``w_i`` is ``1/||h_i||^2`` and for ``h_i`` it is
    ``1/||w_i||^2``. With ``unit_norm`` the new ``w_i`` is rescaled to unit
    length; a block whose step denominator is below ``1e-12`` is left as is.
    """

    cache_schema = {"R": None}

    def __init__(self, A, r: int, unit_norm: bool = True):
        self.A = np.asarray(A, dtype=float)
        if self.A.ndim != 2 or np.any(self.A < 0):
            raise ValueError("A must be an elementwise nonnegative matrix")
        if r < 1:
            raise ValueError("rank must be at least 1")
        self.p, self.n = self.A.shape
        self.r, self.unit_norm = int(r), unit_norm
        full = 2 * self.r * 3 * self.p * self.n
        super().__init__(make_partition([self.p] * self.r + [self.n] * self.r),
                         OperatorDescriptor(Sep.NON, CF.CACHE, full, full / (2 * self.r)))

    def factors(self, z):
        W = z[:self.p * self.r].reshape(self.r, self.p).T
        H = z[self.p * self.r:].reshape(self.r, self.n).T
        return W, H

    def pack(self, W, H):
        return np.concatenate([W.T.ravel(), H.T.ravel()])

    def _block(self, z, i, R, counter):
        W, H = self.factors(z)
        if i < self.r:
            w, h = W[:, i], H[:, i]
            L = float(h @ h)
            counter.add(2 * self.n + 2 * self.p * self.n + 3 * self.p)
            if L < EPS:
                return w.copy()
            v = np.maximum(0.0, w - (R @ h) / L)
            if self.unit_norm:
                nv = np.linalg.norm(v)
                counter.add(3 * self.p)
                return v / nv if nv >= EPS else w.copy()
            return v
        j = i - self.r
        w, h = W[:, j], H[:, j]
        L = float(w @ w)
        counter.add(2 * self.p + 2 * self.p * self.n + 3 * self.n)
        if L < EPS:
            return h.copy()
        return np.maximum(0.0, h - (R.T @ w) / L)

    def apply_full(self, z, counter=NULL_COUNTER):
        W, H = self.factors(z)
        counter.add(2 * self.p * self.n * self.r + self.p * self.n)
        R = W @ H.T - self.A
        return np.concatenate([self._block(z, i, R, counter) for i in range(self.m)])

    def recompute_cache(self, z):
        W, H = self.factors(z)
        return {"R": W @ H.T - self.A}

    def coordinate(self, z, i, cache, counter=NULL_COUNTER):
        return self._block(z, i, cache["R"], counter)

    def refresh(self, cache, z, i, old, new, counter=NULL_COUNTER):
        W, H = self.factors(z)
        counter.add(2 * self.p * self.n)
        d = new - old
        if i < self.r:
            cache["R"] += np.outer(d, H[:, i])
        else:
            cache["R"] += np.outer(W[:, i - self.r], d)

    def objective(self, z):
        W, H = self.factors(z)
        R = W @ H.T - self.A
        return 0.5 * float(np.sum(R * R))


def build_nmf(A, r: int, unit_norm: bool = True, seed: int = 0, W0=None, H0=None) -> ProblemInstance:
    op = NMFOperator(A, r, unit_norm)
    rng = np.random.default_rng(seed)
    W = rng.random((op.p, r)) if W0 is None else np.asarray(W0, dtype=float)
    H = rng.random((op.n, r)) if H0 is None else np.asarray(H0, dtype=float)
    if unit_norm:
        nw = np.linalg.norm(W, axis=0)
        nw[nw == 0] = 1.0
        W, H = W / nw, H * nw

    def oracle():
        # best rank-r approximation; for r = 1 the leading singular pair is nonnegative
        U, s, Vt = np.linalg.svd(op.A, full_matrices=False)
        return (U[:, :r] * s[:r]) @ Vt[:r]

    return ProblemInstance("nmf", {"p": op.p, "n": op.n, "r": r}, op, op.pack(W, H),
                           lambda z: op.objective(z), oracle, unpack=lambda z: z)
