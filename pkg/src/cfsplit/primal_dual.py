"""Condat-Vu primal-dual operators and their coordinate updates.

Problem: ``minimize f(x) + g(x) + h(A x)`` with ``f`` smooth, ``g`` and ``h``
prox-friendly and separable over the primal and dual blocks. The iterate is
``z = [x; s]``; primal blocks come first in the partition.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .core import (CF, NULL_COUNTER, BlockPartition, CacheInvalidError, FixedPointOperator,
                   MaintainedCache, OperatorDescriptor, Sep, make_partition, matvec_cost)
from .prox import EqualityIndicator, Zero, _call


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# smooth terms


class ZeroSmooth:
    lipschitz = 0.0

    def value(self, x):
        return 0.0

    def grad(self, x):
        return np.zeros_like(x)

    def grad_entries(self, x, idx, counter=NULL_COUNTER):
        return np.zeros(len(np.arange(x.size)[idx]))


class QuadraticSmooth:
    """``f(x) = 1/2 x^T Q x + c^T x``; one gradient entry costs one row of Q."""

    def __init__(self, Q, c=None):
        self.Q = np.asarray(Q, dtype=float)
        n = self.Q.shape[0]
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        self.lipschitz = float(np.linalg.norm(self.Q, 2)) if n else 0.0

    def value(self, x):
        return 0.5 * float(x @ self.Q @ x) + float(self.c @ x)

    def grad(self, x):
        return self.Q @ x + self.c

    def grad_entries(self, x, idx, counter=NULL_COUNTER):
        rows = self.Q[idx]
        counter.add(rows.size * 2 + rows.shape[0])
        return rows @ x + self.c[idx]


class SeparableQuadratic:
    """``f(x) = 1/2 sum_i d_i (x_i - z_i)^2``."""

    def __init__(self, d, z):
        self.z = np.asarray(z, dtype=float)
        self.d = np.broadcast_to(np.asarray(d, dtype=float), self.z.shape).copy()
        self.lipschitz = float(np.max(self.d)) if self.d.size else 0.0

    def value(self, x):
        return 0.5 * float(np.sum(self.d * (x - self.z) ** 2))

    def grad(self, x):
        return self.d * (x - self.z)

    def grad_entries(self, x, idx, counter=NULL_COUNTER):
        counter.add(2 * len(self.z[idx]))
        return self.d[idx] * (x[idx] - self.z[idx])


# ---------------------------------------------------------------------------
# problem, state, metric


def _closure(part: BlockPartition, scalar_idx: np.ndarray) -> np.ndarray:
    if scalar_idx.size == 0:
        return scalar_idx.astype(np.intp)
    blocks = np.unique(part.block_ids()[scalar_idx])
    return part.indices(blocks)


class PrimalDualProblem:
    def __init__(self, A, f=None, g=None, h=None, primal_partition: BlockPartition | None = None,
                 dual_partition: BlockPartition | None = None):
        if sparse.issparse(A):
            self.A = sparse.csr_matrix(A, dtype=float)
            self.Acsc = self.A.tocsc()
        else:
            self.A = np.atleast_2d(np.asarray(A, dtype=float))
            self.Acsc = self.A
        self.sparse = sparse.issparse(A)
        p, n = self.A.shape
        self.n, self.p = n, p
        self.f = f or ZeroSmooth()
        self.g = g or Zero()
        self.h = h or Zero()
        self.primal_partition = primal_partition or make_partition([1] * n)
        self.dual_partition = dual_partition or make_partition([1] * p)
        if self.primal_partition.total_dim != n or self.dual_partition.total_dim != p:
            raise ValueError("partitions do not match the shape of A")
        self._ops = {}

    # linear algebra with column/row access
    def rows(self, idx):
        return self.A[idx]

    def cols(self, idx):
        return self.Acsc[:, idx]

    def submatrix(self, ridx, cidx):
        if self.sparse:
            return self.A[ridx][:, cidx]
        return self.A[np.ix_(ridx, cidx)]

    def rows_touching(self, cidx) -> np.ndarray:
        """Dual indices (closed under dual blocks) touched by primal columns ``cidx``."""
        C = self.cols(cidx)
        if self.sparse:
            r = np.unique(C.indices)
        else:
            r = np.flatnonzero(np.any(C != 0, axis=1))
        return _closure(self.dual_partition, r)

    def cols_touching(self, ridx) -> np.ndarray:
        R = self.rows(ridx)
        if self.sparse:
            c = np.unique(R.indices)
        else:
            c = np.flatnonzero(np.any(R != 0, axis=0))
        return _closure(self.primal_partition, c)

    def prox_g(self, v, t, idx=None):
        return _call(self.g, v, t, idx)

    def prox_hconj(self, v, gamma, idx=None):
        # Moreau: prox_{gamma h*}(v) = v - gamma prox_{h/gamma}(v/gamma)
        return v - gamma * _call(self.h, v / gamma, 1.0 / gamma, idx)

    def objective(self, x):
        return float(self.f.value(x) + self.g.value(x) + self.h.value(self.A @ x))

    def operator(self, eta, gamma, swapped=False, check_metric=True):
        key = (float(eta), float(gamma), bool(swapped))
        if key not in self._ops:
            self._ops[key] = CondatVuOperator(self, eta, gamma, swapped, check_metric)
        return self._ops[key]


@dataclass
class PrimalDualState:
    x: np.ndarray
    s: np.ndarray
    eta: float
    gamma: float
    cache: MaintainedCache | None = None
    swapped: bool = False

    @property
    def z(self):
        return np.concatenate([self.x, self.s])


def power_norm(A, iters: int = 50, rtol: float = 1e-6, seed: int = 0) -> float:
    """Spectral norm estimate by power iteration on ``A^T A``."""
    n = A.shape[1]
    if n == 0 or A.shape[0] == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = np.sqrt(nw)
        v = w / nw
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return float(est)


@dataclass(frozen=True)
class MetricCheck:
    valid: bool
    norm: float
    margin: float


def validate_metric(A, eta: float, gamma: float, inflation: float = 1.01) -> MetricCheck:
    """Check ``eta gamma ||A||^2 < 1`` with an inflated power-iteration norm."""
    if not (eta > 0 and gamma > 0):
        raise ValueError("eta and gamma must be positive")
    nrm = power_norm(A)
    valid = eta * gamma * (inflation * nrm) ** 2 < 1.0
    return MetricCheck(bool(valid), nrm, 1.0 - eta * gamma * nrm ** 2)


def default_steps(A, lipschitz: float = 0.0) -> tuple:
    """``(eta, gamma)`` with ``1/eta - gamma ||A||^2 = L`` and ``eta gamma ||A||^2 < 1``."""
    nrm = 1.01 * power_norm(A)
    if nrm == 0.0:
        return (1.0 / lipschitz if lipschitz > 0 else 1.0), 1.0
    gamma = 1.0 / nrm
    eta = 1.0 / (nrm + max(lipschitz, 0.05 * nrm))
    return eta, gamma


def metric_matrix(A, eta: float, gamma: float, swapped: bool = False) -> np.ndarray:
    A = A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)
    p, n = A.shape
    sgn = -1.0 if swapped else 1.0
    return np.block([[np.eye(n) / eta, sgn * A.T], [sgn * A, np.eye(p) / gamma]])


def metric_kappa(M: np.ndarray, max_dim: int = 500) -> float:
    if M.shape[0] > max_dim:
        raise ValueError(f"dense eigensolve refused for dimension {M.shape[0]} > {max_dim}")
    w = np.linalg.eigvalsh(M)
    if w[0] <= 0:
        raise MetricError("metric is not positive definite")
    return float(w[-1] / w[0])


def kappa_lemma(op: "CondatVuOperator", M: np.ndarray, z) -> tuple:
    """``(sum_i ||S_i z||_M^2, kappa ||S z||_M^2)`` with ``S = I - T``."""
    z = np.asarray(z, dtype=float)
    Sz = z - op.apply_full(z)
    lhs = 0.0
    for i in range(op.m):
        v = np.zeros_like(z)
        sl = op.partition.slice(i)
        v[sl] = Sz[sl]
        lhs += float(v @ M @ v)
    return lhs, metric_kappa(M) * float(Sz @ M @ Sz)


# ---------------------------------------------------------------------------
# the operator


class CondatVuOperator(FixedPointOperator):
    """``T_CV`` on ``z = [x; s]``.

    Standard ordering (dual first, cache ``Ax``)::

        s' = prox_{gamma h*}(s + gamma A x)
        x' = prox_{eta g}(x - eta (grad f(x) + A^T (2 s' - s)))

    Swapped ordering (primal first, cache ``ATs``)::

        x' = prox_{eta g}(x - eta (grad f(x) + A^T s))
        s' = prox_{gamma h*}(s + gamma A (2 x' - x))
    """

    def __init__(self, prob: PrimalDualProblem, eta: float, gamma: float, swapped: bool = False,
                 check_metric: bool = True, cache_key: str | None = None):
        if not (eta > 0 and gamma > 0):
            raise ValueError("eta and gamma must be positive")
        if check_metric:
            chk = validate_metric(prob.A, eta, gamma)
            if not chk.valid:
                raise MetricError(f"eta*gamma*||A||^2 = {eta * gamma * chk.norm ** 2:.4g} is not below 1")
        self.prob, self.eta, self.gamma, self.swapped = prob, float(eta), float(gamma), swapped
        self.n, self.p = prob.n, prob.p
        self.key = cache_key or ("ATs" if swapped else "Ax")
        self.cache_schema = {self.key: (self.n if swapped else self.p,)}
        part = prob.primal_partition.concat(prob.dual_partition)
        self.mp = prob.primal_partition.m
        full = 2 * matvec_cost(prob.A) + 10 * (self.n + self.p)
        super().__init__(part, OperatorDescriptor(Sep.NON, CF.CACHE, full, None))
        self._plans = {}

    # plans: index sets and submatrices for a set of blocks
    def primal_plan(self, blocks):
        key = ("x", tuple(blocks))
        if key not in self._plans:
            I = self.prob.primal_partition.indices(blocks)
            J = self.prob.rows_touching(I) if not self.swapped else np.zeros(0, np.intp)
            sub = self.prob.submatrix(J, I) if J.size else None
            self._plans[key] = (I, J, sub)
        return self._plans[key]

    def dual_plan(self, blocks):
        key = ("s", tuple(blocks))
        if key not in self._plans:
            J = self.prob.dual_partition.indices(blocks)
            K = self.prob.cols_touching(J) if self.swapped else np.zeros(0, np.intp)
            sub = self.prob.submatrix(J, K) if K.size else None
            self._plans[key] = (J, K, sub)
        return self._plans[key]

    def refresh_plan(self, blocks, primal: bool):
        key = ("r", primal, tuple(blocks))
        if key not in self._plans:
            if primal:
                I = self.prob.primal_partition.indices(blocks)
                C = self.prob.cols(I)
                J = np.unique(C.indices) if self.prob.sparse else np.flatnonzero(np.any(C != 0, axis=1))
                self._plans[key] = (I, J, self.prob.submatrix(J, I))
            else:
                J = self.prob.dual_partition.indices(blocks)
                R = self.prob.rows(J)
                K = np.unique(R.indices) if self.prob.sparse else np.flatnonzero(np.any(R != 0, axis=0))
                self._plans[key] = (J, K, self.prob.submatrix(J, K))
        return self._plans[key]

    # block values of T z from the cache
    def _dual_from_cache(self, s, J, Ax, counter):
        counter.add(2 * len(J) + 4 * len(J))
        return self.prob.prox_hconj(s[J] + self.gamma * Ax[J], self.gamma, J)

    def _primal_from_cache(self, x, I, ATs, counter):
        gr = self.prob.f.grad_entries(x, I, counter)
        counter.add(4 * len(I))
        return self.prob.prox_g(x[I] - self.eta * (gr + ATs[I]), self.eta, I)

    def primal_values(self, x, s, blocks, cache, counter=NULL_COUNTER):
        if self.swapped:
            I = self.prob.primal_partition.indices(blocks)
            return self._primal_from_cache(x, I, cache[self.key], counter)
        I, J, sub = self.primal_plan(blocks)
        gr = self.prob.f.grad_entries(x, I, counter)
        if J.size:
            sbar = self._dual_from_cache(s, J, cache[self.key], counter)
            counter.add(2 * len(J) + matvec_cost(sub))
            r = sub.T @ (2.0 * sbar - s[J])
        else:
            r = 0.0
        counter.add(4 * len(I))
        return self.prob.prox_g(x[I] - self.eta * (gr + r), self.eta, I)

    def dual_values(self, x, s, blocks, cache, counter=NULL_COUNTER):
        if not self.swapped:
            J = self.prob.dual_partition.indices(blocks)
            return self._dual_from_cache(s, J, cache[self.key], counter)
        J, K, sub = self.dual_plan(blocks)
        if K.size:
            xbar = self._primal_from_cache(x, K, cache[self.key], counter)
            counter.add(2 * len(K) + matvec_cost(sub) + 2 * len(J))
            v = s[J] + self.gamma * (sub @ (2.0 * xbar - x[K]))
        else:
            v = s[J].copy()
        counter.add(4 * len(J))
        return self.prob.prox_hconj(v, self.gamma, J)

    def split(self, z):
        return z[:self.n], z[self.n:]

    def apply_full(self, z, counter=NULL_COUNTER):
        x, s = self.split(z)
        A = self.prob.A
        counter.add(2 * matvec_cost(A) + 10 * (self.n + self.p))
        if self.swapped:
            xn = self.prob.prox_g(x - self.eta * (self.prob.f.grad(x) + A.T @ s), self.eta)
            sn = self.prob.prox_hconj(s + self.gamma * (A @ (2.0 * xn - x)), self.gamma)
        else:
            sn = self.prob.prox_hconj(s + self.gamma * (A @ x), self.gamma)
            xn = self.prob.prox_g(x - self.eta * (self.prob.f.grad(x) + A.T @ (2.0 * sn - s)), self.eta)
        return np.concatenate([xn, sn])

    def recompute_cache(self, z):
        x, s = self.split(z)
        return {self.key: (self.prob.A.T @ s) if self.swapped else (self.prob.A @ x)}

    def coordinate(self, z, i, cache, counter=NULL_COUNTER):
        x, s = self.split(z)
        if i < self.mp:
            return self.primal_values(x, s, [i], cache, counter)
        return self.dual_values(x, s, [i - self.mp], cache, counter)

    def refresh_primal(self, cache, blocks, delta, counter=NULL_COUNTER):
        if self.swapped:
            return
        I, J, sub = self.refresh_plan(blocks, True)
        counter.add(matvec_cost(sub))
        cache[self.key][J] += sub @ delta

    def refresh_dual(self, cache, blocks, delta, counter=NULL_COUNTER):
        if not self.swapped:
            return
        J, K, sub = self.refresh_plan(blocks, False)
        counter.add(matvec_cost(sub))
        cache[self.key][K] += sub.T @ delta

    def refresh(self, cache, z, i, old, new, counter=NULL_COUNTER):
        if i < self.mp:
            self.refresh_primal(cache, [i], new - old, counter)
        else:
            self.refresh_dual(cache, [i - self.mp], new - old, counter)

    def objective(self, z):
        return self.prob.objective(z[:self.n])

    def solution(self, z):
        return z[:self.n]


# ---------------------------------------------------------------------------
# functional API


def _op_for(prob, state, swapped):
    return prob.operator(state.eta, state.gamma, swapped)


def _full(prob, state, swapped):
    op = _op_for(prob, state, swapped)
    z = op.apply_full(state.z)
    return replace(state, x=z[:prob.n], s=z[prob.n:], cache=None, swapped=swapped)


def cv_step(prob: PrimalDualProblem, state: PrimalDualState) -> PrimalDualState:
    return _full(prob, state, False)


def cv_swapped_step(prob: PrimalDualProblem, state: PrimalDualState) -> PrimalDualState:
    return _full(prob, state, True)


def init_state(prob, x, s, eta, gamma, swapped=False) -> PrimalDualState:
    op = prob.operator(eta, gamma, swapped)
    st = PrimalDualState(np.array(x, dtype=float), np.array(s, dtype=float), eta, gamma, None, swapped)
    st.cache = op.init_cache(st.z)
    return st


def _coord(prob, state, j, swapped, counter):
    op = _op_for(prob, state, swapped)
    if state.cache is None or not state.cache.valid or op.key not in state.cache:
        raise CacheInvalidError(f"state carries no valid {op.key!r} cache")
    op.partition.check_index(j)
    z = state.z
    v = op.coordinate(z, j, state.cache, counter)
    cache = state.cache.copy()
    sl = op.partition.slice(j)
    old = z[sl].copy()
    z[sl] = v
    op.refresh(cache, z, j, old, z[sl].copy(), counter)
    cache.epoch += 1
    return replace(state, x=z[:prob.n], s=z[prob.n:], cache=cache, swapped=swapped)


def cv_coord_update(prob, state, j, counter=NULL_COUNTER) -> PrimalDualState:
    """Replace block ``j`` of ``z`` (primal blocks first) by ``(T_CV z)_j``."""
    return _coord(prob, state, j, False, counter)


def cv_swapped_coord_update(prob, state, j, counter=NULL_COUNTER) -> PrimalDualState:
    return _coord(prob, state, j, True, counter)


# ---------------------------------------------------------------------------
# linear equality constraints


def emp_step(prob: PrimalDualProblem, state: PrimalDualState) -> PrimalDualState:
    """Jacobi-style step for ``h = indicator of {b}``; ``x'`` does not read ``s'``."""
    if not isinstance(prob.h, EqualityIndicator):
        raise ValueError("emp_step needs h to be an equality indicator")
    A, b = prob.A, np.broadcast_to(prob.h.b, (prob.p,))
    x, s, eta, gamma = state.x, state.s, state.eta, state.gamma
    r = A @ x - b
    sn = s + gamma * r
    xn = prob.prox_g(x - eta * (prob.f.grad(x) + A.T @ s + 2.0 * gamma * (A.T @ r)), eta)
    return replace(state, x=xn, s=sn, cache=None, swapped=False)


class EMPOperator(FixedPointOperator):
    """The same map as coordinates, with caches ``Ax``, ``ATs`` and ``ATAx``."""

    cache_schema = {"Ax": None, "ATs": None, "ATAx": None}

    def __init__(self, prob: PrimalDualProblem, eta: float, gamma: float):
        if not isinstance(prob.h, EqualityIndicator):
            raise ValueError("EMP needs h to be an equality indicator")
        self.prob, self.eta, self.gamma = prob, float(eta), float(gamma)
        self.n, self.p = prob.n, prob.p
        A = prob.A
        self.b = np.broadcast_to(prob.h.b, (self.p,)).astype(float)
        self.G = (A.T @ A)
        self.G = sparse.csc_matrix(self.G) if prob.sparse else np.asarray(self.G)
        self.Atb = A.T @ self.b
        self.mp = prob.primal_partition.m
        super().__init__(prob.primal_partition.concat(prob.dual_partition),
                         OperatorDescriptor(Sep.NON, CF.CACHE, 3 * matvec_cost(A), None))

    def split(self, z):
        return z[:self.n], z[self.n:]

    def apply_full(self, z, counter=NULL_COUNTER):
        x, s = self.split(z)
        st = emp_step(self.prob, PrimalDualState(x, s, self.eta, self.gamma))
        counter.add(3 * matvec_cost(self.prob.A) + 8 * (self.n + self.p))
        return np.concatenate([st.x, st.s])

    def recompute_cache(self, z):
        x, s = self.split(z)
        A = self.prob.A
        return {"Ax": A @ x, "ATs": A.T @ s, "ATAx": self.G @ x}

    def coordinate(self, z, i, cache, counter=NULL_COUNTER):
        x, s = self.split(z)
        if i < self.mp:
            I = self.prob.primal_partition.indices([i])
            gr = self.prob.f.grad_entries(x, I, counter)
            counter.add(8 * len(I))
            v = x[I] - self.eta * (gr + cache["ATs"][I] + 2.0 * self.gamma * (cache["ATAx"][I] - self.Atb[I]))
            return self.prob.prox_g(v, self.eta, I)
        J = self.prob.dual_partition.indices([i - self.mp])
        counter.add(3 * len(J))
        return s[J] + self.gamma * (cache["Ax"][J] - self.b[J])

    def refresh(self, cache, z, i, old, new, counter=NULL_COUNTER):
        d = new - old
        if i < self.mp:
            I = self.prob.primal_partition.indices([i])
            C, G = self.prob.cols(I), self.G[:, I]
            counter.add(matvec_cost(C) + matvec_cost(G))
            cache["Ax"] = cache["Ax"] + C @ d
            cache["ATAx"] = cache["ATAx"] + G @ d
        else:
            J = self.prob.dual_partition.indices([i - self.mp])
            R = self.prob.rows(J)
            counter.add(matvec_cost(R))
            cache["ATs"] = cache["ATs"] + R.T @ d

    def objective(self, z):
        x = z[:self.n]
        return float(self.prob.f.value(x) + self.prob.g.value(x))

    def solution(self, z):
        return z[:self.n]


# ---------------------------------------------------------------------------
# overlapping blocks


class OverlapWeights:
    """Weights ``rho[(i, J)]`` for primal block ``i`` and dual block ``J``.

    For every dual block the weights over the primal blocks touching it sum
    to one.
    """

    def __init__(self, prob: PrimalDualProblem, rho: dict):
        self.prob = prob
        self.rho = {(int(i), int(j)): float(v) for (i, j), v in rho.items()}
        if any(v < 0 for v in self.rho.values()):
            raise ValueError("overlap weights must be nonnegative")
        touching = _touching(prob)
        for j, blocks in touching.items():
            tot = sum(self.rho.get((i, j), 0.0) for i in blocks)
            if abs(tot - 1.0) > 1e-12:
                raise ValueError(f"weights for dual block {j} sum to {tot}, not 1")
        for (i, j) in self.rho:
            if i not in touching.get(j, ()):
                if self.rho[(i, j)] != 0.0:
                    raise ValueError(f"weight on ({i}, {j}) outside the sparsity pattern")
        self._vec = {}

    @classmethod
    def uniform(cls, prob: PrimalDualProblem) -> "OverlapWeights":
        rho = {}
        for j, blocks in _touching(prob).items():
            for i in blocks:
                rho[(i, j)] = 1.0 / len(blocks)
        return cls(prob, rho)

    def vector(self, i: int, J: np.ndarray) -> np.ndarray:
        """Per-entry weights aligned with the dual indices ``J`` of block ``i``."""
        if i not in self._vec:
            ids = self.prob.dual_partition.block_ids()[J]
            self._vec[i] = np.array([self.rho.get((i, int(j)), 0.0) for j in ids])
        return self._vec[i]


def _touching(prob: PrimalDualProblem) -> dict:
    pid = prob.primal_partition.block_ids()
    did = prob.dual_partition.block_ids()
    A = sparse.coo_matrix(prob.A)
    out = {j: set() for j in range(prob.dual_partition.m)}
    for r, c in zip(A.row, A.col):
        out[int(did[r])].add(int(pid[c]))
    return {j: sorted(v) for j, v in out.items() if v}


def overlap_delta(op: CondatVuOperator, x, s, cache, i, weights: OverlapWeights,
                  eta_k: float = 1.0, counter=NULL_COUNTER, allow_empty: bool = False):
    """Increments ``(I, dx, J, ds)`` of one overlapping-block update read from ``(x, s, cache)``."""
    if op.swapped:
        raise ValueError("overlapping blocks use the standard ordering with cache 'Ax'")
    I, J, sub = op.primal_plan([i])
    if J.size == 0 and not allow_empty:
        raise ValueError(f"primal block {i} touches no dual block")
    gr = op.prob.f.grad_entries(x, I, counter)
    if J.size:
        st = op._dual_from_cache(s, J, cache[op.key], counter)
        counter.add(2 * len(J) + matvec_cost(sub))
        r = sub.T @ (2.0 * st - s[J])
    else:
        st, r = np.zeros(0), 0.0
    counter.add(6 * len(I))
    xt = op.prob.prox_g(x[I] - op.eta * (gr + r), op.eta, I)
    dx = eta_k * (xt - x[I])
    if J.size:
        counter.add(4 * len(J))
        ds = eta_k * weights.vector(i, J) * (st - s[J])
    else:
        ds = np.zeros(0)
    return I, dx, J, ds


def overlap_commit(op: CondatVuOperator, x, s, cache, i, I, dx, J, ds, counter=NULL_COUNTER):
    # one indivisible unit: x_i, the touched s_j and the cache delta
    x[I] += dx
    s[J] += ds
    op.refresh_primal(cache, [i], dx, counter)
    cache.epoch += 1


def overlap_block_update(prob: PrimalDualProblem, state: PrimalDualState, i: int,
                         weights: OverlapWeights, eta_k: float = 1.0, counter=NULL_COUNTER,
                         allow_empty: bool = False) -> PrimalDualState:
    op = prob.operator(state.eta, state.gamma, False)
    if state.cache is None or not state.cache.valid or "Ax" not in state.cache:
        raise CacheInvalidError("state carries no valid 'Ax' cache")
    x, s, cache = state.x.copy(), state.s.copy(), state.cache.copy()
    I, dx, J, ds = overlap_delta(op, x, s, cache, i, weights, eta_k, counter, allow_empty)
    overlap_commit(op, x, s, cache, i, I, dx, J, ds, counter)
    return replace(state, x=x, s=s, cache=cache, swapped=False)


class OverlapOperator(FixedPointOperator):
    """Driver adaptor: block ``i`` is primal block ``i`` together with its duals.

    Drivers call :meth:`step_delta` and :meth:`apply_delta` (or :meth:`update`)
    instead of ``coordinate``; the full map is the Condat-Vu operator.
    """

    def __init__(self, prob: PrimalDualProblem, eta, gamma, weights: OverlapWeights | None = None,
                 allow_empty: bool = False):
        self.cv = prob.operator(eta, gamma, False)
        self.weights = weights or OverlapWeights.uniform(prob)
        self.allow_empty = allow_empty
        self.cache_schema = self.cv.cache_schema
        self.n = prob.n
        super().__init__(make_partition([1] * prob.primal_partition.m), self.cv.descriptor)
        self.z_partition = self.cv.partition

    @property
    def dim(self):
        return self.z_partition.total_dim

    def apply_full(self, z, counter=NULL_COUNTER):
        return self.cv.apply_full(z, counter)

    def recompute_cache(self, z):
        return self.cv.recompute_cache(z)

    def step_delta(self, z, i, cache, weight, counter=NULL_COUNTER):
        I, dx, J, ds = overlap_delta(self.cv, z[:self.n], z[self.n:], cache, i, self.weights,
                                     weight, counter, self.allow_empty)
        return np.concatenate([I, self.n + J]), np.concatenate([dx, ds])

    def apply_delta(self, z, cache, i, idx, delta, counter=NULL_COUNTER):
        k = int(np.sum(idx < self.n))
        z[idx] += delta
        self.cv.refresh_primal(cache, [i], delta[:k], counter)
        cache.epoch += 1

    def update(self, z, i, cache, weight, counter=NULL_COUNTER):
        idx, delta = self.step_delta(z, i, cache, weight, counter)
        self.apply_delta(z, cache, i, idx, delta, counter)

    def objective(self, z):
        return self.cv.objective(z)

    def solution(self, z):
        return z[:self.n]
