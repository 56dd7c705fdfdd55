"""Least squares, empirical risk minimization, SVM duals, group lasso and
sparse logistic regression."""
from __future__ import annotations

import math

import numpy as np
from scipy import sparse

from ..core import (CF, NULL_COUNTER, ComposedOperator, FixedPointOperator, OperatorDescriptor,
                    Sep, make_linear_gradient, make_partition, matvec_cost, uniform_partition)
from ..primal_dual import PrimalDualProblem, QuadraticSmooth, ZeroSmooth, default_steps, power_norm
from ..prox import (Box, EqualityIndicator, GroupL2Norm, L1Norm, Scaled, Zero, _call,
                    logistic_dphi, logistic_loss, scalar_affine_grad, scalar_affine_refresh)
from .base import ProblemInstance, as_dense, fixed_point_reference


# ---------------------------------------------------------------------------
# least squares


def build_least_squares(A, b, regime: str = "maintain-Tx", partition=None) -> ProblemInstance:
    """Gradient steps on ``1/2 ||Ax - b||^2``.

    The coordinate operator uses the step ``1 / (A^T A)_ii`` per entry; the
    full operator uses ``2 / ||A||_2^2``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    diag = np.einsum("ij,ij->j", A, A)
    if np.any(diag == 0):
        raise ValueError("A has a zero column")
    coord = make_linear_gradient(A, b, 1.0 / diag, regime, partition)
    full = make_linear_gradient(A, b, 2.0 / np.linalg.norm(A, 2) ** 2, "precomputed-normal", partition)

    def oracle():
        return np.linalg.lstsq(A, b, rcond=None)[0]

    return ProblemInstance("least-squares", {"p": A.shape[0], "n": A.shape[1]}, coord,
                           np.zeros(A.shape[1]), coord.objective, oracle, full)


# ---------------------------------------------------------------------------
# empirical risk minimization


def erm_dual_prox(phi, v, gamma: float, p: int, idx=None):
    """``(1/p) prox_{p gamma phi*}(p v)`` through the Moreau identity on ``phi``."""
    sigma = p * gamma
    w = p * np.asarray(v, dtype=float)
    return (w - sigma * _call(phi, w / sigma, 1.0 / sigma, idx)) / p


def build_erm(A, phi, f=None, g=None, eta=None, gamma=None, x_block_size=None) -> ProblemInstance:
    """``min (1/p) sum_j phi_j(a_j^T x) + f(x) + g(x)`` by swapped Condat-Vu.

    Coordinates are the whole ``x`` (or blocks of it) and each dual ``s_j``;
    ``A^T s`` is maintained.
    """
    if phi is None:
        raise ValueError("ERM needs loss handles phi")
    A = A if sparse.issparse(A) else np.atleast_2d(np.asarray(A, dtype=float))
    p, m = A.shape
    f = f or ZeroSmooth()
    g = g or Zero()
    h = Scaled(phi, 1.0 / p)
    xpart = make_partition([m]) if x_block_size is None else uniform_partition(m, x_block_size)
    prob = PrimalDualProblem(A, f, g, h, xpart, make_partition([1] * p))
    if eta is None or gamma is None:
        e0, g0 = default_steps(A, f.lipschitz)
        eta = e0 if eta is None else eta
        gamma = g0 if gamma is None else gamma
    op = prob.operator(eta, gamma, swapped=True)

    def objective(x):
        return float(h.value(A @ x) + f.value(x) + g.value(x))

    def oracle():
        return fixed_point_reference(op, np.zeros(m + p))[:m]

    return ProblemInstance("erm", {"p": p, "m": m}, op, np.zeros(m + p), objective, oracle,
                           extras={"problem": prob, "eta": eta, "gamma": gamma, "phi": phi},
                           unpack=lambda z: z[:m])


# ---------------------------------------------------------------------------
# support vector machine duals


def _check_svm(Q, beta=None):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError("Q must be square")
    if not np.allclose(Q, Q.T, atol=1e-10):
        raise ValueError("Q must be symmetric")
    w = np.linalg.eigvalsh(Q)
    if w[0] < -1e-9 * max(1.0, abs(w[-1])):
        raise ValueError("Q must be positive semidefinite")
    if beta is not None:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (Q.shape[0],) or not np.all(np.abs(beta) == 1):
            raise ValueError("labels must be +1 or -1")
    return Q, beta


def _svm_objective(Q):
    return lambda s: 0.5 * float(s @ Q @ s) - float(np.sum(s))


class SVMUnbiasedOperator(FixedPointOperator):
    """``s -> proj_[0,C](s - Gamma (Q s - e))`` with ``gamma_i = 1/Q_ii``; cache ``Qs``."""

    cache_schema = {"Qs": None}

    def __init__(self, Q, C=np.inf, fallback_step=None, step=None):
        self.Q = np.asarray(Q, dtype=float)
        m = self.Q.shape[0]
        d = np.diag(self.Q).copy()
        if fallback_step is None:
            fallback_step = 1.0 / d.max() if d.max() > 0 else 1.0
        if step is not None:
            # uniform step, used for full (Jacobi) updates
            self.steps = np.full(m, float(step))
        else:
            self.steps = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), fallback_step)
        self.C = float(C)
        super().__init__(make_partition([1] * m),
                         OperatorDescriptor(Sep.NON, CF.CACHE, 2 * m * m + 4 * m, 2 * m + 4))

    def apply_full(self, s, counter=NULL_COUNTER):
        counter.add(matvec_cost(self.Q) + 4 * s.size)
        return np.clip(s - self.steps * (self.Q @ s - 1.0), 0.0, self.C)

    def recompute_cache(self, s):
        return {"Qs": self.Q @ s}

    def coordinate(self, s, i, cache, counter=NULL_COUNTER):
        counter.add(4)
        v = s[i] - self.steps[i] * (cache["Qs"][i] - 1.0)
        return np.clip(np.array([v]), 0.0, self.C)

    def refresh(self, cache, s, i, old, new, counter=NULL_COUNTER):
        counter.add(2 * self.m)
        cache["Qs"] += self.Q[:, i] * (new[0] - old[0])

    def objective(self, s):
        return 0.5 * float(s @ self.Q @ s) - float(np.sum(s))


def build_svm_unbiased(Q, C=np.inf, fallback_step=None) -> ProblemInstance:
    Q, _ = _check_svm(Q)
    op = SVMUnbiasedOperator(Q, C, fallback_step)
    L = np.linalg.norm(Q, 2)
    full = SVMUnbiasedOperator(Q, C, step=1.0 / L if L > 0 else 1.0)
    m = Q.shape[0]

    def oracle():
        return fixed_point_reference(full, np.zeros(m), max_iter=10 ** 6)

    return ProblemInstance("svm-unbiased", {"m": m}, op, np.zeros(m), _svm_objective(Q), oracle, full)


def build_svm_biased_pd(Q, beta, C=np.inf, eta=None, gamma=None) -> ProblemInstance:
    """Condat-Vu on ``min d(s) + i_[0,C](s)`` s.t. ``beta^T s = 0``; maintains ``w = beta^T s``."""
    Q, beta = _check_svm(Q, beta)
    m = Q.shape[0]
    f = QuadraticSmooth(Q, -np.ones(m))
    prob = PrimalDualProblem(beta[None, :], f, Box(0.0, C), EqualityIndicator(0.0),
                             make_partition([1] * m), make_partition([1]))
    if eta is None or gamma is None:
        e0, g0 = default_steps(prob.A, f.lipschitz)
        eta = e0 if eta is None else eta
        gamma = g0 if gamma is None else gamma
    op = prob.operator(eta, gamma)

    def oracle():
        return fixed_point_reference(op, np.zeros(m + 1))[:m]

    return ProblemInstance("svm-biased-pd", {"m": m}, op, np.zeros(m + 1), _svm_objective(Q), oracle,
                           extras={"problem": prob, "eta": eta, "gamma": gamma}, unpack=lambda z: z[:m])


class SVM3SOperator(FixedPointOperator):
    """Relaxed three-operator splitting on ``u`` with ``w = beta~^T u`` maintained.

    ``s = proj_{D2}(u) = u - w beta~`` is the intermediate variable.
    """

    cache_schema = {"w": (1,)}

    def __init__(self, Q, beta, C=np.inf, gamma=None, eta=1.0):
        self.Q = np.asarray(Q, dtype=float)
        self.bt = np.asarray(beta, dtype=float) / np.linalg.norm(beta)
        self.Qbt = self.Q @ self.bt
        self.C = float(C)
        L = np.linalg.norm(self.Q, 2)
        self.gamma = float(gamma) if gamma is not None else (1.0 / L if L > 0 else 1.0)
        if L > 0 and not self.gamma < 2.0 / L:
            raise ValueError(f"gamma must lie below 2/||Q|| = {2.0 / L:g}")
        if not 0 < eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        self.eta = float(eta)
        m = self.Q.shape[0]
        super().__init__(make_partition([1] * m),
                         OperatorDescriptor(Sep.NON, CF.CACHE, 2 * m * m + 12 * m, 2 * m + 16))

    def apply_full(self, u, counter=NULL_COUNTER):
        counter.add(matvec_cost(self.Q) + 12 * u.size)
        s = u - float(self.bt @ u) * self.bt
        v = np.clip(2.0 * s - u - self.gamma * (self.Q @ s - 1.0), 0.0, self.C)
        return u + self.eta * (v - s)

    def recompute_cache(self, u):
        return {"w": np.array([self.bt @ u])}

    def coordinate(self, u, i, cache, counter=NULL_COUNTER):
        w = cache["w"][0]
        counter.add(2 * self.m + 14)
        si = u[i] - w * self.bt[i]
        qs = self.Q[i] @ u - w * self.Qbt[i]
        v = min(max(2.0 * si - u[i] - self.gamma * (qs - 1.0), 0.0), self.C)
        return np.array([u[i] + self.eta * (v - si)])

    def refresh(self, cache, u, i, old, new, counter=NULL_COUNTER):
        counter.add(2)
        cache["w"][0] += self.bt[i] * (new[0] - old[0])

    def solution(self, u):
        return u - float(self.bt @ u) * self.bt

    def objective(self, u):
        s = self.solution(u)
        return 0.5 * float(s @ self.Q @ s) - float(np.sum(s))


def build_svm_biased_3s(Q, beta, C=np.inf, gamma=None, eta=1.0) -> ProblemInstance:
    Q, beta = _check_svm(Q, beta)
    op = SVM3SOperator(Q, beta, C, gamma, eta)
    m = Q.shape[0]

    def oracle():
        return op.solution(fixed_point_reference(op, np.zeros(m)))

    return ProblemInstance("svm-biased-3s", {"m": m}, op, np.zeros(m), _svm_objective(Q), oracle)


def gaussian_kernel(X, sigma: float = 1.0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sq = np.sum(X * X, axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    return np.exp(-D / (2.0 * sigma ** 2))


def svm_gram(K, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    return beta[:, None] * np.asarray(K, dtype=float) * beta[None, :]


# ---------------------------------------------------------------------------
# group lasso


class BlockProxOperator(FixedPointOperator):
    """Separable map ``x_i -> prox_{t_i h_i}(x_i)`` over the blocks of a partition."""

    def __init__(self, partition, handles, steps):
        if len(handles) != partition.m:
            raise ValueError("one prox handle per block is required")
        self.handles = list(handles)
        self.steps = np.broadcast_to(np.asarray(steps, dtype=float), (partition.m,)).copy()
        n = partition.total_dim
        super().__init__(partition, OperatorDescriptor(Sep.SEPARABLE, CF.TYPE1, 4 * n, 4 * n / partition.m))

    def apply_block(self, i, v, counter=NULL_COUNTER):
        counter.add(4 * v.size)
        return _call(self.handles[i], v, self.steps[i], None)

    def apply_full(self, x, counter=NULL_COUNTER):
        out = np.empty_like(x)
        for i in range(self.m):
            sl = self.partition.slice(i)
            out[sl] = self.apply_block(i, x[sl], counter)
        return out

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        return self.apply_block(i, x[self.partition.slice(i)], counter)

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        pass


def _groups(groups, n):
    out = [np.asarray(g, dtype=int) for g in groups]
    if any(g.size == 0 for g in out):
        raise ValueError("empty group")
    cover = np.zeros(n, dtype=int)
    for g in out:
        if g.min() < 0 or g.max() >= n:
            raise ValueError("group index out of range")
        cover[g] += 1
    if np.any(cover == 0):
        raise ValueError("groups must cover every feature")
    return out, cover


def build_group_lasso(A, b, groups, lam, overlapping: bool = False, eta=None, gamma=None) -> ProblemInstance:
    """``min 1/2 ||Ax - b||^2 + sum_i lam_i ||x_{G_i}||``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    gs, cover = _groups(groups, n)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (len(gs),)).copy()
    if np.any(lam < 0):
        raise ValueError("group weights must be nonnegative")
    has_overlap = bool(np.any(cover > 1))
    if has_overlap and not overlapping:
        raise ValueError("groups intersect; pass overlapping=True")

    def objective(x):
        r = A @ x - b
        return 0.5 * float(r @ r) + float(sum(l * np.linalg.norm(x[g]) for l, g in zip(lam, gs)))

    if not overlapping:
        perm = np.concatenate(gs)
        inv = np.argsort(perm)
        Ap = A[:, perm]
        part = make_partition([g.size for g in gs])
        steps = np.array([1.0 / np.linalg.norm(Ap[:, part.slice(i)], 2) ** 2 for i in range(part.m)])
        eta_vec = np.repeat(steps, part.block_sizes)
        inner = make_linear_gradient(Ap, b, eta_vec, "maintain-Ax", part)
        outer = BlockProxOperator(part, [GroupL2Norm([g.size], l) for g, l in zip(gs, lam)], steps)
        op = ComposedOperator(outer, inner)
        op.objective = lambda z: objective(z[inv])
        full_L = np.linalg.norm(A, 2) ** 2
        full = ComposedOperator(
            BlockProxOperator(part, outer.handles, 1.0 / full_L),
            make_linear_gradient(Ap, b, 1.0 / full_L, "maintain-Ax", part))

        def oracle():
            return fixed_point_reference(full, np.zeros(n))[inv]

        return ProblemInstance("group-lasso", {"n": n, "groups": len(gs)}, op, np.zeros(n), objective,
                               oracle, full, extras={"perm": perm, "steps": steps},
                               unpack=lambda z: z[inv])

    rows = np.concatenate(gs)
    U = sparse.csr_matrix((np.ones(rows.size), (np.arange(rows.size), rows)), shape=(rows.size, n))
    f = QuadraticSmooth(A.T @ A, -A.T @ b)
    prob = PrimalDualProblem(U, f, Zero(), GroupL2Norm([g.size for g in gs], lam),
                             make_partition([1] * n), make_partition([g.size for g in gs]))
    if eta is None or gamma is None:
        e0, g0 = default_steps(U, f.lipschitz)
        eta = e0 if eta is None else eta
        gamma = g0 if gamma is None else gamma
    op = prob.operator(eta, gamma)

    def oracle_pd():
        return fixed_point_reference(op, np.zeros(n + rows.size))[:n]

    return ProblemInstance("group-lasso-overlap", {"n": n, "groups": len(gs)}, op, np.zeros(n + rows.size),
                           objective, oracle_pd, extras={"problem": prob, "eta": eta, "gamma": gamma},
                           unpack=lambda z: z[:n])


# ---------------------------------------------------------------------------
# sparse logistic regression


class LogisticL1Operator(FixedPointOperator):
    """Forward-backward map for ``lam ||x||_1 + (1/N) sum log(1 + exp(-b_j a_j^T x))``.

    The cache holds ``A x``; a block update reads one column block of ``A``.
    """

    cache_schema = {"Ax": None}

    def __init__(self, A, labels, lam: float, gamma=None, partition=None):
        labels = np.asarray(labels, dtype=float)
        if not np.all(np.abs(labels) == 1):
            raise ValueError("labels must be +1 or -1")
        self.A = sparse.csc_matrix(A) if sparse.issparse(A) else np.asarray(A, dtype=float)
        N, n = self.A.shape
        if labels.shape != (N,):
            raise ValueError("one label per sample is required")
        self.labels, self.N, self.lam = labels, N, float(lam)
        self.L = power_norm(self.A) ** 2 / (4.0 * N)
        self.gamma = float(gamma) if gamma is not None else (1.0 / self.L if self.L > 0 else 1.0)
        if self.L > 0 and not self.gamma < 2.0 / self.L:
            raise ValueError("gamma must lie below 2/L")
        base = logistic_dphi(labels)
        self.dphi = lambda u: base(u) / N
        part = partition or make_partition([1] * n)
        full = 2 * matvec_cost(self.A) + 6 * n + 4 * N
        super().__init__(part, OperatorDescriptor(Sep.NON, CF.CACHE, full, full / part.m))

    def apply_full(self, x, counter=NULL_COUNTER):
        counter.add(matvec_cost(self.A))
        ax = self.A @ x
        g = scalar_affine_grad(self.A, self.dphi, {"Ax": ax}, None, counter, key="Ax")
        counter.add(6 * x.size)
        v = x - self.gamma * g
        return np.sign(v) * np.maximum(np.abs(v) - self.gamma * self.lam, 0.0)

    def recompute_cache(self, x):
        return {"Ax": self.A @ x}

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        sl = self.partition.slice(i)
        g = scalar_affine_grad(self.A, self.dphi, cache, sl, counter, key="Ax")
        counter.add(6 * (sl.stop - sl.start))
        v = x[sl] - self.gamma * np.ravel(g)
        return np.sign(v) * np.maximum(np.abs(v) - self.gamma * self.lam, 0.0)

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        scalar_affine_refresh(self.A, cache, self.partition.slice(i), new - old, counter, key="Ax")

    def objective(self, x):
        return self.lam * float(np.sum(np.abs(x))) + float(np.mean(logistic_loss(self.A @ x, self.labels)))


def build_logistic_l1(A, labels, lam: float = 1e-4, block_size: int = 50, gamma=None) -> ProblemInstance:
    n = A.shape[1]
    part = uniform_partition(n, min(block_size, n))
    op = LogisticL1Operator(A, labels, lam, gamma, part)

    def oracle():
        return fixed_point_reference(op, np.zeros(n))

    return ProblemInstance("logistic-l1", {"N": A.shape[0], "n": n}, op, np.zeros(n), op.objective, oracle,
                           tol=1e-5)
