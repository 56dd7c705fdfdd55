"""Second-order cone programs by Douglas-Rachford coordinate updates."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ..core import CF, NULL_COUNTER, FixedPointOperator, OperatorDescriptor, Sep, make_partition
from ..prox import _soc_xi, soc_head
from .base import ProblemInstance, fixed_point_reference


class FactorizationError(np.linalg.LinAlgError):
    pass


def drs_affine_reflection(A, b, c, gamma: float, P=None):
    """``(B, d)`` with ``R(x) = B x + d`` the reflection of the affine resolvent.

    The resolvent solves ``min c^T y + 1/2 y^T P y + 1/(2 gamma) ||y - x||^2``
    subject to ``A y = b`` through its KKT system.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    p, n = A.shape
    if np.linalg.matrix_rank(A) < p:
        raise FactorizationError("A must have full row rank")
    c = np.asarray(c, dtype=float)
    P = np.zeros((n, n)) if P is None else np.asarray(P, dtype=float)
    K = np.block([[P + np.eye(n) / gamma, A.T], [A, np.zeros((p, p))]])
    try:
        lu = sla.lu_factor(K)
    except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - singular KKT
        raise FactorizationError(str(exc)) from exc
    rhs = np.vstack([np.eye(n) / gamma, np.zeros((p, n))])
    J = sla.lu_solve(lu, rhs)[:n]
    j0 = sla.lu_solve(lu, np.concatenate([-c, b]))[:n]
    return 2.0 * J - np.eye(n), 2.0 * j0


class SocpDRSOperator(FixedPointOperator):
    """``x -> proj_X(y) + (x - y)/2`` with ``y = B x + d``, block per cone.

    The cache keeps ``y`` and, per cone, the squared norm of its tail, from
    which the projection scalars follow in O(1).
    """

    cache_schema = {"y": None, "tail": None}

    def __init__(self, A, b, c, cones, gamma: float = 1.0, P=None):
        cones = [int(k) for k in cones]
        self.B, self.d = drs_affine_reflection(A, b, c, gamma, P)
        n = self.B.shape[0]
        if sum(cones) != n:
            raise ValueError("cone dimensions must add up to the number of variables")
        self.c = np.asarray(c, dtype=float)
        self.P = None if P is None else np.asarray(P, dtype=float)
        self.gamma = gamma
        part = make_partition(cones)
        self.heads = np.asarray(part.offsets)
        self.cone_of = part.block_ids()
        self.is_tail = np.ones(n, dtype=bool)
        self.is_tail[self.heads] = False
        super().__init__(part, OperatorDescriptor(Sep.NON, CF.CACHE, 2 * n * n + 6 * n, None))

    def _proj_block(self, v, tail_sq, counter=NULL_COUNTER):
        rho1 = np.sqrt(max(tail_sq, 0.0))
        rho2, xi1, xi2 = _soc_xi(v[0], rho1, counter)
        u = xi2 * v
        u[0] = soc_head(v[0], rho1, rho2, xi1)
        return u

    def project(self, v):
        out = np.empty_like(v)
        for i in range(self.m):
            sl = self.partition.slice(i)
            out[sl] = self._proj_block(v[sl], float(v[sl][1:] @ v[sl][1:]))
        return out

    def apply_full(self, x, counter=NULL_COUNTER):
        counter.add(2 * self.B.size + 6 * x.size)
        y = self.B @ x + self.d
        return self.project(y) + 0.5 * (x - y)

    def recompute_cache(self, x):
        y = self.B @ x + self.d
        t = np.where(self.is_tail, y * y, 0.0)
        return {"y": y, "tail": np.bincount(self.cone_of, weights=t, minlength=self.m)}

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        sl = self.partition.slice(i)
        y = cache["y"][sl]
        counter.add(3 * y.size)
        return self._proj_block(y, cache["tail"][i], counter) + 0.5 * (x[sl] - y)

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        sl = self.partition.slice(i)
        cols = self.B[:, sl]
        counter.add(2 * cols.size + 4 * cols.shape[0])
        y = cache["y"]
        ynew = y + cols @ (new - old)
        # O(1) per changed entry: tail_sq += new^2 - old^2
        dt = np.where(self.is_tail, ynew * ynew - y * y, 0.0)
        cache["tail"] = np.maximum(cache["tail"] + np.bincount(self.cone_of, weights=dt, minlength=self.m), 0.0)
        cache["y"] = ynew

    def solution(self, x):
        return 0.5 * (x + self.B @ x + self.d)

    def objective(self, x):
        u = self.solution(x)
        val = float(self.c @ u)
        if self.P is not None:
            val += 0.5 * float(u @ self.P @ u)
        return val


def build_socp_drs(A, b, c, cones, gamma: float = 1.0, P=None) -> ProblemInstance:
    op = SocpDRSOperator(A, b, c, cones, gamma, P)
    n = op.dim

    def oracle():
        return op.solution(fixed_point_reference(op, np.zeros(n)))

    A = np.atleast_2d(np.asarray(A, dtype=float))
    def objective(u):
        val = float(op.c @ u)
        return val if op.P is None else val + 0.5 * float(u @ op.P @ u)

    return ProblemInstance("socp", {"n": n, "cones": op.m, "rows": A.shape[0]}, op, np.zeros(n),
                           objective, oracle, extras={"A": A, "b": np.asarray(b, dtype=float)})
