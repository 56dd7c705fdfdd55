"""Minimum-risk portfolio by relaxed three-operator splitting."""
from __future__ import annotations

import numpy as np

from ..core import CF, NULL_COUNTER, FixedPointOperator, OperatorDescriptor, Sep, make_partition
from ..prox import HalfspaceCapState, proj_halfspace_cap
from .base import ProblemInstance, fixed_point_reference


class Portfolio3SOperator(FixedPointOperator):
    """``x + eta (proj_{x>=0}(2y - x - gamma Q y) - y)`` with ``y = proj_{D2}(x)``.

    ``D2 = {a1^T x <= b1, a2^T x >= b2}``. The cache holds ``(w1, w2)``; the
    region test and the projection coefficients read only those two numbers,
    and ``Q`` applied to the projection directions is precomputed.
    """

    cache_schema = {"w": (2,)}

    def __init__(self, Q, xi, c: float, gamma: float, eta: float = 0.8):
        self.Q = np.asarray(Q, dtype=float)
        xi = np.asarray(xi, dtype=float)
        m = self.Q.shape[0]
        a1, b1 = np.ones(m) / np.sqrt(m), 1.0 / np.sqrt(m)
        nx = np.linalg.norm(xi)
        if nx == 0:
            raise ValueError("return vector is zero")
        a2, b2 = xi / nx, float(c) / nx
        self.cap = HalfspaceCapState(a1, b1, a2, b2)
        if not gamma > 0 or not 0 < eta <= 1:
            raise ValueError("need gamma > 0 and 0 < eta <= 1")
        self.gamma, self.eta = float(gamma), float(eta)
        cp = self.cap
        self.Qa1, self.Qa2 = self.Q @ cp.a1, self.Q @ cp.a2
        self.Qat1, self.Qat2 = self.Q @ cp.at1, self.Q @ cp.at2
        super().__init__(make_partition([1] * m),
                         OperatorDescriptor(Sep.NON, CF.CACHE, 2 * m * m + 12 * m, 2 * m + 20))

    def _coeffs(self, w1, w2):
        cp = self.cap
        r = cp.region(w1, w2)
        if r == 1:
            return r, 0.0, cp.a1, self.Qa1, 0.0, cp.a2, self.Qa2
        if r == 2:
            return r, 0.0, cp.a1, self.Qa1, w2, cp.a2, self.Qa2
        if r == 3:
            return r, w1, cp.at1, self.Qat1, w2, cp.at2, self.Qat2
        return r, w1, cp.a1, self.Qa1, 0.0, cp.a2, self.Qa2

    def project(self, x):
        return proj_halfspace_cap(x, self.cap)

    def apply_full(self, x, counter=NULL_COUNTER):
        counter.add(2 * self.Q.size + 12 * x.size)
        y = self.project(x)
        v = np.maximum(0.0, 2.0 * y - x - self.gamma * (self.Q @ y))
        return x + self.eta * (v - y)

    def recompute_cache(self, x):
        cp = self.cap
        return {"w": np.array([cp.a1 @ x - cp.b1, cp.a2 @ x - cp.b2])}

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        w1, w2 = cache["w"]
        _, al1, u1, Qu1, al2, u2, Qu2 = self._coeffs(w1, w2)
        counter.add(2 * self.m + 20)
        yi = x[i] - al1 * u1[i] - al2 * u2[i]
        qy = self.Q[i] @ x - al1 * Qu1[i] - al2 * Qu2[i]
        v = max(0.0, 2.0 * yi - x[i] - self.gamma * qy)
        return np.array([x[i] + self.eta * (v - yi)])

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        counter.add(4)
        d = new[0] - old[0]
        cache["w"][0] += self.cap.a1[i] * d
        cache["w"][1] += self.cap.a2[i] * d

    def region(self, cache) -> int:
        return self.cap.region(*cache["w"])

    def solution(self, x):
        return self.project(x)

    def objective(self, x):
        y = self.project(x)
        return 0.5 * float(y @ self.Q @ y)


def portfolio_data(N: int, seed: int = 0, samples: int | None = None):
    """Returns ``xi = 3 rand - 1`` and ``Q = covariance + 0.01 I``."""
    rng = np.random.default_rng(seed)
    xi = 3.0 * rng.random(N) - 1.0
    T = samples or 2 * N
    R = rng.standard_normal((T, N))
    Q = np.cov(R, rowvar=False) + 0.01 * np.eye(N)
    return Q, xi


def build_portfolio(Q, xi, c: float = 0.02, eta: float = 0.8, gamma=None, mode: str = "coordinate") -> ProblemInstance:
    """Coordinate mode defaults to ``gamma = 2 / max Q_ii``, full mode to ``2 / ||Q||_2``."""
    Q = np.asarray(Q, dtype=float)
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q)[0] < -1e-10:
        raise ValueError("Q must be symmetric positive semidefinite")
    g_full = 2.0 / np.linalg.norm(Q, 2)
    g_coord = 2.0 / np.max(np.diag(Q))
    if gamma is None:
        gamma = g_coord if mode == "coordinate" else g_full
    op = Portfolio3SOperator(Q, xi, c, gamma, eta)
    full = Portfolio3SOperator(Q, xi, c, g_full, eta)
    m = Q.shape[0]

    def oracle():
        return full.solution(fixed_point_reference(full, np.zeros(m), tol=1e-13, max_iter=10 ** 6))

    return ProblemInstance("portfolio", {"N": m}, op, np.zeros(m), op.objective, oracle, full,
                           extras={"gamma_full": g_full, "gamma_coord": g_coord, "c": c})
