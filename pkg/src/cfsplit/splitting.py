"""Full-update operator splitting schemes.

Resolvents are passed as one-argument callables with the step already baked
in, i.e. ``J_A(v) = (I + gamma A)^{-1} v``. ``None`` stands for the identity
(resolvent of the zero operator); a missing ``C`` is the zero map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CF, NULL_COUNTER, FixedPointOperator, OperatorDescriptor, Sep,
                   make_partition)


@dataclass
class SplittingConfig:
    gamma: float
    lam: float = 0.5
    eta: float = 1.0
    beta: float | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.beta is not None and not self.gamma < 2 * self.beta:
            raise ValueError(f"gamma={self.gamma} outside (0, 2*beta) for beta={self.beta}")

    @classmethod
    def default(cls, beta: float, **kw) -> "SplittingConfig":
        return cls(gamma=beta, beta=beta, **kw)


def _id(v):
    return np.array(v, dtype=float)


def _J(J):
    return _id if J is None else J


def _C(C):
    return (lambda v: np.zeros_like(v)) if C is None else C


def _gamma(g):
    g = g.gamma if isinstance(g, SplittingConfig) else g
    if not g > 0:
        raise ValueError("gamma must be positive")
    return float(g)


def reflection(J):
    J = _J(J)
    return lambda v: 2.0 * J(v) - v


def threeop_step(J_A, J_B, C, cfg, x):
    """``x - J_B x + J_A(2 J_B x - x - gamma C J_B x)``."""
    g = _gamma(cfg)
    x = np.asarray(x, dtype=float)
    xb = _J(J_B)(x)
    return x - xb + _J(J_A)(2.0 * xb - x - g * _C(C)(xb))


def threeop_solution(J_B, x):
    return _J(J_B)(x)


def fbs_step(J_A, C, gamma, x):
    g = _gamma(gamma)
    x = np.asarray(x, dtype=float)
    return _J(J_A)(x - g * _C(C)(x))


def bfs_step(J_B, C, gamma, x):
    g = _gamma(gamma)
    xb = _J(J_B)(np.asarray(x, dtype=float))
    return xb - g * _C(C)(xb)


def drs_step(J_A, J_B, gamma, x):
    _gamma(gamma)
    x = np.asarray(x, dtype=float)
    xb = _J(J_B)(x)
    return x - xb + _J(J_A)(2.0 * xb - x)


def drs_reflection_step(J_A, J_B, x):
    """The same map written as ``1/2 (I + R_A R_B)``."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (x + reflection(J_A)(reflection(J_B)(x)))


def rprs_step(R_A, R_B, lam, x):
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    R_A = _id if R_A is None else R_A
    R_B = _id if R_B is None else R_B
    return (1.0 - lam) * x + lam * R_A(R_B(x))


def fdrs_step(J_A, P_V, Ct, gamma, x):
    """``x - P_V x + J_A(2 P_V x - x - gamma P_V Ct P_V x)``."""
    g = _gamma(gamma)
    x = np.asarray(x, dtype=float)
    P = _J(P_V)
    px = P(x)
    return x - px + _J(J_A)(2.0 * px - x - g * P(_C(Ct)(px)))


def fbfs_step(J_A, C, gamma, x):
    """Forward-backward-forward step ``gamma C x + (I - gamma C) J_A (I - gamma C) x``."""
    g = _gamma(gamma)
    x = np.asarray(x, dtype=float)
    C = _C(C)
    cx = C(x)
    u = _J(J_A)(x - g * cx)
    return u - g * C(u) + g * cx


def fbfs_default_gamma(lipschitz: float) -> float:
    return 0.9 / lipschitz


def prox_grad_step(grad, prox_g, gamma, x):
    """``prox_{gamma g}(x - gamma grad(x))``; ``prox_g(v, t)``."""
    g = _gamma(gamma)
    x = np.asarray(x, dtype=float)
    v = x - g * grad(x)
    return v if prox_g is None else prox_g(v, g)


def proj_grad_step(grad, proj, gamma, x):
    g = _gamma(gamma)
    x = np.asarray(x, dtype=float)
    v = x - g * grad(x)
    return v if proj is None else proj(v)


@dataclass
class ADMMState:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray


def admm_step(prox_f, prox_g, gamma, state: ADMMState) -> ADMMState:
    """One ADMM sweep for ``min f(x) + g(y)`` s.t. ``x = y``.

    ``prox_f(v, t)`` evaluates the prox of ``t f``.
    """
    g = _gamma(gamma)
    x = prox_f(state.y - g * state.s, g)
    y = prox_g(x + g * state.s, g)
    s = state.s + (x - y) / g
    return ADMMState(x, y, s)


def admm_drs_resolvents(prox_f, prox_g, gamma):
    """Resolvents that make DRS reproduce ADMM with step ``gamma``.

    With ``eta = 1/gamma``, ``A = -df*(-.)`` and ``B = dg*`` give
    ``J_{eta B} = prox_{eta g*}`` and ``J_{eta A}(v) = -prox_{eta f*}(-v)``,
    both obtained from the prox of ``f`` and ``g`` by Moreau's identity.
    The DRS iterate is ``t = s + eta y`` and ``s = J_{eta B}(t)``.
    """
    eta = 1.0 / _gamma(gamma)

    def J_B(t):
        return t - eta * prox_g(t / eta, 1.0 / eta)

    def J_A(v):
        w = -v
        return -(w - eta * prox_f(w / eta, 1.0 / eta))

    def to_drs(y, s):
        return s + eta * y

    def to_admm(t):
        s = J_B(t)
        return (t - s) / eta, s

    return J_A, J_B, to_drs, to_admm


class SchemeOperator(FixedPointOperator):
    """Wrap a full-update step ``x -> T x`` as a fixed-point operator."""

    def __init__(self, step, dim: int, extractor=None, objective=None, partition=None):
        super().__init__(partition or make_partition([1] * dim), OperatorDescriptor(Sep.NON, CF.NONE))
        self._step = step
        self._extract = extractor
        self._objective = objective

    def apply_full(self, x, counter=NULL_COUNTER):
        return np.asarray(self._step(x), dtype=float)

    def solution(self, x):
        return x if self._extract is None else self._extract(x)

    def objective(self, x):
        return None if self._objective is None else self._objective(self.solution(x))


class RelaxedOperator(FixedPointOperator):
    """``(1 - eta) I + eta T`` with the coordinate form ``x_i - eta (x - T x)_i``."""

    def __init__(self, op: FixedPointOperator, eta: float):
        if not 0.0 < eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        self.op, self.eta = op, float(eta)
        self.cache_schema = op.cache_schema
        super().__init__(op.partition, op.descriptor)

    def apply_full(self, x, counter=NULL_COUNTER):
        if self.eta == 1.0:
            return self.op.apply_full(x, counter)
        counter.add(3 * x.size)
        return x - self.eta * (x - self.op.apply_full(x, counter))

    def recompute_cache(self, x):
        return self.op.recompute_cache(x)

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        v = self.op.coordinate(x, i, cache, counter)
        if self.eta == 1.0:
            return v
        xi = x[self.partition.slice(i)]
        counter.add(3 * xi.size)
        return xi - self.eta * (xi - v)

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        self.op.refresh(cache, x, i, old, new, counter)

    def objective(self, x):
        return self.op.objective(x)

    def solution(self, x):
        return self.op.solution(x)


def km_relax(op: FixedPointOperator, eta: float) -> RelaxedOperator:
    return RelaxedOperator(op, eta)


def backtracking_gamma(make_step, x0, gamma0: float, max_halvings: int = 40) -> float:
    """Halve ``gamma`` until one step does not increase the fixed-point residual.

    ``make_step(gamma)`` returns the map ``x -> T x`` for that step.
    """
    x0 = np.asarray(x0, dtype=float)
    g = float(gamma0)
    for _ in range(max_halvings):
        T = make_step(g)
        x1 = T(x0)
        r0 = np.linalg.norm(x0 - x1)
        r1 = np.linalg.norm(x1 - T(x1))
        if np.isfinite(r1) and r1 <= r0:
            return g
        g *= 0.5
    raise RuntimeError("backtracking failed to find a non-increasing step")
