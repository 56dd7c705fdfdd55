"""Proximal maps, projections and gradient kernels.

Prox handles used elsewhere in the package follow the signature
``prox(v, t, idx=None)``: the proximal map of ``t * h`` evaluated on the
entries ``idx`` of a separable function (``idx=None`` means all entries).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NULL_COUNTER, CacheInvalidError, matvec_cost


class UnsupportedGeometryError(ValueError):
    pass


def _pos(t, name="t"):
    if not np.all(np.asarray(t) > 0):
        raise ValueError(f"{name} must be positive")


def proj_box(x, lo, hi):
    x = np.asarray(x, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), x.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), x.shape)
    if np.any(lo > hi):
        raise ValueError("box has lo > hi")
    return np.minimum(np.maximum(x, lo), hi)


def prox_l1(x, t):
    _pos(t)
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def proj_l2_ball(x, r):
    if r < 0:
        raise ValueError("radius must be nonnegative")
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm <= r:
        return x.copy()
    return (r / nrm) * x


def proj_linf_ball(x, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    return np.clip(x, -r, r)


def prox_separable_sum(x, handles, t, partition=None):
    """Apply ``handles[i](x_i, t)`` block by block."""
    from .core import BlockVector, as_array

    if isinstance(x, BlockVector):
        partition = x.partition
    data = as_array(x)
    if partition is None:
        raise ValueError("a partition is required for a plain array")
    if len(handles) != partition.m:
        raise ValueError(f"need {partition.m} handles, got {len(handles)}")
    out = np.empty_like(data)
    for i, h in enumerate(handles):
        if h is None:
            raise ValueError(f"missing prox handle for block {i}")
        sl = partition.slice(i)
        out[sl] = h(data[sl], t)
    if isinstance(x, BlockVector):
        return BlockVector(out, partition)
    return out


def prox_conjugate(prox_h, x, gamma, idx=None):
    """``prox_{gamma h*}(x)`` from the prox of ``h`` via the Moreau identity."""
    _pos(gamma, "gamma")
    x = np.asarray(x, dtype=float)
    return x - gamma * _call(prox_h, x / gamma, 1.0 / gamma, idx)


def _call(prox, v, t, idx):
    try:
        return prox(v, t, idx)
    except TypeError:
        return prox(v, t)


# ---------------------------------------------------------------------------
# prox handles with per-entry parameters (signature prox(v, t, idx))


class Zero:
    """``h = 0``."""

    def __call__(self, v, t, idx=None):
        return np.array(v, dtype=float)

    def value(self, x):
        return 0.0


class L1Norm:
    def __init__(self, lam=1.0):
        self.lam = np.asarray(lam, dtype=float)

    def _lam(self, idx):
        return self.lam if self.lam.ndim == 0 or idx is None else self.lam[idx]

    def __call__(self, v, t, idx=None):
        v = np.asarray(v, dtype=float)
        return np.sign(v) * np.maximum(np.abs(v) - t * self._lam(idx), 0.0)

    def value(self, x):
        return float(np.sum(self.lam * np.abs(x)))


class Box:
    """Indicator of ``lo <= x <= hi``."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ValueError("box has lo > hi")

    def _sel(self, a, idx):
        return a if a.ndim == 0 or idx is None else a[idx]

    def __call__(self, v, t, idx=None):
        return np.minimum(np.maximum(v, self._sel(self.lo, idx)), self._sel(self.hi, idx))

    def value(self, x):
        ok = np.all(x >= self.lo - 1e-9) and np.all(x <= self.hi + 1e-9)
        return 0.0 if ok else np.inf


class EqualityIndicator:
    """Indicator of ``{b}``; its conjugate is the linear map ``s -> b^T s``."""

    def __init__(self, b):
        self.b = np.asarray(b, dtype=float)

    def __call__(self, v, t, idx=None):
        b = self.b if idx is None or self.b.ndim == 0 else self.b[idx]
        return np.broadcast_to(b, np.shape(v)).astype(float)

    def value(self, y):
        return 0.0 if np.allclose(y, self.b, atol=1e-9) else np.inf


class SquaredDistance:
    """``h(y) = 1/2 ||y - b||^2`` (weighted per entry by ``w``)."""

    def __init__(self, b, w=1.0):
        self.b = np.asarray(b, dtype=float)
        self.w = np.asarray(w, dtype=float)

    def __call__(self, v, t, idx=None):
        b = self.b if idx is None else self.b[idx]
        w = self.w if self.w.ndim == 0 or idx is None else self.w[idx]
        return (v + t * w * b) / (1.0 + t * w)

    def value(self, y):
        return 0.5 * float(np.sum(self.w * (y - self.b) ** 2))


class GroupL2Norm:
    """``h(y) = sum_g lam_g ||y_g||`` over contiguous groups given by offsets."""

    def __init__(self, sizes, lam):
        self.sizes = [int(s) for s in sizes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.lam = np.broadcast_to(np.asarray(lam, dtype=float), (len(self.sizes),)).copy()
        self._group = np.repeat(np.arange(len(self.sizes)), self.sizes)

    def __call__(self, v, t, idx=None):
        v = np.array(v, dtype=float)
        idx = np.arange(self.offsets[-1]) if idx is None else np.arange(self.offsets[-1])[idx]
        out = v.copy()
        groups = np.unique(self._group[idx])
        for g in groups:
            sel = self._group[idx] == g
            if sel.sum() != self.sizes[g]:
                raise ValueError("group prox needs whole groups")
            u = v[sel]
            nrm = np.linalg.norm(u)
            thr = t * self.lam[g]
            out[sel] = 0.0 if nrm <= thr else (1 - thr / nrm) * u
        return out

    def value(self, y):
        return float(sum(self.lam[g] * np.linalg.norm(y[self.offsets[g]:self.offsets[g + 1]])
                         for g in range(len(self.sizes))))


class Scaled:
    """``scale * h`` for a separable handle ``h``."""

    def __init__(self, handle, scale: float):
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.handle, self.scale = handle, float(scale)

    def __call__(self, v, t, idx=None):
        return _call(self.handle, v, t * self.scale, idx)

    def value(self, y):
        return self.scale * self.handle.value(y)


class Stacked:
    """Separable sum of handles acting on consecutive index ranges."""

    def __init__(self, parts):
        self.handles = [h for h, _ in parts]
        self.sizes = [int(n) for _, n in parts]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self._part = np.repeat(np.arange(len(self.sizes)), self.sizes)

    def __call__(self, v, t, idx=None):
        v = np.asarray(v, dtype=float)
        idx = np.arange(self.offsets[-1]) if idx is None else np.arange(self.offsets[-1])[idx]
        out = np.empty_like(v)
        owner = self._part[idx]
        for k in np.unique(owner):
            sel = owner == k
            out[sel] = _call(self.handles[k], v[sel], t, idx[sel] - self.offsets[k])
        return out

    def value(self, y):
        return float(sum(h.value(y[self.offsets[k]:self.offsets[k + 1]])
                         for k, h in enumerate(self.handles)))


class LogisticLoss:
    """``h(u) = sum_j log(1 + exp(-b_j u_j))``."""

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=float)

    def __call__(self, v, t, idx=None):
        b = self.labels if idx is None else self.labels[idx]
        return prox_logistic(v, t, b)

    def value(self, u):
        return float(np.sum(logistic_loss(u, self.labels)))


# ---------------------------------------------------------------------------
# second-order cone


@dataclass
class SocState:
    rho1: float
    rho2: float
    xi1: float
    xi2: float
    tail_sq: float


def _soc_xi(v1, rho1, counter=NULL_COUNTER):
    counter.add(2)
    rho2 = 0.5 * (v1 + rho1)
    if v1 < -rho1:
        return rho2, 0.0, 0.0
    if v1 >= rho1:
        return rho2, 1.0, 1.0
    counter.add(1)
    return rho2, rho2, rho2 / rho1


def soc_state(v) -> SocState:
    v = np.asarray(v, dtype=float)
    tail_sq = float(v[1:] @ v[1:])
    rho1 = np.sqrt(tail_sq)
    rho2, xi1, xi2 = _soc_xi(v[0], rho1)
    return SocState(rho1, rho2, xi1, xi2, tail_sq)


def soc_head(v1, rho1, rho2, xi1) -> float:
    """First entry of the projection: ``xi1 v1`` on the two easy branches, ``rho2`` otherwise."""
    if -rho1 <= v1 < rho1:
        return rho2
    return xi1 * v1


def soc_apply(v, state: SocState) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    u = state.xi2 * v
    u[0] = soc_head(v[0], state.rho1, state.rho2, state.xi1)
    return u


def soc_project(v):
    """Projection onto ``{(t, y): ||y|| <= t}`` and the state that produced it."""
    st = soc_state(v)
    return soc_apply(v, st), st


def soc_state_refresh(v, i: int, nu: float, state: SocState, counter=NULL_COUNTER) -> SocState:
    """State of ``v + (nu - v_i) e_i`` from the state of ``v`` in O(1)."""
    if i == 0:
        rho1, tail_sq, v1 = state.rho1, state.tail_sq, nu
    else:
        vi = v[i]
        counter.add(4)
        tail_sq = state.tail_sq + nu * nu - vi * vi
        if tail_sq < 0.0:
            tail_sq = 0.0
        counter.add(1)
        rho1 = np.sqrt(tail_sq)
        v1 = v[0]
    rho2, xi1, xi2 = _soc_xi(v1, rho1, counter)
    return SocState(rho1, rho2, xi1, xi2, tail_sq)


# ---------------------------------------------------------------------------
# intersection of two halfspaces (budget and return constraints)


class HalfspaceCapState:
    """Geometry of ``D = {a1^T x <= b1, a2^T x >= b2}`` with maintained ``w``.

    ``a1`` and ``a2`` are normalized to unit length (``b1``, ``b2`` scaled
    alongside) and must satisfy ``0 < a1^T a2 < 1``.
    """

    def __init__(self, a1, b1, a2, b2, x=None):
        a1 = np.asarray(a1, dtype=float)
        a2 = np.asarray(a2, dtype=float)
        n1, n2 = np.linalg.norm(a1), np.linalg.norm(a2)
        if n1 == 0 or n2 == 0:
            raise UnsupportedGeometryError("zero normal vector")
        self.a1, self.b1 = a1 / n1, float(b1) / n1
        self.a2, self.b2 = a2 / n2, float(b2) / n2
        c = float(self.a1 @ self.a2)
        if c <= 0 or c >= 1 - 1e-12:
            raise UnsupportedGeometryError(f"need 0 < a1^T a2 < 1, got {c}")
        self.c = c
        self.a3, self.b3 = self.a2 - self.a1 / c, self.b2 - self.b1 / c
        self.a4, self.b4 = self.a1 - self.a2 / c, self.b1 - self.b2 / c
        den = 1.0 - c * c
        self.at1 = (self.a1 - c * self.a2) / den
        self.at2 = (self.a2 - c * self.a1) / den
        self.w1 = self.w2 = 0.0
        if x is not None:
            self.reset(x)

    def reset(self, x) -> None:
        self.w1 = float(self.a1 @ x - self.b1)
        self.w2 = float(self.a2 @ x - self.b2)

    def refresh(self, i, delta, counter=NULL_COUNTER) -> None:
        counter.add(4)
        self.w1 += self.a1[i] * delta
        self.w2 += self.a2[i] * delta

    def region(self, w1=None, w2=None) -> int:
        """Region 1..4 from ``w`` alone; ties go to the earlier region."""
        w1 = self.w1 if w1 is None else w1
        w2 = self.w2 if w2 is None else w2
        c = self.c
        if w1 <= 0 and w2 >= 0:
            return 1
        if w2 <= 0 and w2 - w1 / c >= 0:
            return 2
        if w2 - w1 / c <= 0 and w1 - w2 / c >= 0:
            return 3
        return 4

    def coefficients(self, w1=None, w2=None):
        """``(alpha1, u1, alpha2, u2)`` with ``P_D(x) = x - alpha1 u1 - alpha2 u2``."""
        w1 = self.w1 if w1 is None else w1
        w2 = self.w2 if w2 is None else w2
        r = self.region(w1, w2)
        if r == 1:
            return 0.0, self.a1, 0.0, self.a2
        if r == 2:
            return 0.0, self.a1, w2, self.a2
        if r == 3:
            return w1, self.at1, w2, self.at2
        return w1, self.a1, 0.0, self.a2


def proj_halfspace_cap(x, state: HalfspaceCapState, w=None):
    """Project onto the cap; ``w=(w1, w2)`` overrides the maintained values."""
    x = np.asarray(x, dtype=float)
    if w is None:
        w = (float(state.a1 @ x - state.b1), float(state.a2 @ x - state.b2))
    al1, u1, al2, u2 = state.coefficients(*w)
    return x - al1 * u1 - al2 * u2


# ---------------------------------------------------------------------------
# TV dual prox and gradient kernels


def prox_tv_dual(s, t, gamma, lam, b):
    """Prox of ``gamma h*`` for ``h(p, q) = lam ||p||_1 + 1/2 ||q - b||^2``."""
    _pos(gamma, "gamma")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return np.clip(s, -lam, lam), (np.asarray(t, dtype=float) - gamma * np.asarray(b)) / (1.0 + gamma)


def squared_hinge_value(x, a, beta):
    return 0.5 * max(0.0, 1.0 - beta * float(a @ x)) ** 2


def squared_hinge_grad(a, beta, cache, i=None, counter=NULL_COUNTER):
    """Gradient of ``1/2 max(0, 1 - beta a^T x)^2`` from the cached ``a^T x``.

    ``i=None`` returns the whole gradient.
    """
    if "ax" not in cache:
        raise CacheInvalidError("cache lacks 'ax'")
    counter.add(4)
    r = max(0.0, 1.0 - beta * float(cache["ax"]))
    if i is None:
        return -beta * r * np.asarray(a, dtype=float)
    counter.add(2)
    return -beta * r * a[i]


def squared_hinge_refresh(a, cache, i, delta, counter=NULL_COUNTER):
    counter.add(2)
    cache["ax"] = float(cache["ax"]) + a[i] * delta


def scalar_affine_grad(A, dphi, cache, i=None, counter=NULL_COUNTER, key="Ax+b"):
    """``grad f = A^T dphi(A x + b)`` from the cached ``A x + b``.

    ``dphi`` maps the vector ``A x + b`` to the vector of derivatives. With an
    index ``i`` (int or slice) only those gradient entries are formed.
    """
    if key not in cache:
        raise CacheInvalidError(f"cache lacks {key!r}")
    y = cache[key]
    g = dphi(y)
    counter.add(len(y))
    if i is None:
        counter.add(matvec_cost(A))
        return A.T @ g
    cols = A[:, i]
    counter.add(matvec_cost(cols) if np.ndim(cols) > 1 else 2 * np.size(cols))
    return cols.T @ g


def scalar_affine_refresh(A, cache, i, delta, counter=NULL_COUNTER, key="Ax+b"):
    cols = A[:, i]
    if np.ndim(cols) > 1:
        counter.add(matvec_cost(cols))
        cache[key] = cache[key] + cols @ np.asarray(delta)
    else:
        counter.add(2 * np.size(cols))
        cache[key] = cache[key] + cols * delta


def logistic_dphi(labels):
    """Derivative of ``u -> log(1 + exp(-b u))`` for each label ``b``."""
    labels = np.asarray(labels, dtype=float)

    def dphi(u):
        return -labels * _sigmoid(-labels * u)

    return dphi


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(u, labels):
    return np.logaddexp(0.0, -np.asarray(labels) * u)


def prox_logistic(v, t, labels, iters: int = 50):
    """Prox of ``t * log(1 + exp(-b u))`` entrywise, by safeguarded Newton."""
    v = np.asarray(v, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), v.shape)
    b = np.broadcast_to(np.asarray(labels, dtype=float), v.shape)
    u = v.copy()
    # the minimizer lies between v and v + t*|b|*sign(b)
    lo = np.minimum(v, v + t * b)
    hi = np.maximum(v, v + t * b)
    for _ in range(iters):
        sg = _sigmoid(-b * u)
        g = u - v - t * b * sg
        h = 1.0 + t * b * b * sg * (1.0 - sg)
        lo = np.where(g < 0, u, lo)
        hi = np.where(g > 0, u, hi)
        un = u - g / h
        bad = (un < lo) | (un > hi)
        un = np.where(bad, 0.5 * (lo + hi), un)
        if np.max(np.abs(un - u), initial=0.0) <= 1e-15 * (1.0 + np.max(np.abs(u), initial=0.0)):
            u = un
            break
        u = un
    return u
