"""Anisotropic TV reconstruction and mesh denoising."""
from __future__ import annotations

import numpy as np
from scipy import sparse

from ..core import NULL_COUNTER, FixedPointOperator, make_partition
from ..primal_dual import (CondatVuOperator, OverlapOperator, OverlapWeights, PrimalDualProblem,
                           SeparableQuadratic)
from ..prox import Box, L1Norm, SquaredDistance, Stacked, Zero
from .base import ProblemInstance, fixed_point_reference


def grid_gradient(rows: int, cols: int) -> sparse.csr_matrix:
    """Forward differences on a row-major grid.

    Row ``2i`` is the horizontal and row ``2i + 1`` the vertical difference at
    pixel ``i``; differences leaving the grid are zero rows.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be positive")
    n = rows * cols
    r, c, v = [], [], []
    for i in range(n):
        y, x = divmod(i, cols)
        if x + 1 < cols:
            r += [2 * i, 2 * i]
            c += [i, i + 1]
            v += [-1.0, 1.0]
        if y + 1 < rows:
            r += [2 * i + 1, 2 * i + 1]
            c += [i, i + cols]
            v += [-1.0, 1.0]
    return sparse.csr_matrix((v, (r, c)), shape=(2 * n, n))


def sampling_operator(n: int, fraction: float, seed: int = 0) -> sparse.csr_matrix:
    """Random row sampling: a subset of the rows of the identity."""
    rng = np.random.default_rng(seed)
    k = max(1, int(round(fraction * n)))
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return sparse.csr_matrix((np.ones(k), (np.arange(k), idx)), shape=(k, n))


class BundledOperator(FixedPointOperator):
    """Condat-Vu operator whose blocks bundle primal and dual blocks.

    ``bundles`` is a list of ``(primal_blocks, dual_blocks)``. The iterate is
    stored in the permuted order in which every bundle is contiguous; all
    values of a bundle are computed from the same snapshot.
    """

    def __init__(self, cv: CondatVuOperator, bundles):
        self.cv = cv
        self.bundles = [(list(p), list(d)) for p, d in bundles]
        pp, dp = cv.prob.primal_partition, cv.prob.dual_partition
        seen_p = sorted(b for p, _ in self.bundles for b in p)
        seen_d = sorted(b for _, d in self.bundles for b in d)
        if seen_p != list(range(pp.m)) or seen_d != list(range(dp.m)):
            raise ValueError("bundles must cover every primal and dual block exactly once")
        n = cv.n
        self.perm = np.concatenate([np.concatenate([pp.indices(p), n + dp.indices(d)])
                                    for p, d in self.bundles]).astype(np.intp)
        self.inv = np.argsort(self.perm)
        sizes = [len(pp.indices(p)) + len(dp.indices(d)) for p, d in self.bundles]
        self.cache_schema = cv.cache_schema
        super().__init__(make_partition(sizes), cv.descriptor)

    def to_standard(self, zp):
        return zp[self.inv]

    def from_standard(self, z):
        return z[self.perm]

    def apply_full(self, zp, counter=NULL_COUNTER):
        return self.from_standard(self.cv.apply_full(self.to_standard(zp), counter))

    def recompute_cache(self, zp):
        return self.cv.recompute_cache(self.to_standard(zp))

    def coordinate(self, zp, i, cache, counter=NULL_COUNTER):
        z = self.to_standard(zp)
        x, s = self.cv.split(z)
        p, d = self.bundles[i]
        parts = []
        if p:
            parts.append(self.cv.primal_values(x, s, p, cache, counter))
        if d:
            parts.append(self.cv.dual_values(x, s, d, cache, counter))
        return np.concatenate(parts)

    def refresh(self, cache, zp, i, old, new, counter=NULL_COUNTER):
        p, d = self.bundles[i]
        k = len(self.cv.prob.primal_partition.indices(p))
        delta = new - old
        if p:
            self.cv.refresh_primal(cache, p, delta[:k], counter)
        if d:
            self.cv.refresh_dual(cache, d, delta[k:], counter)

    def objective(self, zp):
        return self.cv.objective(self.to_standard(zp))

    def solution(self, zp):
        return self.to_standard(zp)[:self.cv.n]


def tv_objective(D, A, b, lam):
    def obj(x):
        r = A @ x - b
        return lam * float(np.abs(D @ x).sum()) + 0.5 * float(r @ r)
    return obj


def build_tv_reconstruction(A, b, lam: float, shape, eta=None, gamma=None) -> ProblemInstance:
    """``min lam ||grad x||_1 + 1/2 ||Ax - b||^2`` by swapped Condat-Vu on ``B = [grad; A]``.

    Coordinate mode bundles one image column of ``x`` with the gradient rows
    of its pixels and the measurement rows that sample them. ``A`` must be a
    row-sampling operator for the bundling (one nonzero per row); a general
    ``A`` assigns each row to the column of its largest entry.
    """
    if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
        raise ValueError("shape must be a 2-D grid (rows, cols)")
    rows, cols = int(shape[0]), int(shape[1])
    n = rows * cols
    A = sparse.csr_matrix(A)
    if A.shape[1] != n:
        raise ValueError(f"A has {A.shape[1]} columns, grid has {n} pixels")
    b = np.asarray(b, dtype=float)
    D = grid_gradient(rows, cols)
    B = sparse.vstack([D, A]).tocsr()
    h = Stacked([(L1Norm(lam), 2 * n), (SquaredDistance(b), A.shape[0])])
    prob = PrimalDualProblem(B, None, Zero(), h, make_partition([1] * n), make_partition([1] * B.shape[0]))
    if eta is None or gamma is None:
        nrm = np.sqrt(8.0 + 1.0) if A.shape[0] else np.sqrt(8.0)
        gamma = 1.0 / nrm if gamma is None else gamma
        eta = 0.95 / (gamma * nrm * nrm) if eta is None else eta
    cv = prob.operator(eta, gamma, swapped=True)
    owner = np.asarray(abs(A).argmax(axis=1)).ravel() if A.shape[0] else np.zeros(0, int)
    bundles = []
    for c in range(cols):
        pix = [r * cols + c for r in range(rows)]
        duals = [2 * i for i in pix] + [2 * i + 1 for i in pix]
        duals += [2 * n + j for j in np.flatnonzero(owner % cols == c)]
        bundles.append((pix, sorted(duals)))
    op = BundledOperator(cv, bundles)
    obj = tv_objective(D, A, b, lam)
    x0 = np.zeros(n + B.shape[0])

    def oracle(iters: int = 10000):
        z = x0.copy()
        for _ in range(iters):
            z = cv.apply_full(z)
        return z[:n]

    return ProblemInstance("tv", {"rows": rows, "cols": cols, "samples": A.shape[0]}, op, op.from_standard(x0),
                           obj, oracle, full_operator=None,
                           extras={"cv": cv, "problem": prob, "D": D, "eta": eta, "gamma": gamma})


def piecewise_constant_image(rows: int, cols: int, seed: int = 0, pieces: int = 4) -> np.ndarray:
    """Sum of random axis-aligned rectangles with random intensities."""
    rng = np.random.default_rng(seed)
    img = np.zeros((rows, cols))
    for _ in range(pieces):
        r0, r1 = np.sort(rng.integers(0, rows + 1, size=2))
        c0, c1 = np.sort(rng.integers(0, cols + 1, size=2))
        img[r0:r1 + 1, c0:c1 + 1] += rng.uniform(0.2, 1.0)
    return img


# ---------------------------------------------------------------------------
# mesh denoising


def build_mesh_denoise(adjacency, z, lam: float = 0.1, box=(-np.inf, np.inf), weights=1.0,
                       eta=None, gamma=None) -> ProblemInstance:
    """``min sum_i 1/2 w ||x_i - z_i||^2 + box + lam sum_{(i,j)} ||x_i - x_j||_1``.

    One dual ``s_ij`` per ordered adjacent pair; selecting node ``i`` updates
    ``x_i`` and every ``s_ij``, ``s_ji`` with weight one half.
    """
    Adj = np.asarray(adjacency.toarray() if sparse.issparse(adjacency) else adjacency, dtype=float)
    if Adj.ndim != 2 or Adj.shape[0] != Adj.shape[1] or not np.array_equal(Adj != 0, (Adj != 0).T):
        raise ValueError("adjacency must be square and symmetric")
    z = np.asarray(z, dtype=float)
    nn = Adj.shape[0]
    z = z.reshape(nn, -1)
    d = z.shape[1]
    pairs = [(i, j) for i in range(nn) for j in range(nn) if i != j and Adj[i, j] != 0]
    r, c, v = [], [], []
    for k, (i, j) in enumerate(pairs):
        for t in range(d):
            r += [k * d + t, k * d + t]
            c += [i * d + t, j * d + t]
            v += [1.0, -1.0]
    A = sparse.csr_matrix((v, (r, c)), shape=(len(pairs) * d, nn * d))
    f = SeparableQuadratic(weights, z.ravel())
    g = Box(box[0], box[1])
    h = L1Norm(lam)
    dual_part = make_partition([d] * len(pairs)) if pairs else None
    if not pairs:
        raise ValueError("the mesh has no edges")
    prob = PrimalDualProblem(A, f, g, h, make_partition([d] * nn), dual_part)
    if eta is None or gamma is None:
        deg = Adj.astype(bool).sum(axis=1).max()
        nrm = np.sqrt(4.0 * deg)
        gamma = 1.0 / nrm if gamma is None else gamma
        eta = 1.0 / (nrm + f.lipschitz) if eta is None else eta
    op = OverlapOperator(prob, eta, gamma, OverlapWeights.uniform(prob), allow_empty=True)
    x0 = np.concatenate([np.clip(z.ravel(), box[0], box[1]), np.zeros(A.shape[0])])

    def objective(x):
        return float(f.value(x) + g.value(x) + h.value(A @ x))

    def oracle():
        return fixed_point_reference(op.cv, x0)[:nn * d]

    return ProblemInstance("mesh", {"nodes": nn, "dim": d, "pairs": len(pairs)}, op, x0, objective, oracle,
                           extras={"problem": prob, "pairs": pairs, "eta": eta, "gamma": gamma},
                           unpack=lambda zz: zz[:nn * d])
