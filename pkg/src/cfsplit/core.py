"""Block partitions, fixed-point operators with maintained caches, and the
composition calculus for coordinate-friendly operators.

An operator ``T`` acts on a vector split into ``m`` contiguous blocks. Besides
the full application ``T x`` every operator exposes

* ``coordinate(x, i, cache)``: the block ``(T x)_i`` computed from ``x`` and a
  maintained cache ``M(x)``,
* ``refresh(cache, x, i, old, new)``: bring ``M(x)`` up to date after block
  ``i`` of ``x`` changed from ``old`` to ``new`` (``x`` already holds ``new``).

Costs are tracked with :class:`OpCounter`, which counts floating point
operations in the kernels (one per add, multiply, compare or sqrt).
"""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse


class InvalidPartitionError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class CacheInvalidError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# operation counting


class OpCounter:
    """Accumulates counted floating point operations."""

    __slots__ = ("n",)

    def __init__(self) -> None:
        self.n = 0

    def add(self, k) -> None:
        self.n += int(k)

    def reset(self) -> int:
        n, self.n = self.n, 0
        return n


class _NullCounter:
    __slots__ = ()

    def add(self, k) -> None:
        pass


NULL_COUNTER = _NullCounter()


def matvec_cost(M) -> int:
    """Flops of ``M @ v``: one multiply and one add per stored entry."""
    if sparse.issparse(M):
        return 2 * M.nnz
    return 2 * int(np.prod(M.shape))


# ---------------------------------------------------------------------------
# partitions and vectors


@dataclass(frozen=True)
class BlockPartition:
    block_sizes: tuple
    offsets: tuple
    total_dim: int

    @property
    def m(self) -> int:
        return len(self.block_sizes)

    def slice(self, i: int) -> slice:
        self.check_index(i)
        o = self.offsets[i]
        return slice(o, o + self.block_sizes[i])

    def indices(self, blocks: Iterable[int]) -> np.ndarray:
        parts = [np.arange(self.offsets[b], self.offsets[b] + self.block_sizes[b]) for b in blocks]
        if not parts:
            return np.zeros(0, dtype=np.intp)
        return np.concatenate(parts)

    def block_of(self, j: int) -> int:
        """Block containing scalar index ``j``."""
        if not 0 <= j < self.total_dim:
            raise IndexError(f"scalar index {j} out of range")
        return bisect.bisect_right(self.offsets, j) - 1

    def block_ids(self) -> np.ndarray:
        """Block label of every scalar entry."""
        return np.repeat(np.arange(self.m), self.block_sizes)

    def check_index(self, i: int) -> None:
        if not 0 <= i < len(self.block_sizes):
            raise IndexError(f"block index {i} out of range for {self.m} blocks")

    def concat(self, other: "BlockPartition") -> "BlockPartition":
        return make_partition(list(self.block_sizes) + list(other.block_sizes))


def make_partition(sizes: Sequence[int]) -> BlockPartition:
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise InvalidPartitionError("partition needs at least one block")
    if any(s < 1 for s in sizes):
        raise InvalidPartitionError(f"block sizes must be positive, got {sizes}")
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    return BlockPartition(tuple(sizes), tuple(int(o) for o in offsets), int(sum(sizes)))


def uniform_partition(n: int, block_size: int = 1) -> BlockPartition:
    """Split ``n`` entries into ``n // block_size`` blocks of nearly equal size.

    The remainder is spread one entry at a time over the last blocks, so every
    block holds ``block_size`` or ``block_size + 1`` entries.
    """
    if n < 1 or block_size < 1:
        raise InvalidPartitionError("need n >= 1 and block_size >= 1")
    nb = max(n // block_size, 1)
    base, rem = divmod(n, nb)
    return make_partition([base] * (nb - rem) + [base + 1] * rem)


class BlockVector:
    """A real vector together with its block partition."""

    def __init__(self, data, partition: BlockPartition):
        data = np.asarray(data, dtype=float)
        if data.ndim != 1 or data.shape[0] != partition.total_dim:
            raise DimensionError(f"vector of length {data.size} does not match partition of {partition.total_dim}")
        if not np.all(np.isfinite(data)):
            raise ValueError("block vector entries must be finite")
        self.data = data
        self.partition = partition

    def block(self, i: int) -> np.ndarray:
        return self.data[self.partition.slice(i)]

    def set_block(self, i: int, value) -> None:
        self.data[self.partition.slice(i)] = value

    def copy(self) -> "BlockVector":
        return BlockVector(self.data.copy(), self.partition)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def as_array(x) -> np.ndarray:
    if isinstance(x, BlockVector):
        return x.data
    return np.asarray(x, dtype=float)


@dataclass
class MaintainedCache:
    entries: dict = field(default_factory=dict)
    epoch: int = 0
    valid: bool = True

    def copy(self) -> "MaintainedCache":
        return MaintainedCache({k: _copy_entry(v) for k, v in self.entries.items()}, self.epoch, self.valid)

    def __getitem__(self, key):
        return self.entries[key]

    def __setitem__(self, key, value):
        self.entries[key] = value

    def __contains__(self, key):
        return key in self.entries


def _copy_entry(v):
    return v.copy() if hasattr(v, "copy") else v


# ---------------------------------------------------------------------------
# descriptors and the classification calculus


class Sep(str, enum.Enum):
    SEPARABLE = "separable"
    NEARLY = "nearly-separable"
    NON = "non-separable"


class CF(str, enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    CACHE = "cf-with-cache"
    CHEAP = "cheap"
    NONE = "none"


_CF_CLASSES = (CF.TYPE1, CF.TYPE2, CF.CACHE)


@dataclass(frozen=True)
class OperatorDescriptor:
    sep_class: Sep = Sep.NON
    cf_class: CF = CF.NONE
    full_cost: float | None = None
    coord_cost: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "sep_class", Sep(self.sep_class))
        object.__setattr__(self, "cf_class", CF(self.cf_class))
        if self.sep_class is Sep.SEPARABLE and self.cf_class not in _CF_CLASSES:
            raise ValueError("a separable operator is coordinate friendly by definition")

    @property
    def is_cf(self) -> bool:
        return self.cf_class in _CF_CLASSES

    def within_cost_bound(self, m: int, c: float = 4.0) -> bool:
        if self.full_cost is None or self.coord_cost is None:
            raise ValueError("descriptor carries no cost estimates")
        return self.coord_cost * m <= c * self.full_cost


def classify_composition(outer: OperatorDescriptor, inner: OperatorDescriptor,
                         sparsity_certificate: bool = False) -> OperatorDescriptor:
    """Descriptor of ``outer o inner`` from the descriptors of its factors.

    Separability follows the weaker factor. Composing two nearly-separable maps
    is only nearly-separable when the caller certifies the sparsity pattern;
    otherwise it is reported as non-separable.
    """
    so, si = outer.sep_class, inner.sep_class
    if so is Sep.SEPARABLE:
        sep = si
    elif so is Sep.NEARLY:
        if si is Sep.SEPARABLE:
            sep = Sep.NEARLY
        elif si is Sep.NEARLY and sparsity_certificate:
            sep = Sep.NEARLY
        else:
            sep = Sep.NON
    else:
        sep = Sep.NON

    co, ci = outer.cf_class, inner.cf_class
    if so in (Sep.SEPARABLE, Sep.NEARLY) and ci in _CF_CLASSES:
        cf = CF.TYPE1 if ci is CF.TYPE1 else CF.CACHE
    elif si is Sep.SEPARABLE and co in _CF_CLASSES:
        cf = CF.TYPE2 if co is CF.TYPE2 else CF.CACHE
    elif co is CF.TYPE1 and ci is CF.TYPE2:
        cf = CF.CACHE
    elif co is CF.CHEAP and ci is CF.TYPE2:
        cf = CF.CACHE
    elif co is CF.TYPE1 and ci is CF.CHEAP:
        cf = CF.TYPE1
    else:
        cf = CF.NONE
    if sep is Sep.SEPARABLE and cf not in _CF_CLASSES:
        cf = CF.TYPE1
    return OperatorDescriptor(sep, cf)


# ---------------------------------------------------------------------------
# the operator interface


class FixedPointOperator:
    """Base class for operators ``T`` used in fixed-point iterations.

    Subclasses implement :meth:`apply_full` and, when coordinate friendly,
    :meth:`coordinate`, :meth:`recompute_cache` and :meth:`refresh`.
    """

    cache_schema: dict = {}

    def __init__(self, partition: BlockPartition, descriptor: OperatorDescriptor | None = None):
        self.partition = partition
        self.descriptor = descriptor or OperatorDescriptor()

    @property
    def m(self) -> int:
        return self.partition.m

    @property
    def dim(self) -> int:
        return self.partition.total_dim

    def apply_full(self, x: np.ndarray, counter=NULL_COUNTER) -> np.ndarray:
        raise NotImplementedError

    def recompute_cache(self, x: np.ndarray) -> dict:
        return {}

    def init_cache(self, x) -> MaintainedCache:
        x = as_array(x)
        self._check_dim(x)
        return MaintainedCache(self.recompute_cache(x))

    def coordinate(self, x: np.ndarray, i: int, cache: MaintainedCache, counter=NULL_COUNTER) -> np.ndarray:
        # fallback for operators that are not coordinate friendly
        y = self.apply_full(x, counter)
        return y[self.partition.slice(i)]

    def refresh(self, cache: MaintainedCache, x: np.ndarray, i: int, old: np.ndarray, new: np.ndarray,
                counter=NULL_COUNTER) -> None:
        if self.cache_schema:
            cache.entries.update(self.recompute_cache(x))

    def objective(self, x: np.ndarray) -> float | None:
        return None

    def solution(self, x: np.ndarray) -> np.ndarray:
        """Map a fixed point to the solution of the underlying problem."""
        return x

    def scores(self, x: np.ndarray, cache: MaintainedCache) -> np.ndarray | None:
        """Per-block greedy scores, when they are cheap to read off the cache."""
        return None

    def _check_dim(self, x: np.ndarray) -> None:
        if x.ndim != 1 or x.shape[0] != self.dim:
            raise DimensionError(f"expected a vector of length {self.dim}, got shape {x.shape}")


def apply_full(op: FixedPointOperator, x, counter=NULL_COUNTER) -> np.ndarray:
    x = as_array(x)
    op._check_dim(x)
    return op.apply_full(x, counter)


def _check_cache(op: FixedPointOperator, cache: MaintainedCache) -> None:
    if cache is None or not cache.valid:
        raise CacheInvalidError("cache is stale or uninitialized")
    missing = [k for k in op.cache_schema if k not in cache.entries]
    if missing:
        raise CacheInvalidError(f"cache lacks entries {missing}")


def apply_coordinate(op: FixedPointOperator, x, i: int, cache: MaintainedCache,
                     counter=NULL_COUNTER):
    """Return ``((T x)_i, M(x+))`` where ``x+`` replaces block ``i`` by ``(T x)_i``.

    Neither ``x`` nor ``cache`` is modified.
    """
    x = as_array(x)
    op._check_dim(x)
    op.partition.check_index(i)
    _check_cache(op, cache)
    value = np.array(op.coordinate(x, i, cache, counter), dtype=float)
    xp = x.copy()
    new_cache = cache.copy()
    commit(op, xp, i, value, new_cache, counter)
    return value, new_cache


def commit(op: FixedPointOperator, x: np.ndarray, i: int, value, cache: MaintainedCache,
           counter=NULL_COUNTER) -> None:
    """Write block ``i`` of ``x`` in place and refresh ``cache``."""
    sl = op.partition.slice(i)
    old = x[sl].copy()
    x[sl] = value
    op.refresh(cache, x, i, old, x[sl].copy(), counter)
    cache.epoch += 1


def cache_audit(op: FixedPointOperator, x, cache: MaintainedCache) -> float:
    """Largest ``||cached - recomputed|| / (1 + ||recomputed||)`` over the schema."""
    x = as_array(x)
    ref = op.recompute_cache(x)
    worst = 0.0
    for key in op.cache_schema:
        if key not in cache.entries:
            raise KeyError(f"cache has no entry {key!r}")
        c = np.asarray(cache.entries[key], dtype=float)
        r = np.asarray(ref[key], dtype=float)
        d = float(np.linalg.norm(c - r) / (1.0 + np.linalg.norm(r)))
        # a non-finite deviation must not be swallowed by max()
        worst = max(worst, d) if np.isfinite(d) else np.inf
    return worst


def measure_costs(op: FixedPointOperator, x, blocks: Iterable[int] | None = None) -> tuple:
    """Counted flops of one full application and of coordinate updates.

    Returns ``(full, mean_coordinate, max_coordinate)``; a coordinate update
    includes the cache refresh of a commit.
    """
    x = as_array(x).copy()
    c = OpCounter()
    op.apply_full(x, c)
    full = c.reset()
    cache = op.init_cache(x)
    blocks = range(op.m) if blocks is None else list(blocks)
    costs = []
    for i in blocks:
        v = op.coordinate(x, i, cache, c)
        commit(op, x, i, v, cache, c)
        costs.append(c.reset())
    return full, float(np.mean(costs)), float(max(costs))


# ---------------------------------------------------------------------------
# elementary operators


def _default_partition(n: int, partition: BlockPartition | None) -> BlockPartition:
    if partition is None:
        return make_partition([1] * n)
    if partition.total_dim != n:
        raise DimensionError("partition does not match operator dimension")
    return partition


class IdentityOperator(FixedPointOperator):
    def __init__(self, n: int | BlockPartition):
        part = n if isinstance(n, BlockPartition) else make_partition([1] * n)
        super().__init__(part, OperatorDescriptor(Sep.SEPARABLE, CF.TYPE1, 0, 0))

    def apply_full(self, x, counter=NULL_COUNTER):
        return x.copy()

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        return x[self.partition.slice(i)].copy()

    def apply_block(self, i, v, counter=NULL_COUNTER):
        return v.copy()

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        pass


class DiagonalOperator(FixedPointOperator):
    """``T x = d * x + c``; separable, coordinate cost independent of ``m``."""

    def __init__(self, d, c=None, partition: BlockPartition | None = None):
        self.d = np.asarray(d, dtype=float).ravel()
        n = self.d.size
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float).ravel()
        super().__init__(_default_partition(n, partition),
                         OperatorDescriptor(Sep.SEPARABLE, CF.TYPE1, 2 * n, 2 * n / max(1, n)))

    def apply_full(self, x, counter=NULL_COUNTER):
        counter.add(2 * x.size)
        return self.d * x + self.c

    def apply_block(self, i, v, counter=NULL_COUNTER):
        sl = self.partition.slice(i)
        counter.add(2 * v.size)
        return self.d[sl] * v + self.c[sl]

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        return self.apply_block(i, x[self.partition.slice(i)], counter)

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        pass


class MatrixOperator(FixedPointOperator):
    """Affine map ``T x = M x + c``.

    Dense ``M`` is Type-I (one row per coordinate), or Type-II when
    ``maintain=True`` keeps ``T x`` in the cache. Sparse ``M`` with few
    nonzeros per row is nearly-separable.
    """

    def __init__(self, M, c=None, partition: BlockPartition | None = None, maintain: bool = False):
        if M.shape[0] != M.shape[1]:
            raise DimensionError("fixed-point operators map a space into itself")
        self.sparse = sparse.issparse(M)
        self.M = sparse.csr_matrix(M) if self.sparse else np.asarray(M, dtype=float)
        self.Mc = self.M.tocsc() if self.sparse else self.M
        n = M.shape[0]
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float).ravel()
        self.maintain = maintain
        self.cache_schema = {"Tx": (n,)} if maintain else {}
        part = _default_partition(n, partition)
        full = matvec_cost(self.M) + n
        if self.sparse:
            desc = OperatorDescriptor(Sep.NEARLY, CF.TYPE2 if maintain else CF.TYPE1, full, full / part.m)
        else:
            desc = OperatorDescriptor(Sep.NON, CF.TYPE2 if maintain else CF.TYPE1, full, full / part.m)
        super().__init__(part, desc)

    def apply_full(self, x, counter=NULL_COUNTER):
        counter.add(matvec_cost(self.M) + x.size)
        return self.M @ x + self.c

    def entries(self, x, idx, counter=NULL_COUNTER) -> np.ndarray:
        """Entries ``(T x)[idx]`` without forming ``T x``."""
        rows = self.M[idx]
        counter.add(matvec_cost(rows) + len(idx))
        return rows @ x + self.c[idx]

    def support(self, i: int) -> np.ndarray:
        """Scalar indices of ``x`` that block ``i`` of ``T x`` depends on."""
        rows = self.M[self.partition.slice(i)]
        if self.sparse:
            return np.unique(rows.indices)
        return np.flatnonzero(np.any(rows != 0, axis=0))

    def rows_apply(self, i: int, y, counter=NULL_COUNTER) -> np.ndarray:
        sl = self.partition.slice(i)
        rows = self.M[sl]
        counter.add(matvec_cost(rows) + rows.shape[0])
        return rows @ y + self.c[sl]

    def recompute_cache(self, x):
        return {"Tx": self.M @ x + self.c} if self.maintain else {}

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        sl = self.partition.slice(i)
        if self.maintain:
            return cache["Tx"][sl].copy()
        rows = self.M[sl]
        counter.add(matvec_cost(rows) + rows.shape[0])
        return rows @ x + self.c[sl]

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        if not self.maintain:
            return
        sl = self.partition.slice(i)
        cols = self.Mc[:, sl]
        counter.add(matvec_cost(cols) + len(old))
        cache["Tx"] += cols @ (new - old)


class LinearGradientOperator(FixedPointOperator):
    """Gradient step ``T x = x - eta * A^T (A x - b)`` for least squares.

    ``eta`` is a scalar or one step per entry. Regimes:

    ``precomputed-normal``
        rows of ``A^T A`` and ``A^T b`` are stored, no cache.
    ``maintain-Tx``
        the cache holds ``T x`` and is refreshed with a column of ``A^T A``.
    ``maintain-Ax``
        the cache holds ``A x`` and is refreshed with a column of ``A``.
    """

    REGIMES = ("precomputed-normal", "maintain-Tx", "maintain-Ax")

    def __init__(self, A, b, eta, regime: str = "maintain-Ax", partition: BlockPartition | None = None):
        if regime not in self.REGIMES:
            raise ValueError(f"unknown regime {regime!r}")
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.size == 0:
            raise DimensionError("A must be a nonempty matrix")
        self.A = A
        self.b = np.asarray(b, dtype=float).ravel()
        if self.b.size != A.shape[0]:
            raise DimensionError("b must have one entry per row of A")
        p, n = A.shape
        eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
        if np.any(eta <= 0):
            raise ValueError("step sizes must be positive")
        self.eta = eta
        self.regime = regime
        self.Atb = A.T @ self.b
        if regime in ("precomputed-normal", "maintain-Tx"):
            self.G = A.T @ A
        part = _default_partition(n, partition)
        full = 4 * p * n + 3 * n
        if regime == "maintain-Ax":
            self.cache_schema = {"Ax": (p,)}
            coord = 4 * p + 4
            cf = CF.CACHE
        elif regime == "maintain-Tx":
            self.cache_schema = {"Tx": (n,)}
            coord = 3 * n + 1
            cf = CF.TYPE2
        else:
            self.cache_schema = {}
            coord = 2 * n + 3
            cf = CF.TYPE1
        super().__init__(part, OperatorDescriptor(Sep.NON, cf, full, coord * n / part.m))

    def apply_full(self, x, counter=NULL_COUNTER):
        p, n = self.A.shape
        counter.add(4 * p * n + 3 * n)
        return x - self.eta * (self.A.T @ (self.A @ x - self.b))

    def gradient(self, x):
        return self.A.T @ (self.A @ x - self.b)

    def recompute_cache(self, x):
        if self.regime == "maintain-Ax":
            return {"Ax": self.A @ x}
        if self.regime == "maintain-Tx":
            return {"Tx": x - self.eta * (self.G @ x - self.Atb)}
        return {}

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        sl = self.partition.slice(i)
        k = sl.stop - sl.start
        if self.regime == "maintain-Tx":
            return cache["Tx"][sl].copy()
        if self.regime == "maintain-Ax":
            cols = self.A[:, sl]
            counter.add(2 * cols.size + 3 * k)
            return x[sl] - self.eta[sl] * (cols.T @ cache["Ax"] - self.Atb[sl])
        rows = self.G[sl]
        counter.add(2 * rows.size + 3 * k)
        return x[sl] - self.eta[sl] * (rows @ x - self.Atb[sl])

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        sl = self.partition.slice(i)
        delta = new - old
        if self.regime == "maintain-Ax":
            cols = self.A[:, sl]
            counter.add(2 * cols.size)
            cache["Ax"] += cols @ delta
        elif self.regime == "maintain-Tx":
            cols = self.G[:, sl]
            counter.add(2 * cols.size + 2 * cols.shape[0] + len(delta))
            tx = cache["Tx"]
            tx[sl] += delta
            tx -= self.eta * (cols @ delta)

    def objective(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)

    def scores(self, x, cache):
        # |grad_i f| scaled by the step, read off the maintained T x
        if self.regime != "maintain-Tx":
            return None
        d = (x - cache["Tx"]) / self.eta
        if all(s == 1 for s in self.partition.block_sizes):
            return np.abs(d)
        return np.sqrt(np.add.reduceat(d * d, np.asarray(self.partition.offsets)))


def make_linear_gradient(A, b, eta, regime: str = "maintain-Ax",
                         partition: BlockPartition | None = None) -> LinearGradientOperator:
    return LinearGradientOperator(A, b, eta, regime, partition)


class ComposedOperator(FixedPointOperator):
    """``T = outer o inner`` with a coordinate strategy chosen from the factors.

    ``separable-outer``
        ``(T x)_i = outer_i((inner x)_i)``; cache is the inner cache.
    ``sparse-outer``
        outer is a sparse matrix; ``(T x)_i`` needs the entries of ``inner x``
        on the support of row ``i`` only (inner must expose ``entries``).
    ``maintained-inner``
        inner is a Type-II matrix map keeping ``inner x`` in its cache; outer
        reads one row against it.
    """

    def __init__(self, outer: FixedPointOperator, inner: FixedPointOperator,
                 sparsity_certificate: bool = False):
        if outer.dim != inner.dim:
            raise DimensionError("factors act on spaces of different dimension")
        self.outer, self.inner = outer, inner
        desc = classify_composition(outer.descriptor, inner.descriptor, sparsity_certificate)
        so, si = outer.descriptor, inner.descriptor
        if so.sep_class is Sep.SEPARABLE and hasattr(outer, "apply_block"):
            self.strategy = "separable-outer"
        elif isinstance(outer, MatrixOperator) and outer.sparse and hasattr(inner, "entries"):
            self.strategy = "sparse-outer"
        elif isinstance(inner, MatrixOperator) and inner.maintain and hasattr(outer, "rows_apply"):
            self.strategy = "maintained-inner"
        else:
            self.strategy = "full"
        self.cache_schema = dict(inner.cache_schema) if self.strategy in ("separable-outer", "maintained-inner") else {}
        super().__init__(inner.partition, desc)

    def apply_full(self, x, counter=NULL_COUNTER):
        return self.outer.apply_full(self.inner.apply_full(x, counter), counter)

    def recompute_cache(self, x):
        if self.cache_schema:
            return self.inner.recompute_cache(x)
        return {}

    def coordinate(self, x, i, cache, counter=NULL_COUNTER):
        if self.strategy == "separable-outer":
            return self.outer.apply_block(i, self.inner.coordinate(x, i, cache, counter), counter)
        if self.strategy == "sparse-outer":
            sup = self.outer.support(i)
            y = np.zeros(self.dim)
            y[sup] = self.inner.entries(x, sup, counter)
            sl = self.partition.slice(i)
            rows = self.outer.M[sl][:, sup]
            counter.add(matvec_cost(rows) + rows.shape[0])
            return rows @ y[sup] + self.outer.c[sl]
        if self.strategy == "maintained-inner":
            return self.outer.rows_apply(i, cache["Tx"], counter)
        return super().coordinate(x, i, cache, counter)

    def refresh(self, cache, x, i, old, new, counter=NULL_COUNTER):
        if self.cache_schema:
            self.inner.refresh(cache, x, i, old, new, counter)
