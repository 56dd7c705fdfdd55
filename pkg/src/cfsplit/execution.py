"""Index rules, sequential / synchronous / asynchronous drivers and traces.

Coordinate updates follow the damped form

    x_i <- x_i - w (x_hat - T x_hat)_i

where ``x_hat`` is the (possibly stale) read and ``w`` the step weight. The
simulated drivers are deterministic; their ``seconds`` column is modelled
time (counted ops times 1e-9) so that traces are reproducible byte for byte.
"""
from __future__ import annotations

import csv
import io
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import NULL_COUNTER, FixedPointOperator, OpCounter, as_array

SECONDS_PER_OP = 1e-9


class DivergenceError(RuntimeError):
    pass


class StalenessError(AssertionError):
    pass


# ---------------------------------------------------------------------------
# index rules

_KIND_ALIASES = {"shuffle": "shuffled-cyclic", "greedy": "greedy-gs", "cyclic": "cyclic",
                 "random": "random", "shuffled-cyclic": "shuffled-cyclic", "greedy-gs": "greedy-gs"}


class IndexRule:
    """Block selection rule.

    ``random`` samples from ``q`` (uniform when omitted); ``shuffled-cyclic``
    draws a fresh permutation at every epoch; ``greedy-gs`` takes the argmax
    of caller-supplied scores with ties going to the lowest index.
    """

    def __init__(self, kind: str, m: int, q=None, seed: int | None = 0):
        if kind not in _KIND_ALIASES:
            raise ValueError(f"unknown index rule {kind!r}")
        if m < 1:
            raise ValueError("need at least one block")
        self.kind = _KIND_ALIASES[kind]
        self.m = int(m)
        self.seed = seed
        self.q = None
        if q is not None:
            q = np.asarray(q, dtype=float)
            if q.shape != (self.m,):
                raise ValueError(f"q must have {self.m} entries")
            if np.any(q <= 0) or not np.isfinite(q).all():
                raise ValueError("selection probabilities must be strictly positive")
            if abs(q.sum() - 1.0) > 1e-10:
                raise ValueError(f"selection probabilities sum to {q.sum()}, not 1")
            self.q = q
            self._cdf = np.cumsum(q)
        self.reset()

    def reset(self) -> None:
        self.rng = np.random.default_rng(self.seed)
        self._perm = None
        self._perm_epoch = -1

    @property
    def q_min(self) -> float:
        return float(self.q.min()) if self.q is not None else 1.0 / self.m

    def prob(self, i: int) -> float:
        return float(self.q[i]) if self.q is not None else 1.0 / self.m

    def next(self, k: int, scores=None) -> int:
        m = self.m
        if self.kind == "cyclic":
            return k % m
        if self.kind == "shuffled-cyclic":
            ep = k // m
            if ep != self._perm_epoch:
                self._perm = self.rng.permutation(m)
                self._perm_epoch = ep
            return int(self._perm[k % m])
        if self.kind == "random":
            if self.q is None:
                return int(self.rng.integers(m))
            return min(int(np.searchsorted(self._cdf, self.rng.random(), side="right")), m - 1)
        if scores is None:
            raise ValueError("the greedy rule needs per-block scores")
        scores = np.asarray(scores)
        if scores.shape != (m,):
            raise ValueError(f"expected {m} scores")
        return int(np.argmax(scores))


def next_index(rule: IndexRule, k: int, scores=None) -> int:
    return rule.next(k, scores)


# ---------------------------------------------------------------------------
# traces and stopping


@dataclass
class TraceRecord:
    k: int
    epoch: float
    ops: int
    residual: float
    objective: float | None
    seconds: float


@dataclass
class Trace:
    records: list = field(default_factory=list)

    HEADER = ("k", "epoch", "ops", "residual", "objective", "seconds")

    def append(self, k, epoch, ops, residual, objective=None, seconds=0.0) -> None:
        if self.records and k <= self.records[-1].k:
            raise ValueError("trace iteration counter must increase")
        if not residual >= 0:
            raise ValueError("residual must be nonnegative")
        self.records.append(TraceRecord(int(k), float(epoch), int(ops), float(residual),
                                        None if objective is None else float(objective), float(seconds)))

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def objectives(self) -> np.ndarray:
        return np.array([np.nan if r.objective is None else r.objective for r in self.records])

    @property
    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.records])

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.records:
            w.writerow([r.k, repr(r.epoch), r.ops, repr(r.residual),
                        "" if r.objective is None else repr(r.objective), repr(r.seconds)])
        text = buf.getvalue()
        if dest is not None:
            if hasattr(dest, "write"):
                dest.write(text)
            else:
                with open(dest, "w", newline="") as fh:
                    fh.write(text)
        return text

    @classmethod
    def from_csv(cls, src) -> "Trace":
        text = src.read() if hasattr(src, "read") else open(src).read()
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != cls.HEADER:
            raise ValueError("not a trace file")
        t = cls()
        for r in rows[1:]:
            t.records.append(TraceRecord(int(r[0]), float(r[1]), int(r[2]), float(r[3]),
                                         None if r[4] == "" else float(r[4]), float(r[5])))
        return t


@dataclass
class Stop:
    max_epochs: float = 100
    tol: float = 1e-8
    divergence_factor: float = 1e6


@dataclass
class RunResult:
    solution: np.ndarray
    x: np.ndarray
    trace: Trace
    converged: bool
    epochs: float
    ops: int

    def __iter__(self):
        yield self.solution
        yield self.trace


def fixed_point_residual(op: FixedPointOperator, x) -> float:
    x = as_array(x)
    op._check_dim(x)
    return float(np.linalg.norm(x - op.apply_full(x)))


def _eta_fn(eta) -> Callable[[int], float]:
    if callable(eta):
        return eta
    e = float(eta)
    if not e > 0:
        raise ValueError("step weight must be positive")
    return lambda k: e


class _Monitor:
    """Per-epoch residual, objective, stop and divergence checks."""

    def __init__(self, op, stop: Stop, counter: OpCounter, workers: int = 1, wall: bool = False):
        self.op, self.stop, self.counter = op, stop, counter
        self.trace = Trace()
        self.r0 = None
        self.workers = max(1, workers)
        self.wall = wall
        self.t0 = time.perf_counter()

    def record(self, k, x) -> bool:
        """Record the state after ``k`` block updates; True when converged."""
        r = float(np.linalg.norm(x - self.op.apply_full(x)))
        if not np.isfinite(r) or not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite iterate after {k} updates (residual {r})")
        if self.r0 is None:
            self.r0 = r
        elif r > self.stop.divergence_factor * max(self.r0, 1e-300):
            raise DivergenceError(f"residual {r:.3e} exceeds {self.stop.divergence_factor:g} x initial "
                                  f"{self.r0:.3e} after {k} updates")
        obj = self.op.objective(x)
        secs = time.perf_counter() - self.t0 if self.wall else self.counter.n * SECONDS_PER_OP / self.workers
        self.trace.append(k, k / self.op.m, self.counter.n, r, obj, secs)
        return r <= self.stop.tol

    def result(self, x, converged, k):
        return RunResult(self.op.solution(x), x, self.trace, converged, k / self.op.m, self.counter.n)


def _start(op, x0):
    x = np.zeros(op.dim) if x0 is None else as_array(x0).astype(float, copy=True)
    op._check_dim(x)
    return x


def _weight(rule: IndexRule | None, eta: float, i: int) -> float:
    # eta / (m q_i) only when q was given explicitly
    if rule is None or rule.q is None:
        return eta
    return eta / (rule.m * rule.q[i])


def _coord_step(op, x, xhat, i, cache_hat, w, counter):
    sl = op.partition.slice(i)
    v = op.coordinate(xhat, i, cache_hat, counter)
    counter.add(3 * (sl.stop - sl.start))
    return x[sl] - w * (xhat[sl] - v)


# ---------------------------------------------------------------------------
# sequential


def run_sequential(op: FixedPointOperator, rule: IndexRule, eta=1.0, stop: Stop | None = None,
                   x0=None, counter: OpCounter | None = None) -> RunResult:
    stop = stop or Stop()
    counter = counter or OpCounter()
    eta_k = _eta_fn(eta)
    x = _start(op, x0)
    if rule.m != op.m:
        raise ValueError(f"rule has {rule.m} blocks, operator {op.m}")
    mon = _Monitor(op, stop, counter)
    cache = op.init_cache(x)
    budget = int(math.ceil(stop.max_epochs * op.m))
    if mon.record(0, x):
        return mon.result(x, True, 0)
    overlap = hasattr(op, "update")
    k = 0
    while k < budget:
        scores = op.scores(x, cache) if rule.kind == "greedy-gs" else None
        i = rule.next(k, scores)
        w = _weight(rule, eta_k(k), i)
        if overlap:
            op.update(x, i, cache, w, counter)
        else:
            new = _coord_step(op, x, x, i, cache, w, counter)
            sl = op.partition.slice(i)
            old = x[sl].copy()
            x[sl] = new
            op.refresh(cache, x, i, old, x[sl].copy(), counter)
            cache.epoch += 1
        k += 1
        if k % op.m == 0 or k == budget:
            if mon.record(k, x):
                return mon.result(x, True, k)
    return mon.result(x, False, k)


# ---------------------------------------------------------------------------
# synchronous parallel


def singleton_schedule(rule: IndexRule):
    return lambda k, x=None, cache=None: [rule.next(k)]


def run_sync_parallel(op: FixedPointOperator, subsets, workers: int = 1, eta=1.0,
                      stop: Stop | None = None, x0=None, counter: OpCounter | None = None) -> RunResult:
    """Barrier-style rounds: all blocks of a round read the same snapshot.

    ``subsets`` is ``"full"``, a list of block lists used cyclically, or a
    callable ``k -> blocks`` where ``k`` counts block updates so far.
    """
    stop = stop or Stop()
    counter = counter or OpCounter()
    eta_k = _eta_fn(eta)
    x = _start(op, x0)
    m = op.m
    if subsets == "full":
        sched = lambda k: range(m)
    elif callable(subsets):
        sched = subsets
    else:
        lst = [list(s) for s in subsets]
        if not lst:
            raise ValueError("empty subset schedule")
        state = {"r": 0}

        def sched(k):
            s = lst[state["r"] % len(lst)]
            state["r"] += 1
            return s
    mon = _Monitor(op, stop, counter, workers)
    cache = op.init_cache(x)
    budget = int(math.ceil(stop.max_epochs * m))
    if mon.record(0, x):
        return mon.result(x, True, 0)
    k, next_check = 0, m
    while k < budget:
        blocks = [int(b) for b in sched(k)]
        if not blocks:
            raise ValueError("empty block subset")
        for b in blocks:
            op.partition.check_index(b)
        if len(set(blocks)) != len(blocks):
            raise ValueError(f"overlapping blocks within one round: {blocks}")
        eta = eta_k(k)
        if len(blocks) == m:
            counter.add(3 * x.size)
            x = x - eta * (x - op.apply_full(x, counter))
            cache = op.init_cache(x)
        else:
            vals = [_coord_step(op, x, x, b, cache, eta, counter) for b in blocks]
            for b, v in zip(blocks, vals):
                sl = op.partition.slice(b)
                old = x[sl].copy()
                x[sl] = v
                op.refresh(cache, x, b, old, x[sl].copy(), counter)
                cache.epoch += 1
        k += len(blocks)
        if k >= next_check or k >= budget:
            next_check = (k // m + 1) * m
            if mon.record(k, x):
                return mon.result(x, True, k)
    return mon.result(x, False, k)


# ---------------------------------------------------------------------------
# asynchronous parallel


def eta_max_bound(m: int, q_min: float, kappa: float, tau: float) -> float:
    """Strict upper bound ``m q_min / (2 tau sqrt(kappa q_min) + kappa)`` on the step."""
    if m < 1:
        raise ValueError("m must be positive")
    if not 0 < q_min <= 1:
        raise ValueError("q_min must lie in (0, 1]")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if not kappa >= 1:
        raise ValueError("kappa is a condition number and must be at least 1")
    return m * q_min / (2.0 * tau * math.sqrt(kappa * q_min) + kappa)


_DELAYS = ("uniform", "fixed", "geometric")
_READS = ("consistent", "inconsistent")


@dataclass
class AsyncConfig:
    workers: int = 1
    tau: int = 0
    delay: str = "uniform"
    read: str = "consistent"
    eta: float | None = None
    eta_bounds: tuple | None = None
    kappa: float = 1.0
    certified: bool = False
    q: np.ndarray | None = None
    seed: int = 0
    backend: str = "simulate"
    check_staleness: bool = True

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.delay not in _DELAYS:
            raise ValueError(f"delay model must be one of {_DELAYS}")
        if self.read not in _READS:
            raise ValueError(f"read mode must be one of {_READS}")
        if self.backend not in ("simulate", "threads"):
            raise ValueError("backend must be 'simulate' or 'threads'")
        if self.eta_bounds is not None:
            lo, hi = self.eta_bounds
            if not 0 < lo <= hi:
                raise ValueError("eta bounds must satisfy 0 < lo <= hi")

    def resolve_eta(self, m: int) -> float:
        q_min = float(np.min(self.q)) if self.q is not None else 1.0 / m
        bound = eta_max_bound(m, q_min, self.kappa, self.tau)
        eta = 0.99 * bound if self.eta is None else float(self.eta)
        if self.eta_bounds is not None:
            eta = min(max(eta, self.eta_bounds[0]), self.eta_bounds[1])
        hi = eta if self.eta_bounds is None else self.eta_bounds[1]
        if self.certified and not hi < bound:
            raise ValueError(f"eta {hi:g} is not below the convergence bound {bound:g}")
        return eta


class _History:
    """The last ``tau`` commits as ``(block, indices, old values)``."""

    def __init__(self, tau: int):
        self.buf = deque(maxlen=max(tau, 1))
        self.tau = tau

    def push(self, block, idx, old):
        if self.tau:
            self.buf.append((block, idx, old))

    def rollback_consistent(self, x, d):
        xh = x.copy()
        for j in range(1, d + 1):
            _, idx, old = self.buf[-j]
            xh[idx] = old
        return xh

    def rollback_inconsistent(self, x, depth: dict):
        xh = x.copy()
        for j in range(1, len(self.buf) + 1):
            b, idx, old = self.buf[-j]
            if j <= depth.get(b, 0):
                xh[idx] = old
        return xh


def _draw_delay(cfg: AsyncConfig, rng, cap: int) -> int:
    if cfg.workers == 1 or cap == 0:
        return 0
    if cfg.delay == "fixed":
        d = cfg.tau
    elif cfg.delay == "uniform":
        d = int(rng.integers(cfg.tau + 1))
    else:
        d = min(int(rng.geometric(1.0 / cfg.workers)) - 1, cfg.tau)
    return min(d, cap)


def run_async_parallel(op: FixedPointOperator, cfg: AsyncConfig, stop: Stop | None = None,
                       x0=None, counter: OpCounter | None = None) -> RunResult:
    """Asynchronous coordinate updates with reads stale by at most ``tau`` commits.

    Block ``i`` is drawn from ``q`` and updated with weight ``eta / (m q_i)``
    (``eta`` when ``q`` is uniform). A stale read rebuilds the maintained
    quantities from the stale iterate, which models a worker reading shared
    memory that has not yet seen the latest commits.
    """
    stop = stop or Stop()
    counter = counter or OpCounter()
    if cfg.q is not None and np.asarray(cfg.q).shape != (op.m,):
        raise ValueError(f"q must have one entry per block ({op.m})")
    eta = cfg.resolve_eta(op.m)
    rule = IndexRule("random", op.m, cfg.q, cfg.seed)
    if cfg.backend == "threads":
        return _run_threads(op, cfg, rule, eta, stop, x0, counter)
    x = _start(op, x0)
    mon = _Monitor(op, stop, counter, cfg.workers)
    cache = op.init_cache(x)
    budget = int(math.ceil(stop.max_epochs * op.m))
    if mon.record(0, x):
        return mon.result(x, True, 0)
    drng = np.random.default_rng([cfg.seed, 1])
    hist = _History(cfg.tau)
    overlap = hasattr(op, "update")
    k = 0
    while k < budget:
        i = rule.next(k)
        w = _weight(rule, eta, i)
        cap = min(cfg.tau, len(hist.buf) if cfg.tau else 0)
        if cfg.read == "consistent":
            d = _draw_delay(cfg, drng, cap)
            if d > cfg.tau and cfg.check_staleness:
                raise StalenessError(f"read {d} commits old exceeds tau={cfg.tau}")
            if d == 0:
                xh, ch = x, cache
            else:
                xh = hist.rollback_consistent(x, d)
                ch = op.init_cache(xh)
        else:
            depth = {}
            if cap and cfg.workers > 1:
                for j in range(1, cap + 1):
                    b = hist.buf[-j][0]
                    if b not in depth:
                        depth[b] = _draw_delay(cfg, drng, cap)
            if any(depth.values()):
                xh = hist.rollback_inconsistent(x, depth)
                ch = op.init_cache(xh)
            else:
                xh, ch = x, cache
        if overlap:
            idx, delta = op.step_delta(xh, i, ch, w, counter)
            old = x[idx].copy()
            op.apply_delta(x, cache, i, idx, delta, counter)
        else:
            new = _coord_step(op, x, xh, i, ch, w, counter)
            sl = op.partition.slice(i)
            idx = np.arange(sl.start, sl.stop)
            old = x[sl].copy()
            x[sl] = new
            op.refresh(cache, x, i, old, x[sl].copy(), counter)
            cache.epoch += 1
        hist.push(i, idx, old)
        k += 1
        if k % op.m == 0 or k == budget:
            if mon.record(k, x):
                return mon.result(x, True, k)
    return mon.result(x, False, k)


def _run_threads(op, cfg: AsyncConfig, rule: IndexRule, eta, stop: Stop, x0, counter) -> RunResult:
    """Real threads sharing ``x`` and the cache.

    Reads take no lock. A commit (block value, cache refresh, counter) runs
    under one lock; a worker whose read is more than ``tau`` commits old
    discards its value and retries, which enforces the staleness bound.
    """
    x = _start(op, x0)
    mon = _Monitor(op, stop, counter, cfg.workers, wall=True)
    cache = op.init_cache(x)
    m = op.m
    budget = int(math.ceil(stop.max_epochs * m))
    if mon.record(0, x):
        return mon.result(x, True, 0)
    lock = threading.Lock()
    shared = {"k": 0}
    overlap = hasattr(op, "update")
    rngs = [np.random.default_rng([cfg.seed, 2, w]) for w in range(cfg.workers)]
    errors = []

    def worker(wid, target):
        rng = rngs[wid]
        try:
            while True:
                with lock:
                    if shared["k"] >= target:
                        return
                i = int(rng.choice(m, p=rule.q)) if rule.q is not None else int(rng.integers(m))
                w = _weight(rule, eta, i)
                while True:
                    k_read = shared["k"]
                    xh = x.copy()
                    ch = cache.copy()
                    local = OpCounter()
                    if overlap:
                        idx, delta = op.step_delta(xh, i, ch, w, local)
                    else:
                        sl = op.partition.slice(i)
                        v = op.coordinate(xh, i, ch, local)
                        local.add(3 * (sl.stop - sl.start))
                    with lock:
                        if shared["k"] >= target:
                            return
                        if shared["k"] - k_read > cfg.tau:
                            continue
                        if overlap:
                            op.apply_delta(x, cache, i, idx, delta, local)
                        else:
                            old = x[sl].copy()
                            x[sl] = x[sl] - w * (xh[sl] - v)
                            op.refresh(cache, x, i, old, x[sl].copy(), local)
                            cache.epoch += 1
                        counter.add(local.n)
                        shared["k"] += 1
                        break
        except Exception as exc:  # surfaced in the caller
            errors.append(exc)

    k = 0
    while k < budget:
        target = min(k + m, budget)
        threads = [threading.Thread(target=worker, args=(w, target)) for w in range(cfg.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        k = shared["k"]
        if mon.record(k, x):
            return mon.result(x, True, k)
    return mon.result(x, False, k)
