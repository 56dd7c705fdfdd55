import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import sparse
from scipy.optimize import linprog

from cfsplit.apps import build_least_squares
from cfsplit.core import DiagonalOperator, IdentityOperator, MatrixOperator, OpCounter, make_partition
from cfsplit.execution import (AsyncConfig, DivergenceError, IndexRule, Stop, Trace, eta_max_bound,
                               fixed_point_residual, next_index, run_async_parallel, run_sequential,
                               run_sync_parallel)
from cfsplit.primal_dual import OverlapOperator, PrimalDualProblem, QuadraticSmooth, default_steps
from cfsplit.prox import Box, EqualityIndicator


def _ls(rng, p=30, n=20):
    A = rng.standard_normal((p, n))
    b = rng.standard_normal(p)
    return build_least_squares(A, b), A, b


class TestIndexRules:
    def test_cyclic(self):
        r = IndexRule("cyclic", 3)
        assert [next_index(r, k) for k in range(6)] == [0, 1, 2, 0, 1, 2]

    def test_shuffled_epochs_are_permutations(self):
        r = IndexRule("shuffled-cyclic", 5, seed=3)
        seq = [next_index(r, k) for k in range(15)]
        for e in range(3):
            assert sorted(seq[5 * e:5 * e + 5]) == list(range(5))
        assert seq[:5] != seq[5:10] or seq[5:10] != seq[10:]

    def test_random_frequencies(self):
        q = np.array([0.5, 0.3, 0.2])
        r = IndexRule("random", 3, q, seed=1)
        counts = np.bincount([next_index(r, k) for k in range(20000)], minlength=3)
        assert np.allclose(counts / 20000, q, atol=0.02)

    def test_q_validation(self):
        with pytest.raises(ValueError):
            IndexRule("random", 3, [1.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            IndexRule("random", 2, [0.6, 0.6])
        with pytest.raises(ValueError):
            IndexRule("random", 2, [1.0])
        with pytest.raises(ValueError):
            IndexRule("sideways", 2)

    def test_greedy(self):
        r = IndexRule("greedy-gs", 3)
        assert next_index(r, 0, np.array([1.0, 3.0, 2.0])) == 1
        assert next_index(r, 0, np.array([3.0, 3.0, 2.0])) == 0
        with pytest.raises(ValueError):
            next_index(r, 0)

    def test_seeded_reproducible(self):
        a = IndexRule("random", 7, seed=11)
        b = IndexRule("random", 7, seed=11)
        assert [a.next(k) for k in range(50)] == [b.next(k) for k in range(50)]


class TestBound:
    def test_examples(self):
        assert eta_max_bound(10, 0.1, 1.0, 0) == pytest.approx(1.0)
        assert eta_max_bound(10, 0.1, 4.0, 5) == pytest.approx(1.0 / (10 * math.sqrt(0.4) + 4))
        assert eta_max_bound(10, 0.1, 4.0, 5) == pytest.approx(0.0969, abs=5e-5)

    @given(st.integers(1, 200), st.floats(1.0, 100.0), st.integers(0, 50))
    def test_monotone_in_tau(self, m, kappa, tau):
        q = 1.0 / m
        assert eta_max_bound(m, q, kappa, tau + 1) < eta_max_bound(m, q, kappa, tau)

    def test_errors(self):
        with pytest.raises(ValueError):
            eta_max_bound(10, 0.1, 0.5, 1)
        with pytest.raises(ValueError):
            eta_max_bound(10, 0.0, 1.0, 1)
        with pytest.raises(ValueError):
            eta_max_bound(10, 0.1, 1.0, -1)

    def test_certified_config(self):
        with pytest.raises(ValueError):
            AsyncConfig(tau=5, eta=1.0, certified=True).resolve_eta(10)
        assert AsyncConfig(tau=0).resolve_eta(10) == pytest.approx(0.99)


class TestResidualAndTrace:
    def test_residual(self, rng):
        assert fixed_point_residual(IdentityOperator(3), rng.standard_normal(3)) == 0.0
        half = DiagonalOperator(np.array([0.5]))
        assert fixed_point_residual(half, np.array([2.0])) == pytest.approx(1.0)
        M = MatrixOperator(rng.standard_normal((4, 4)), np.zeros(4), make_partition([2, 2]))
        x = rng.standard_normal(4)
        assert fixed_point_residual(M, x) == pytest.approx(np.linalg.norm(x - M.apply_full(x)))

    def test_csv_round_trip(self, rng):
        inst, *_ = _ls(rng)
        res = run_sequential(inst.operator, IndexRule("cyclic", inst.operator.m), 1.0, Stop(3, 0.0))
        text = res.trace.to_csv()
        assert text.splitlines()[0] == "k,epoch,ops,residual,objective,seconds"
        back = Trace.from_csv(io.StringIO(text))
        assert back.records == res.trace.records

    def test_invariants(self):
        t = Trace()
        t.append(0, 0.0, 0, 1.0)
        with pytest.raises(ValueError):
            t.append(0, 0.0, 0, 1.0)
        with pytest.raises(ValueError):
            t.append(1, 0.0, 0, -1.0)


class TestSequential:
    def test_identity_stops_immediately(self):
        res = run_sequential(IdentityOperator(4), IndexRule("cyclic", 4), 1.0, Stop(10, 1e-12), np.ones(4))
        assert res.converged and res.epochs == 0 and res.trace.residuals[0] == 0.0

    def test_quadratic_vs_solve(self, rng):
        for rule in ("cyclic", "shuffled-cyclic", "random"):
            inst, A, b = _ls(rng)
            res = run_sequential(inst.operator, IndexRule(rule, inst.operator.m, seed=2), 1.0, Stop(500, 1e-12))
            assert np.linalg.norm(res.solution - np.linalg.solve(A.T @ A, A.T @ b)) <= 1e-6

    def test_greedy(self, rng):
        inst, A, b = _ls(rng)
        res = run_sequential(inst.operator, IndexRule("greedy-gs", inst.operator.m), 1.0, Stop(500, 1e-12))
        assert res.converged

    def test_trace_monotone_counters(self, rng):
        inst, *_ = _ls(rng)
        res = run_sequential(inst.operator, IndexRule("random", inst.operator.m), 1.0, Stop(5, 0.0))
        ks = [r.k for r in res.trace.records]
        assert ks == sorted(set(ks)) and len(ks) == 6
        assert np.all(np.diff([r.ops for r in res.trace.records]) > 0)

    def test_divergence(self):
        op = DiagonalOperator(np.array([3.0, 3.0]))
        with pytest.raises(DivergenceError):
            run_sequential(op, IndexRule("cyclic", 2), 1.0, Stop(100, 0.0), np.ones(2))

    def test_rule_mismatch(self):
        with pytest.raises(ValueError):
            run_sequential(IdentityOperator(3), IndexRule("cyclic", 2))


class TestSync:
    def test_full_rounds_match_full_update(self, rng):
        inst, *_ = _ls(rng)
        op = inst.operator
        res = run_sync_parallel(op, "full", 4, 0.7, Stop(5, 0.0))
        x = np.zeros(op.dim)
        for _ in range(5):
            x = x - 0.7 * (x - op.apply_full(x))
        assert np.allclose(res.x, x, atol=1e-14)

    def test_singletons_match_sequential(self, rng):
        inst, *_ = _ls(rng)
        op = inst.operator
        a = run_sequential(op, IndexRule("random", op.m, seed=5), 1.0, Stop(4, 0.0))
        r = IndexRule("random", op.m, seed=5)
        b = run_sync_parallel(op, lambda k: [r.next(k)], 1, 1.0, Stop(4, 0.0))
        assert np.array_equal(a.x, b.x)

    def test_two_workers(self, rng):
        inst, A, b = _ls(rng)
        m = inst.operator.m
        # blocks in one round read the same snapshot, so damp by 1/2
        res = run_sync_parallel(inst.operator, [[i, (i + m // 2) % m] for i in range(m // 2)], 2, 0.5,
                                Stop(2000, 1e-10))
        assert np.allclose(res.solution, inst.oracle(), atol=1e-6)

    def test_overlapping_round_rejected(self, rng):
        inst, *_ = _ls(rng)
        with pytest.raises(ValueError):
            run_sync_parallel(inst.operator, [[0, 0]], 2, 1.0, Stop(1, 0.0))
        with pytest.raises(IndexError):
            run_sync_parallel(inst.operator, [[0, 99]], 2, 1.0, Stop(1, 0.0))


class TestAsync:
    def test_tau_zero_matches_sequential(self, rng):
        inst, *_ = _ls(rng)
        op = inst.operator
        a = run_sequential(op, IndexRule("random", op.m, seed=9), 0.8, Stop(10, 0.0))
        b = run_async_parallel(op, AsyncConfig(workers=1, tau=0, eta=0.8, seed=9), Stop(10, 0.0))
        assert np.array_equal(a.x, b.x)
        assert [r.residual for r in a.trace.records] == [r.residual for r in b.trace.records]

    @pytest.mark.parametrize("read", ["consistent", "inconsistent"])
    def test_deterministic(self, rng, read):
        inst, *_ = _ls(rng)
        cfg = AsyncConfig(workers=4, tau=5, read=read, seed=3)
        a = run_async_parallel(inst.operator, cfg, Stop(5, 0.0))
        b = run_async_parallel(inst.operator, cfg, Stop(5, 0.0))
        assert a.trace.to_csv() == b.trace.to_csv()

    @pytest.mark.parametrize("delay", ["uniform", "fixed", "geometric"])
    def test_least_squares_tau10(self, rng, delay):
        A = rng.standard_normal((80, 50))
        b = rng.standard_normal(80)
        inst = build_least_squares(A, b)
        cfg = AsyncConfig(workers=8, tau=10, delay=delay, seed=1)
        res = run_async_parallel(inst.operator, cfg, Stop(3000, 1e-6))
        assert res.converged
        assert np.linalg.norm(res.solution - inst.oracle()) <= 1e-4

    def test_nonuniform_q(self, rng):
        inst, *_ = _ls(rng)
        m = inst.operator.m
        q = np.linspace(1, 2, m)
        q /= q.sum()
        res = run_async_parallel(inst.operator, AsyncConfig(workers=2, tau=2, q=q, seed=0), Stop(3000, 1e-8))
        assert res.converged

    def test_q_shape(self, rng):
        inst, *_ = _ls(rng)
        with pytest.raises(ValueError):
            run_async_parallel(inst.operator, AsyncConfig(q=np.ones(3) / 3), Stop(1, 0.0))

    def test_config_validation(self):
        for kw in ({"workers": 0}, {"tau": -1}, {"delay": "poisson"}, {"read": "dirty"}, {"backend": "gpu"},
                   {"eta_bounds": (0.5, 0.1)}):
            with pytest.raises(ValueError):
                AsyncConfig(**kw)

    def test_threads_backend(self, rng):
        inst, *_ = _ls(rng)
        res = run_async_parallel(inst.operator, AsyncConfig(workers=2, tau=4, backend="threads", seed=0),
                                 Stop(2000, 1e-8))
        assert res.converged
        assert np.allclose(res.solution, inst.oracle(), atol=1e-6)

    def test_overlap_lp(self):
        # primal-dual LP convergence speed varies a lot between instances; this one needs ~4e3 sweeps
        rng = np.random.default_rng(1)
        p, n = 20, 30
        A = sparse.random(p, n, density=0.15, random_state=1, format="csr") + sparse.hstack(
            [sparse.eye(p), sparse.csr_matrix((p, n - p))])
        A = sparse.csr_matrix(A)
        b = A @ rng.uniform(0.2, 0.8, n)
        c = rng.uniform(-1, 1, n)
        prob = PrimalDualProblem(A, QuadraticSmooth(np.zeros((n, n)), c), Box(0.0, 1.0), EqualityIndicator(b))
        eta, gamma = default_steps(A, 0.0)
        op = OverlapOperator(prob, eta, gamma)
        res = run_async_parallel(op, AsyncConfig(workers=1, tau=0, eta=1.0, seed=0), Stop(20000, 1e-8),
                                 np.zeros(n + p))
        ref = linprog(c, A_eq=A.toarray(), b_eq=b, bounds=[(0, 1)] * n, method="highs")
        x = res.solution
        assert np.linalg.norm(A @ x - b) <= 1e-6
        assert abs(c @ x - ref.fun) <= 1e-6 * max(1.0, abs(ref.fun))


def test_worker_count_invariance():
    from cfsplit.synthetic import gen_synthetic
    inst = gen_synthetic("logistic", seed=0)
    op = inst.operator
    eta = 0.99 * eta_max_bound(op.m, 1.0 / op.m, 1.0, 4)
    curves = []
    for w in (1, 4):
        cfg = AsyncConfig(workers=w, tau=0 if w == 1 else 4, eta=eta, seed=0)
        curves.append(run_async_parallel(op, cfg, Stop(20, 0.0), inst.x0).trace.residuals)
    a, b = curves
    assert np.all(np.abs(a[3:] - b[3:]) <= 0.1 * a[3:])
