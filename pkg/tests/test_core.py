import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import sparse

from cfsplit.core import (CF, BlockVector, CacheInvalidError, ComposedOperator, DiagonalOperator,
                          DimensionError, IdentityOperator, InvalidPartitionError, MatrixOperator, OpCounter,
                          OperatorDescriptor, Sep, apply_coordinate, apply_full, cache_audit,
                          classify_composition, commit, make_linear_gradient, make_partition, measure_costs,
                          uniform_partition)
from cfsplit.checks import audit_storm, coordinate_equivalence

REGIMES = ("precomputed-normal", "maintain-Tx", "maintain-Ax")


def naive_matvec(M, x):
    out = np.zeros(M.shape[0])
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            out[i] += M[i, j] * x[j]
    return out


class TestPartition:
    def test_offsets(self):
        p = make_partition([2, 3])
        assert p.offsets == (0, 2) and p.total_dim == 5 and p.m == 2

    def test_single_block(self):
        p = make_partition([1])
        assert p.m == 1 and p.total_dim == 1

    @pytest.mark.parametrize("sizes", [[], [0], [2, -1]])
    def test_invalid(self, sizes):
        with pytest.raises(InvalidPartitionError):
            make_partition(sizes)

    def test_fifty_feature_blocks(self):
        p = uniform_partition(20958, 50)
        assert p.m == 419 and p.total_dim == 20958
        assert set(p.block_sizes) == {50, 51}
        assert p.block_sizes.count(51) == 20958 - 419 * 50

    @given(st.lists(st.integers(1, 6), min_size=1, max_size=12))
    def test_block_of_inverts_slices(self, sizes):
        p = make_partition(sizes)
        for i in range(p.m):
            sl = p.slice(i)
            assert all(p.block_of(j) == i for j in range(sl.start, sl.stop))
        assert np.array_equal(p.block_ids(), np.repeat(np.arange(p.m), sizes))

    def test_block_vector_checks(self):
        p = make_partition([2, 2])
        with pytest.raises(DimensionError):
            BlockVector(np.zeros(3), p)
        with pytest.raises(ValueError):
            BlockVector(np.array([0, np.nan, 0, 0]), p)
        v = BlockVector(np.arange(4.0), p)
        assert np.array_equal(v.block(1), [2, 3])


class TestApply:
    def test_identity(self, rng):
        x = rng.standard_normal(4)
        assert np.array_equal(apply_full(IdentityOperator(4), x), x)

    def test_gradient_with_identity_is_zero(self, rng):
        op = make_linear_gradient(np.eye(3), np.zeros(3), 1.0, "maintain-Ax")
        assert np.allclose(apply_full(op, rng.standard_normal(3)), 0.0)

    def test_dense_matrix_vs_naive(self, rng):
        M = rng.standard_normal((3, 3))
        x = rng.standard_normal(3)
        assert np.allclose(apply_full(MatrixOperator(M), x), naive_matvec(M, x), atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            apply_full(IdentityOperator(3), np.zeros(4))

    @pytest.mark.parametrize("regime", REGIMES)
    def test_exact_one_step(self, regime):
        op = make_linear_gradient(np.eye(2), np.array([1.0, 2.0]), 1.0, regime)
        assert np.allclose(apply_full(op, np.zeros(2)), [1, 2])
        assert np.allclose(apply_full(op, np.array([1.0, 2.0])), [1, 2])

    def test_zero_size(self):
        with pytest.raises(ValueError):
            make_linear_gradient(np.zeros((0, 3)), np.zeros(0), 1.0)


class TestCoordinate:
    @pytest.mark.parametrize("regime", REGIMES)
    def test_matches_full_block(self, rng, regime):
        A, b = rng.standard_normal((5, 8)), rng.standard_normal(5)
        op = make_linear_gradient(A, b, 0.05, regime)
        gap = coordinate_equivalence(op, lambda r: r.standard_normal(8), trials=200)
        assert gap <= 1e-12

    def test_maintain_tx_refresh_is_rank_one(self, rng):
        A, b, eta = rng.standard_normal((6, 4)), rng.standard_normal(6), 0.1
        op = make_linear_gradient(A, b, eta, "maintain-Tx")
        x = rng.standard_normal(4)
        cache = op.init_cache(x)
        v, new = apply_coordinate(op, x, 2, cache)
        d = v[0] - x[2]
        expect = cache["Tx"] - eta * d * (A.T @ A)[:, 2]
        expect[2] += d
        assert np.allclose(new["Tx"], expect, atol=1e-13)

    def test_maintain_ax_refresh_adds_column(self, rng):
        A, b = rng.standard_normal((6, 4)), rng.standard_normal(6)
        op = make_linear_gradient(A, b, 0.1, "maintain-Ax")
        x = rng.standard_normal(4)
        cache = op.init_cache(x)
        v, new = apply_coordinate(op, x, 1, cache)
        assert np.allclose(new["Ax"], cache["Ax"] + (v[0] - x[1]) * A[:, 1], atol=1e-13)
        # input cache untouched
        assert np.allclose(cache["Ax"], A @ x)

    def test_regimes_agree_along_iterates(self, rng):
        A, b = rng.standard_normal((7, 5)), rng.standard_normal(7)
        seq = rng.integers(0, 5, size=10)
        runs = []
        for regime in REGIMES:
            op = make_linear_gradient(A, b, 0.05, regime)
            x = np.zeros(5)
            cache = op.init_cache(x)
            for i in seq:
                v, cache = apply_coordinate(op, x, int(i), cache)
                x[i] = v[0]
            runs.append(x)
        assert np.allclose(runs[0], runs[1], atol=1e-12) and np.allclose(runs[0], runs[2], atol=1e-12)

    def test_separable_uses_only_own_block(self, rng):
        op = DiagonalOperator(rng.standard_normal(6))
        x = rng.standard_normal(6)
        y = x.copy()
        y[[0, 1, 3, 4, 5]] = 99.0
        assert np.allclose(op.coordinate(x, 2, op.init_cache(x)), op.coordinate(y, 2, op.init_cache(y)))

    def test_invalid_cache_rejected(self, rng):
        op = make_linear_gradient(rng.standard_normal((3, 3)), np.zeros(3), 0.1, "maintain-Ax")
        cache = op.init_cache(np.zeros(3))
        cache.valid = False
        with pytest.raises(CacheInvalidError):
            apply_coordinate(op, np.zeros(3), 0, cache)
        with pytest.raises(IndexError):
            apply_coordinate(op, np.zeros(3), 3, op.init_cache(np.zeros(3)))


class TestAudit:
    def test_fresh_is_zero(self, rng):
        op = make_linear_gradient(rng.standard_normal((4, 3)), rng.standard_normal(4), 0.1, "maintain-Ax")
        assert cache_audit(op, np.ones(3), op.init_cache(np.ones(3))) == 0.0

    def test_storm(self, rng):
        A, b = rng.standard_normal((20, 200)), rng.standard_normal(20)
        op = make_linear_gradient(A, b, 1.0 / np.linalg.norm(A, 2) ** 2, "maintain-Ax")
        assert audit_storm(op, np.zeros(200), 10000) <= 1e-8

    def test_corruption_detected(self, rng):
        op = make_linear_gradient(rng.standard_normal((4, 3)), rng.standard_normal(4), 0.1, "maintain-Ax")
        x = np.ones(3)
        cache = op.init_cache(x)
        cache["Ax"][0] += 1.0
        assert cache_audit(op, x, cache) > 1e-3

    def test_missing_entry(self, rng):
        op = make_linear_gradient(rng.standard_normal((4, 3)), rng.standard_normal(4), 0.1, "maintain-Ax")
        cache = op.init_cache(np.ones(3))
        cache.entries.clear()
        with pytest.raises(KeyError):
            cache_audit(op, np.ones(3), cache)


class TestClassification:
    S, N, C = Sep.SEPARABLE, Sep.NEARLY, Sep.NON

    def d(self, sep, cf=CF.TYPE1):
        return OperatorDescriptor(sep, cf)

    def test_separable_pair(self):
        assert classify_composition(self.d(self.S), self.d(self.S)).sep_class is Sep.SEPARABLE

    def test_nearly_pair_is_conservative(self):
        out = classify_composition(self.d(self.N), self.d(self.N))
        assert out.sep_class is Sep.NON
        assert classify_composition(self.d(self.N), self.d(self.N), sparsity_certificate=True).sep_class is Sep.NEARLY

    @pytest.mark.parametrize("outer,inner,expect", [
        (Sep.SEPARABLE, Sep.NEARLY, Sep.NEARLY), (Sep.NEARLY, Sep.SEPARABLE, Sep.NEARLY),
        (Sep.SEPARABLE, Sep.NON, Sep.NON), (Sep.NON, Sep.SEPARABLE, Sep.NON), (Sep.NON, Sep.NON, Sep.NON),
    ])
    def test_weaker_wins(self, outer, inner, expect):
        assert classify_composition(self.d(outer), self.d(inner)).sep_class is expect

    def test_type1_type2_needs_cache(self):
        out = classify_composition(self.d(self.C, CF.TYPE1), self.d(self.C, CF.TYPE2))
        assert out.cf_class is CF.CACHE

    def test_cf_table_rows(self):
        assert classify_composition(self.d(self.C, CF.TYPE1), self.d(self.C, CF.CHEAP)).cf_class is CF.TYPE1
        assert classify_composition(self.d(self.C, CF.CHEAP), self.d(self.C, CF.TYPE2)).cf_class is CF.CACHE
        assert classify_composition(self.d(self.S), self.d(self.C, CF.TYPE2)).cf_class is CF.CACHE
        assert classify_composition(self.d(self.C, CF.TYPE2), self.d(self.S)).cf_class is CF.TYPE2
        assert classify_composition(self.d(self.C, CF.NONE), self.d(self.C, CF.NONE)).cf_class is CF.NONE

    def test_separable_must_be_cf(self):
        with pytest.raises(ValueError):
            OperatorDescriptor(Sep.SEPARABLE, CF.NONE)

    @given(st.sampled_from(list(Sep)), st.sampled_from(list(Sep)), st.sampled_from(list(CF)), st.sampled_from(list(CF)))
    def test_total_and_never_stronger(self, so, si, co, ci):
        rank = {Sep.SEPARABLE: 0, Sep.NEARLY: 1, Sep.NON: 2}
        try:
            a, b = OperatorDescriptor(so, co), OperatorDescriptor(si, ci)
        except ValueError:
            return
        out = classify_composition(a, b)
        assert rank[out.sep_class] >= max(rank[so], rank[si])


class TestWitnesses:
    """Composite witnesses stay within the declared cost bound (c = 4)."""

    def check_bound(self, op, x):
        full, mean, _ = measure_costs(op, x)
        assert mean * op.m <= 4 * full

    def test_sparse_outer_dense_inner(self, rng):
        n = 60
        S = sparse.diags([np.ones(n), np.ones(n - 1)], [0, 1], format="csr")
        inner = MatrixOperator(rng.standard_normal((n, n)))
        op = ComposedOperator(MatrixOperator(S), inner)
        assert op.strategy == "sparse-outer"
        x = rng.standard_normal(n)
        assert coordinate_equivalence(op, lambda r: r.standard_normal(n), 50) <= 1e-12
        self.check_bound(op, x)

    def test_dense_dense_with_cache(self, rng):
        n = 40
        op = ComposedOperator(MatrixOperator(rng.standard_normal((n, n))),
                              MatrixOperator(rng.standard_normal((n, n)), maintain=True))
        assert op.descriptor.cf_class is CF.CACHE and op.strategy == "maintained-inner"
        assert coordinate_equivalence(op, lambda r: r.standard_normal(n), 50) <= 1e-12
        self.check_bound(op, rng.standard_normal(n))
        assert audit_storm(op, np.zeros(n), 500, eta=0.01) <= 1e-8

    def test_separable_outer_gradient(self, rng):
        A, b = rng.standard_normal((30, 20)), rng.standard_normal(30)
        op = ComposedOperator(DiagonalOperator(0.5 * np.ones(20)),
                              make_linear_gradient(A, b, 0.01, "maintain-Ax"))
        assert op.strategy == "separable-outer"
        assert coordinate_equivalence(op, lambda r: r.standard_normal(20), 50) <= 1e-12
        self.check_bound(op, rng.standard_normal(20))

    @pytest.mark.parametrize("m", [10, 100, 1000])
    def test_diagonal_cost_independent_of_m(self, m):
        op = DiagonalOperator(np.ones(m))
        _, mean, worst = measure_costs(op, np.ones(m), blocks=[0, m // 2])
        assert mean == worst == 2

    def test_counter(self):
        c = OpCounter()
        c.add(3)
        c.add(4)
        assert c.reset() == 7 and c.reset() == 0

    def test_commit_in_place(self, rng):
        op = make_linear_gradient(rng.standard_normal((4, 3)), rng.standard_normal(4), 0.1, "maintain-Ax")
        x = np.zeros(3)
        cache = op.init_cache(x)
        commit(op, x, 1, np.array([2.0]), cache)
        assert x[1] == 2.0 and cache.epoch == 1 and cache_audit(op, x, cache) < 1e-14
