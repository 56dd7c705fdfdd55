import numpy as np
import pytest
from scipy import sparse

from cfsplit.apps import (FactorizationError, build_erm, build_group_lasso, build_logistic_l1, build_mesh_denoise,
                          build_network_consensus, build_nmf, build_portfolio, build_socp_drs, build_svm_biased_3s,
                          build_svm_biased_pd, build_svm_unbiased, build_tv_reconstruction, coordinate_run,
                          grid_gradient, piecewise_constant_image, portfolio_data, sampling_operator, svm_gram)
from cfsplit.checks import audit_storm, coordinate_equivalence
from cfsplit.core import make_partition
from cfsplit.execution import IndexRule, Stop, run_sequential
from cfsplit.primal_dual import QuadraticSmooth
from cfsplit.prox import Box, L1Norm, LogisticLoss, SquaredDistance, Zero, prox_l1, soc_project

from oracles import cap_project_enum, lp_vertices, qp_active_set


def _converge(inst, rule="cyclic", epochs=20000, tol=1e-11, eta=1.0):
    res = coordinate_run(inst, rule, epochs, tol, eta)
    assert res.converged, f"{inst.name} stalled at residual {res.trace.residuals[-1]:.2e}"
    return res, inst.solution(res.x)


def _prox_gradient(grad, prox, L, n, iters=200000, tol=1e-14):
    """Plain full prox-gradient run used as an independent reference."""
    x = np.zeros(n)
    for _ in range(iters):
        y = prox(x - grad(x) / L, 1.0 / L)
        if np.linalg.norm(y - x) <= tol:
            return y
        x = y
    raise RuntimeError("reference did not converge")


class TestERM:
    def test_ridge_single_sample(self, rng):
        a, b, mu = rng.standard_normal((1, 4)), np.array([0.7]), 0.3
        inst = build_erm(a, SquaredDistance(b), f=QuadraticSmooth(mu * np.eye(4)))
        _, x = _converge(inst, "cyclic")
        ref = np.linalg.solve(a.T @ a + mu * np.eye(4), a.T @ b)
        assert np.allclose(x, ref, atol=1e-8)

    def test_zero_loss_decouples(self, rng):
        A = rng.standard_normal((3, 4))
        f = QuadraticSmooth(np.eye(4), rng.standard_normal(4))
        inst = build_erm(A, Zero(), f=f, g=L1Norm(0.2))
        op, eta = inst.operator, inst.extras["eta"]
        x = rng.standard_normal(4)
        z = np.concatenate([x, np.zeros(3)])
        v = op.coordinate(z, 0, op.init_cache(z))
        assert np.allclose(v, prox_l1(x - eta * f.grad(x), 0.2 * eta), atol=1e-14)

    def test_logistic(self, rng):
        p, m, mu = 20, 10, 0.1
        A = rng.standard_normal((p, m))
        y = np.sign(rng.standard_normal(p))
        inst = build_erm(A, LogisticLoss(y), f=QuadraticSmooth(mu * np.eye(m)), g=L1Norm(0.01))
        _, x = _converge(inst, "random", tol=1e-10)

        def grad(w):
            u = y * (A @ w)
            return -A.T @ (y / (1 + np.exp(u))) / p + mu * w

        L = np.linalg.norm(A, 2) ** 2 / (4 * p) + mu
        ref = _prox_gradient(grad, lambda v, t: prox_l1(v, 0.01 * t), L, m)
        assert np.allclose(x, ref, atol=1e-5)

    def test_missing_loss(self):
        with pytest.raises(ValueError):
            build_erm(np.eye(2), None)

    def test_caches(self, rng):
        inst = build_erm(rng.standard_normal((6, 3)), LogisticLoss(np.ones(6)), g=L1Norm(0.1))
        assert coordinate_equivalence(inst.operator, lambda r: r.standard_normal(9), 200) <= 1e-12
        assert audit_storm(inst.operator, inst.x0, 2000) <= 1e-9


class TestSVM:
    def _data(self, rng, m=6):
        X = rng.standard_normal((m, 2))
        beta = np.array([1.0, -1.0] * (m // 2))
        X[beta > 0] += 1.0
        return X, beta

    def _qp(self, Q, C, beta=None):
        m = Q.shape[0]
        G = np.vstack([-np.eye(m), np.eye(m)]) if np.isfinite(C) else -np.eye(m)
        h = np.concatenate([np.zeros(m), C * np.ones(m)]) if np.isfinite(C) else np.zeros(m)
        E, e = (None, None) if beta is None else (beta[None, :], np.zeros(1))
        return qp_active_set(Q, -np.ones(m), G, h, E, e)

    def test_two_points(self):
        X, beta = np.array([[2.0, 0.0], [0.0, -1.0]]), np.array([1.0, -1.0])
        Q = svm_gram(X @ X.T, beta)
        _, s = _converge(build_svm_unbiased(Q, 10.0))
        assert np.allclose(s, self._qp(Q, 10.0), atol=1e-9) and np.allclose(s, [0.25, 1.0])
        for build in (build_svm_biased_pd, build_svm_biased_3s):
            _, s = _converge(build(Q, beta, 10.0))
            assert np.allclose(s, self._qp(Q, 10.0, beta), atol=1e-8) and np.allclose(s, [0.4, 0.4], atol=1e-8)

    def test_identity_unbounded(self):
        _, s = _converge(build_svm_unbiased(np.eye(3)))
        assert np.allclose(s, 1.0)

    @pytest.mark.parametrize("C", [0.5, np.inf])
    def test_rbf_vs_qp(self, rng, C):
        from cfsplit.apps import gaussian_kernel
        X, beta = self._data(rng)
        Q = svm_gram(gaussian_kernel(X, 1.0), beta)
        _, s = _converge(build_svm_unbiased(Q, C), "random")
        assert np.allclose(s, self._qp(Q, C), atol=1e-7)
        ref = self._qp(Q, C, beta)
        for build in (build_svm_biased_pd, build_svm_biased_3s):
            inst = build(Q, beta, C)
            _, s = _converge(inst)
            assert np.allclose(s, ref, atol=1e-6)
            assert abs(beta @ s) <= 1e-6
            assert np.allclose(inst.oracle(), ref, atol=1e-6)

    def test_maintained_w(self, rng):
        from cfsplit.apps import gaussian_kernel
        X, beta = self._data(rng, 8)
        Q = svm_gram(gaussian_kernel(X), beta)
        inst = build_svm_biased_pd(Q, beta, 1.0)
        assert audit_storm(inst.operator, inst.x0, 10000) <= 1e-9
        op3 = build_svm_biased_3s(Q, beta, 1.0).operator
        assert audit_storm(op3, np.zeros(8), 10000) <= 1e-9
        assert coordinate_equivalence(op3, lambda r: r.standard_normal(8), 300) <= 1e-12

    def test_zero_diagonal_fallback(self):
        Q = np.diag([2.0, 0.0])
        s = np.zeros(2)
        op = build_svm_unbiased(Q, 5.0).operator
        assert op.coordinate(s, 1, op.init_cache(s))[0] == 0.5
        op = build_svm_unbiased(Q, 5.0, fallback_step=0.25).operator
        assert op.coordinate(s, 1, op.init_cache(s))[0] == 0.25
        _, s = _converge(build_svm_unbiased(Q, 5.0))
        assert np.allclose(s, [0.5, 5.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            build_svm_unbiased(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            build_svm_unbiased(np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(ValueError):
            build_svm_biased_pd(np.eye(2), np.array([1.0, 0.5]))


class TestGroupLasso:
    def test_zero_lambda_is_gradient(self, rng):
        A, b = rng.standard_normal((8, 4)), rng.standard_normal(8)
        inst = build_group_lasso(A, b, [[0, 1], [2, 3]], 0.0)
        op = inst.operator
        x = rng.standard_normal(4)
        g = A.T @ (A @ x - b)
        step = inst.extras["steps"][0]
        assert np.allclose(op.coordinate(x, 0, op.init_cache(x)), x[:2] - step * g[:2])

    def test_two_groups(self, rng):
        A, b = rng.standard_normal((10, 5)), rng.standard_normal(10)
        groups, lam = [[0, 3], [1, 2, 4]], np.array([1.0, 2.0])
        inst = build_group_lasso(A, b, groups, lam)
        _, x = _converge(inst)

        def prox(v, t):
            out = v.copy()
            for g, l in zip(groups, lam):
                nv = np.linalg.norm(v[g])
                out[g] = 0.0 if nv <= l * t else (1 - l * t / nv) * v[g]
            return out

        ref = _prox_gradient(lambda x: A.T @ (A @ x - b), prox, np.linalg.norm(A, 2) ** 2, 5)
        assert np.allclose(x, ref, atol=1e-8)
        assert abs(inst.objective(x) - inst.objective(ref)) <= 1e-10

    def test_overlapping_chain(self, rng):
        import cvxpy as cp
        A, b = rng.standard_normal((10, 5)), rng.standard_normal(10)
        groups = [[0, 1], [1, 2, 3], [3, 4]]
        inst = build_group_lasso(A, b, groups, 1.5, overlapping=True)
        _, x = _converge(inst, epochs=50000, tol=1e-10)
        assert np.allclose(x, inst.oracle(), atol=1e-6)
        v = cp.Variable(5)
        cp.Problem(cp.Minimize(0.5 * cp.sum_squares(A @ v - b) + 1.5 * sum(cp.norm(v[g]) for g in groups))).solve(
            solver=cp.CLARABEL)
        assert abs(inst.objective(x) - inst.objective(v.value)) <= 1e-6

    def test_errors(self, rng):
        A, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
        with pytest.raises(ValueError):
            build_group_lasso(A, b, [[0], [], [1, 2]], 1.0)
        with pytest.raises(ValueError):
            build_group_lasso(A, b, [[0, 1], [1, 2]], 1.0)
        with pytest.raises(ValueError):
            build_group_lasso(A, b, [[0], [1]], 1.0)


class TestTV:
    def test_gradient_stencil(self):
        D = grid_gradient(2, 2).toarray()
        ref = np.array([[-1, 1, 0, 0], [-1, 0, 1, 0], [0, 0, 0, 0], [0, -1, 0, 1],
                        [0, 0, -1, 1], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
        assert np.array_equal(D, ref)

    def test_zero_lambda(self, rng):
        n = 9
        b = rng.standard_normal(n)
        inst = build_tv_reconstruction(sparse.eye(n), b, 0.0, (3, 3))
        _, x = _converge(inst)
        assert np.allclose(x, b, atol=1e-9)

    def test_matches_full_run(self):
        img = piecewise_constant_image(8, 8, seed=1)
        b = img.ravel() + 0.05 * np.random.default_rng(2).standard_normal(64)
        inst = build_tv_reconstruction(sparse.eye(64), b, 0.05, (8, 8))
        _, x = _converge(inst, epochs=20000, tol=1e-11)
        ref = inst.oracle(20000)
        assert abs(inst.objective(x) - inst.objective(ref)) <= 1e-8

    def test_caches(self):
        img = piecewise_constant_image(4, 5, seed=0)
        S = sampling_operator(20, 0.5, 0)
        inst = build_tv_reconstruction(S, S @ img.ravel(), 0.1, (4, 5))
        dim = inst.operator.dim
        assert coordinate_equivalence(inst.operator, lambda r: r.standard_normal(dim), 200) <= 1e-12
        assert audit_storm(inst.operator, inst.x0, 3000) <= 1e-9

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            build_tv_reconstruction(sparse.eye(4), np.zeros(4), 0.1, (4,))
        with pytest.raises(ValueError):
            build_tv_reconstruction(sparse.eye(4), np.zeros(4), 0.1, (3, 3))


class TestPortfolio:
    def test_inside_region_update(self, rng):
        m = 4
        xi = np.array([1.0, 0.5, 0.2, 0.8])
        inst = build_portfolio(np.eye(m), xi, c=0.1, eta=0.8, gamma=1.0)
        op = inst.operator
        x = np.array([0.1, 0.2, 0.1, 0.3])
        cache = op.init_cache(x)
        assert op.region(cache) == 1
        for i in range(m):
            assert op.coordinate(x, i, cache)[0] == pytest.approx(0.2 * x[i])

    def test_vs_qp(self):
        Q, xi = portfolio_data(5, seed=3)
        c = 0.02
        inst = build_portfolio(Q, xi, c)
        _, x = _converge(inst, "random", tol=1e-12, eta=1.0)
        ref = qp_active_set(Q, np.zeros(5), np.vstack([np.ones(5), -xi, -np.eye(5)]),
                            np.concatenate([[1.0, -c], np.zeros(5)]))
        assert np.linalg.norm(x - ref) / np.linalg.norm(ref) <= 1e-4
        assert x.sum() <= 1 + 1e-6 and xi @ x >= c - 1e-6 and x.min() >= -1e-12

    def test_cache(self):
        Q, xi = portfolio_data(8, seed=0)
        inst = build_portfolio(Q, xi)
        assert audit_storm(inst.operator, inst.x0, 5000, eta=0.5) <= 1e-10
        assert coordinate_equivalence(inst.operator, lambda r: r.random(8), 300) <= 1e-12

    def test_region_dispatch(self, rng):
        Q, xi = portfolio_data(5, seed=1)
        op = build_portfolio(Q, xi, 0.3).operator
        cp_ = op.cap
        for _ in range(1000):
            x = 2 * rng.standard_normal(5)
            w1, w2 = cp_.a1 @ x - cp_.b1, cp_.a2 @ x - cp_.b2
            r = op.region(op.init_cache(x))
            assert r == cp_.region(w1, w2)
            y = cap_project_enum(x, cp_.a1, cp_.b1, cp_.a2, cp_.b2)
            act1 = abs(cp_.a1 @ y - cp_.b1) <= 1e-9 and w1 > 0
            act2 = abs(cp_.a2 @ y - cp_.b2) <= 1e-9 and w2 < 0
            expect = {(False, False): 1, (False, True): 2, (True, True): 3, (True, False): 4}
            if r != 3:
                assert r == expect[(act1, act2)]
            assert np.allclose(op.project(x), y, atol=1e-9)


class TestNMF:
    def test_exact_start(self, rng):
        w, h = rng.random(5), rng.random(4)
        A = np.outer(w, h)
        nw = np.linalg.norm(w)
        inst = build_nmf(A, 1, W0=(w / nw)[:, None], H0=(h * nw)[:, None])
        op = inst.operator
        assert np.linalg.norm(op.apply_full(inst.x0) - inst.x0) <= 1e-14
        assert op.objective(inst.x0) <= 1e-28

    def test_rank_one_vs_alternating(self, rng):
        A = rng.random((6, 5))
        inst = build_nmf(A, 1)
        _, z = _converge(inst, epochs=5000, tol=1e-12)
        W, H = inst.operator.factors(z)
        # alternating exact minimization
        w, h = np.ones(6), np.ones(5)
        for _ in range(2000):
            w = np.maximum(0, A @ h / (h @ h))
            h = np.maximum(0, A.T @ w / (w @ w))
        assert np.allclose(W @ H.T, np.outer(w, h), atol=1e-8)

    def test_residual_cache(self, rng):
        inst = build_nmf(rng.random((6, 5)), 3, seed=2)
        assert audit_storm(inst.operator, inst.x0, 1000, audit_every=100) <= 1e-8
        inst = build_nmf(rng.random((6, 5)), 2, unit_norm=False, seed=2)
        assert audit_storm(inst.operator, inst.x0, 1000) <= 1e-8

    def test_zero_column_guard(self):
        inst = build_nmf(np.ones((3, 2)), 1, unit_norm=False, W0=np.zeros((3, 1)), H0=np.zeros((2, 1)))
        assert np.array_equal(inst.operator.apply_full(inst.x0), inst.x0)

    def test_errors(self):
        with pytest.raises(ValueError):
            build_nmf(-np.ones((2, 2)), 1)
        with pytest.raises(ValueError):
            build_nmf(np.ones((2, 2)), 0)


class TestSOCP:
    def test_lp_with_scalar_cones(self):
        A, b = np.array([[1.0, 1.0, 1.0]]), np.array([2.0])
        c = np.array([1.0, 2.0, -0.5])
        inst = build_socp_drs(A, b, c, [1, 1, 1])
        _, u = _converge(inst, "cyclic", tol=1e-12)
        ref = lp_vertices(c, -np.eye(3), np.zeros(3), A, b)
        assert np.allclose(u, ref, atol=1e-8)

    def test_interior_fixed_point(self):
        A = np.array([[1.0, 0.0, 0.0, 1.0, 0.0]])
        u0 = np.array([2.0, 0.5, 0.3, 1.0, 0.1])
        inst = build_socp_drs(A, A @ u0, np.zeros(5), [3, 2])
        op = inst.operator
        assert np.linalg.norm(op.apply_full(u0) - u0) <= 1e-13
        assert np.allclose(op.solution(u0), u0)

    def test_state_projection_matches_direct(self, rng):
        A = rng.standard_normal((2, 7))
        inst = build_socp_drs(A, rng.standard_normal(2), rng.standard_normal(7), [3, 4])
        op = inst.operator
        x = rng.standard_normal(7)
        cache = op.init_cache(x)
        for i in range(op.m):
            sl = op.partition.slice(i)
            y = cache["y"][sl]
            proj = op.coordinate(x, i, cache) - 0.5 * (x[sl] - y)
            assert np.allclose(proj, soc_project(y)[0], atol=1e-12)

    def test_vs_cvxpy(self, rng):
        import cvxpy as cp
        n, cones = 7, [3, 4]
        A = rng.standard_normal((2, n))
        u_feas = np.concatenate([[2.0, 0.5, 0.5], [2.0, 0.3, -0.4, 0.2]])
        b = A @ u_feas
        c = np.concatenate([[1.0, 0.2, -0.1], [1.0, 0.1, 0.3, -0.2]])
        inst = build_socp_drs(A, b, c, cones)
        _, u = _converge(inst, "random", epochs=20000, tol=1e-11)
        v = cp.Variable(n)
        cp.Problem(cp.Minimize(c @ v), [A @ v == b, cp.SOC(v[0], v[1:3]), cp.SOC(v[3], v[4:])]).solve(
            solver=cp.CLARABEL)
        assert abs(c @ u - c @ v.value) <= 1e-6
        assert np.linalg.norm(A @ u - b) <= 1e-6
        assert u[0] >= np.linalg.norm(u[1:3]) - 1e-8 and u[3] >= np.linalg.norm(u[4:]) - 1e-8
        assert audit_storm(inst.operator, inst.x0, 3000) <= 1e-9

    def test_rank_deficient(self):
        with pytest.raises(FactorizationError):
            build_socp_drs(np.array([[1.0, 1.0], [2.0, 2.0]]), np.ones(2), np.zeros(2), [2])


class TestMesh:
    def test_two_nodes(self):
        z, lam = np.array([0.0, 1.0]), 0.1
        inst = build_mesh_denoise(np.array([[0, 1], [1, 0]]), z, lam)
        _, x = _converge(inst, "cyclic")
        # epigraph form: min 1/2||x - z||^2 + 2 lam u, |x1 - x2| <= u (each edge appears once per direction)
        ref = qp_active_set(np.diag([1.0, 1.0, 0.0]), np.array([-z[0], -z[1], 2 * lam]),
                            np.array([[1.0, -1.0, -1.0], [-1.0, 1.0, -1.0]]), np.zeros(2))
        assert np.allclose(x, ref[:2], atol=1e-9)
        assert np.allclose(x, [0.2, 0.8], atol=1e-9)

    def test_tiny_lambda(self, rng):
        Adj = np.array([[0, 1, 1, 0], [1, 0, 1, 0], [1, 1, 0, 1], [0, 0, 1, 0]])
        z = rng.standard_normal(4)
        _, x = _converge(build_mesh_denoise(Adj, z, 1e-12))
        assert np.allclose(x, z, atol=1e-9)

    def test_weights_and_isolated_node(self, rng):
        Adj = np.zeros((4, 4))
        Adj[0, 1] = Adj[1, 0] = Adj[1, 2] = Adj[2, 1] = 1
        inst = build_mesh_denoise(Adj, rng.standard_normal(4), 0.2, box=(-0.5, 0.5))
        w = inst.operator.weights
        assert all(v == 0.5 for v in w.rho.values())
        _, x = _converge(inst)
        assert np.allclose(x, inst.oracle(), atol=1e-8)
        assert x.min() >= -0.5 and x.max() <= 0.5

    def test_asymmetric(self):
        with pytest.raises(ValueError):
            build_mesh_denoise(np.array([[0, 1], [0, 0]]), np.zeros(2))


class TestNetwork:
    def test_single_worker(self):
        inst = build_network_consensus([lambda v, t: (v + 3 * t) / (1 + t)])
        _, y = _converge(inst, "cyclic")
        assert y[0] == pytest.approx(3.0)

    def test_mean(self):
        a = [1.0, 2.0, 4.0]
        proxes = [lambda v, t, a=a_: (v + a * t) / (1 + t) for a_ in a]
        inst = build_network_consensus(proxes, values=[lambda y, a=a_: 0.5 * float((y - a) @ (y - a)) for a_ in a])
        res, y = _converge(inst, "random", tol=1e-12)
        assert y[0] == pytest.approx(np.mean(a))
        assert inst.operator.consensus_gap(res.x) <= 1e-6

    def test_indicator_fixed_point(self):
        a = 1.7
        op = build_network_consensus([lambda v, t: np.full_like(v, a)] * 3).operator
        z = op.pack(np.array([a]), np.full((3, 1), a), np.zeros((3, 1)))
        assert np.linalg.norm(op.apply_full(z) - z) <= 1e-15

    def test_sums(self, rng):
        op = build_network_consensus([lambda v, t: prox_l1(v, t)] * 4, d=2).operator
        assert audit_storm(op, rng.standard_normal(op.dim), 1000, audit_every=100) <= 1e-10
        assert coordinate_equivalence(op, lambda r: r.standard_normal(op.dim), 200) <= 1e-14

    def test_gamma_range(self):
        with pytest.raises(ValueError):
            build_network_consensus([lambda v, t: v], gamma=1.0)


class TestLogistic:
    def test_huge_lambda(self, rng):
        A = rng.standard_normal((10, 6))
        inst = build_logistic_l1(A, np.sign(rng.standard_normal(10)), lam=1e3, block_size=2)
        res, x = _converge(inst)
        assert np.array_equal(x, np.zeros(6))

    def test_vs_full_oracle(self):
        from cfsplit.synthetic import gen_data
        d = gen_data("logistic", seed=0)
        inst = build_logistic_l1(d["A"], d["labels"], 0.1, 1)
        _, x = _converge(inst, "random", epochs=5000, tol=1e-10)
        A, y = d["A"], d["labels"]
        N = A.shape[0]
        grad = lambda w: -A.T @ (y / (1 + np.exp(y * (A @ w)))) / N
        ref = _prox_gradient(grad, lambda v, t: prox_l1(v, 0.1 * t), np.linalg.norm(A, 2) ** 2 / (4 * N), 60)
        assert np.allclose(x, ref, atol=1e-5)
        assert np.allclose(x, inst.oracle(), atol=1e-5)

    def test_cache(self, rng):
        A = rng.standard_normal((20, 12))
        inst = build_logistic_l1(A, np.sign(rng.standard_normal(20)), 0.01, 3)
        assert audit_storm(inst.operator, inst.x0, 40) <= 1e-8
        assert coordinate_equivalence(inst.operator, lambda r: r.standard_normal(12), 200) <= 1e-12

    def test_labels(self, rng):
        with pytest.raises(ValueError):
            build_logistic_l1(rng.standard_normal((3, 2)), np.array([1.0, 0.0, -1.0]))
