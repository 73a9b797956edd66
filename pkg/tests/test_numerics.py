import numpy as np
import pytest

from slskit import numerics
from slskit.errors import MaxItersExceeded, NotStabilizable


class TestSolveEqualityQp:
    def test_symmetric_projection(self):
        x = numerics.solve_equality_qp(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), [2.0])
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)

    def test_fully_determined(self):
        x = numerics.solve_equality_qp(np.eye(1), np.zeros(1), np.array([[1.0]]), [5.0])
        np.testing.assert_allclose(x, [5.0], atol=1e-12)

    def test_weighted_split(self):
        # Lagrangian stationarity by hand: x1 = 2 mu/2, x2 = mu/... solving
        # diag(1,2) x = mu * [1,1], x1 + x2 = 3 gives mu = 2, x = (2, 1).
        x = numerics.solve_equality_qp(np.diag([1.0, 2.0]), np.zeros(2),
                                       np.array([[1.0, 1.0]]), [3.0])
        np.testing.assert_allclose(x, [2.0, 1.0], atol=1e-10)

    def test_kkt_conditions_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n, m = 8, 3
            M = rng.normal(size=(n, n))
            H = M @ M.T + 0.5 * np.eye(n)
            f = rng.normal(size=n)
            A = rng.normal(size=(m, n))
            b = rng.normal(size=m)
            x = numerics.solve_equality_qp(H, f, A, b)
            assert np.linalg.norm(A @ x - b) <= 1e-8 * (1 + np.linalg.norm(b))
            # stationarity: H x + f in range(A')
            grad = H @ x + f
            nu, *_ = np.linalg.lstsq(A.T, -grad, rcond=None)
            assert np.linalg.norm(A.T @ nu + grad) < 1e-7

    def test_matrix_rhs(self):
        X = numerics.solve_equality_qp(np.eye(2), np.zeros((2, 2)),
                                       np.array([[1.0, 1.0]]), np.array([[2.0, 4.0]]))
        np.testing.assert_allclose(X, [[1.0, 2.0], [1.0, 2.0]], atol=1e-12)

    def test_singular_h_regularized(self):
        # H = 0 with a single constraint: minimum-norm-ish solution still solves it.
        x = numerics.solve_equality_qp(np.zeros((2, 2)), np.zeros(2),
                                       np.array([[1.0, 0.0]]), [1.0])
        assert abs(x[0] - 1.0) < 1e-8


class TestSvd:
    def test_identity(self):
        _, s, _ = numerics.svd(np.eye(3))
        np.testing.assert_allclose(s, np.ones(3), atol=1e-12)

    def test_signed_diagonal(self):
        _, s, _ = numerics.svd(np.diag([3.0, -4.0]))
        np.testing.assert_allclose(s, [4.0, 3.0], atol=1e-12)

    def test_rank_one(self):
        # eigenvalues of M M' are (2, 0), so singular values are (sqrt 2, 0)
        M = np.array([[1.0, 1.0], [0.0, 0.0]])
        _, s, _ = numerics.svd(M)
        np.testing.assert_allclose(s, [np.sqrt(2.0), 0.0], atol=1e-12)

    def test_reconstruction(self):
        rng = np.random.default_rng(1)
        M = rng.normal(size=(5, 3))
        U, s, V = numerics.svd(M)
        S = np.zeros((5, 3))
        S[:3, :3] = np.diag(s)
        assert np.linalg.norm(U @ S @ V.T - M) <= 1e-10 * np.linalg.norm(M)
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)


class TestSpectralBallProject:
    def test_inside_unchanged(self):
        M = np.diag([4.0, 3.0])
        np.testing.assert_allclose(numerics.spectral_ball_project(M, 5.0), M)

    def test_full_clip(self):
        out = numerics.spectral_ball_project(np.diag([4.0, 3.0]), 2.0)
        np.testing.assert_allclose(out, np.diag([2.0, 2.0]), atol=1e-12)

    def test_partial_clip_vs_grid(self):
        M = np.diag([4.0, 1.0])
        out = numerics.spectral_ball_project(M, 2.0)
        np.testing.assert_allclose(out, np.diag([2.0, 1.0]), atol=1e-12)
        # grid-search oracle over feasible diagonal matrices
        best, best_val = None, np.inf
        for a in np.linspace(-2, 2, 161):
            for b in np.linspace(-2, 2, 161):
                if max(abs(a), abs(b)) <= 2.0:
                    val = (a - 4.0) ** 2 + (b - 1.0) ** 2
                    if val < best_val:
                        best, best_val = (a, b), val
        np.testing.assert_allclose(np.diag(out), best, atol=1e-9)

    def test_idempotent_and_nonexpansive(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            M = rng.normal(size=(4, 4))
            N = rng.normal(size=(4, 4))
            PM = numerics.spectral_ball_project(M, 1.5)
            PN = numerics.spectral_ball_project(N, 1.5)
            np.testing.assert_allclose(numerics.spectral_ball_project(PM, 1.5), PM, atol=1e-10)
            assert np.linalg.norm(PM - PN) <= np.linalg.norm(M - N) + 1e-12


class TestL1BallProjections:
    def test_plain_inside_untouched(self):
        v = np.array([0.2, -0.3])
        np.testing.assert_allclose(numerics.l1_ball_project(v, 1.0), v)

    def test_plain_vs_slsqp(self):
        # feasible, and no worse than the numeric solver's optimum
        import scipy.optimize
        rng = np.random.default_rng(13)
        for _ in range(10):
            v = rng.normal(size=5)
            r = rng.uniform(0.3, 1.5)
            mine = numerics.l1_ball_project(v, r)
            ref = scipy.optimize.minimize(
                lambda x: 0.5 * np.sum((x - v) ** 2), np.zeros(5),
                constraints=[{"type": "ineq",
                              "fun": lambda x: r - np.abs(x).sum()}])
            assert np.abs(mine).sum() <= r * (1 + 1e-9)
            assert 0.5 * np.sum((mine - v) ** 2) <= ref.fun + 1e-6

    def test_weighted_vs_slsqp(self):
        import scipy.optimize
        rng = np.random.default_rng(14)
        for _ in range(15):
            v = rng.normal(size=6)
            w = rng.uniform(0.2, 2.0, size=6)
            r = rng.uniform(0.5, 2.0)
            mine = numerics.weighted_l1_ball_project(v, w, r)
            ref = scipy.optimize.minimize(
                lambda x: 0.5 * np.sum((x - v) ** 2), np.zeros(6),
                constraints=[{"type": "ineq", "fun": lambda x: r - w @ np.abs(x)}],
                options={"maxiter": 500})
            assert w @ np.abs(mine) <= r * (1 + 1e-9)
            assert 0.5 * np.sum((mine - v) ** 2) <= ref.fun + 1e-6


class TestGroupSoftThreshold:
    def test_identity_at_zero(self):
        np.testing.assert_allclose(
            numerics.group_soft_threshold(np.array([3.0, 4.0]), 0.0), [3.0, 4.0])

    def test_norm_equals_threshold(self):
        np.testing.assert_allclose(
            numerics.group_soft_threshold(np.array([3.0, 4.0]), 5.0), [0.0, 0.0])

    def test_shrink_factor(self):
        np.testing.assert_allclose(
            numerics.group_soft_threshold(np.array([3.0, 4.0]), 2.5), [1.5, 2.0])

    def test_prox_definition_numeric(self):
        # argmin_x kappa ||x|| + 0.5 ||x - v||^2 along the v direction
        v = np.array([3.0, 4.0])
        kappa = 2.5
        out = numerics.group_soft_threshold(v, kappa)
        ts = np.linspace(0, 1.2, 4001)
        vals = kappa * ts * 5.0 + 0.5 * (ts - 1.0) ** 2 * 25.0
        t_best = ts[np.argmin(vals)]
        np.testing.assert_allclose(out, t_best * v, atol=1e-3)


class TestAdmm:
    def test_common_minimizer(self):
        c = np.array([1.0, -2.0])
        prox = lambda v, rho: (rho * v + c) / (rho + 1.0)
        sol, info = numerics.admm_two_block(prox, prox, np.zeros(2))
        np.testing.assert_allclose(sol, c, atol=1e-4)
        assert info.converged

    def test_consistent_indicators(self):
        a = np.array([0.5, 0.5])
        prox = lambda v, rho: a.copy()
        sol, _ = numerics.admm_two_block(prox, prox, np.zeros(2))
        np.testing.assert_allclose(sol, a, atol=1e-10)

    def test_lasso_scalar(self):
        # min 0.5 (x-3)^2 + |x|  ->  x = 2 by soft thresholding
        prox_f = lambda v, rho: (rho * v + 3.0) / (rho + 1.0)
        prox_g = lambda v, rho: np.sign(v) * np.maximum(np.abs(v) - 1.0 / rho, 0.0)
        sol, _ = numerics.admm_two_block(prox_f, prox_g, np.zeros(1),
                                         numerics.AdmmConfig(eps_abs=1e-9, eps_rel=1e-8))
        np.testing.assert_allclose(sol, [2.0], atol=1e-6)

    def test_strongly_convex_vs_kkt_oracle(self):
        rng = np.random.default_rng(3)
        n = 20
        for _ in range(3):
            Mf = rng.normal(size=(n, n))
            Hf = Mf @ Mf.T + np.eye(n)
            ff = rng.normal(size=n)
            Mg = rng.normal(size=(n, n))
            Hg = Mg @ Mg.T + np.eye(n)
            fg = rng.normal(size=n)
            # oracle: joint minimization of the sum
            x_star = np.linalg.solve(Hf + Hg, -(ff + fg))
            obj_star = (0.5 * x_star @ Hf @ x_star + ff @ x_star
                        + 0.5 * x_star @ Hg @ x_star + fg @ x_star)
            prox_f = lambda v, rho: np.linalg.solve(Hf + rho * np.eye(n), rho * v - ff)
            prox_g = lambda v, rho: np.linalg.solve(Hg + rho * np.eye(n), rho * v - fg)
            sol, _ = numerics.admm_two_block(
                prox_f, prox_g, np.zeros(n),
                numerics.AdmmConfig(rho=10.0, eps_abs=1e-10, eps_rel=1e-9, max_iters=20000))
            obj = (0.5 * sol @ Hf @ sol + ff @ sol + 0.5 * sol @ Hg @ sol + fg @ sol)
            assert abs(obj - obj_star) <= 1e-5 * max(1.0, abs(obj_star))

    def test_max_iters_carries_result(self):
        prox_f = lambda v, rho: np.array([0.0])
        prox_g = lambda v, rho: np.array([1.0])  # disjoint indicators: never converges
        with pytest.raises(MaxItersExceeded) as err:
            numerics.admm_two_block(prox_f, prox_g, np.zeros(1),
                                    numerics.AdmmConfig(max_iters=50))
        assert err.value.result.primal_residuals[-1] > 0.1


class TestGoldenSection:
    def test_quadratic(self):
        g, _ = numerics.golden_section_min(
            lambda t: (t - 0.3) ** 2, numerics.GoldenSectionConfig(0.0, 0.999, tol=1e-5))
        assert abs(g - 0.3) <= 1e-4

    def test_monotone_boundary(self):
        g, _ = numerics.golden_section_min(
            lambda t: 2.0 + t, numerics.GoldenSectionConfig(0.0, 0.9, tol=1e-5))
        assert abs(g - 0.0) <= 1e-4

    def test_vs_grid_oracle(self):
        h = lambda t: (1.0 + t * t) / (1.0 - t)
        g, _ = numerics.golden_section_min(
            h, numerics.GoldenSectionConfig(0.0, 0.9, tol=1e-6))
        grid = np.arange(0.0, 0.9 + 1e-12, 1e-3)
        g_oracle = grid[np.argmin([h(t) for t in grid])]
        assert abs(g - g_oracle) <= 1e-3 + 1e-6

    def test_handles_inf_left_region(self):
        h = lambda t: np.inf if t < 0.4 else (t - 0.5) ** 2
        g, val = numerics.golden_section_min(
            h, numerics.GoldenSectionConfig(0.0, 0.999, tol=1e-5))
        assert abs(g - 0.5) <= 1e-3 and np.isfinite(val)


class TestDare:
    def test_zero_dynamics(self):
        P, K = numerics.dare_solve(np.zeros((2, 2)), np.eye(2), np.diag([1.0, 2.0]), np.eye(2))
        np.testing.assert_allclose(P, np.diag([1.0, 2.0]), atol=1e-10)
        np.testing.assert_allclose(K, np.zeros((2, 2)), atol=1e-12)

    def test_scalar_fixed_point(self):
        P, K = numerics.dare_solve(0.5, 1.0, 1.0, 1.0)
        p = P[0, 0]
        resid = abs(p - (0.25 * p - 0.25 * p * p / (1 + p) + 1.0))
        assert resid < 1e-10
        assert abs(0.5 - K[0, 0]) < 1.0

    def test_chain_benchmark_stabilized(self):
        from slskit.benchmarks import make_chain59
        from slskit.lti import spectral_radius
        plant = make_chain59()
        assert abs(spectral_radius(plant.A) - 1.0768) < 1e-3
        P, K = numerics.dare_solve(plant.A, plant.B2, np.eye(59), np.eye(20))
        assert spectral_radius(plant.A - plant.B2 @ K) < 1.0

    def test_random_stabilizable(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = 4
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, 2))
            P, K = numerics.dare_solve(A, B, np.eye(n), np.eye(2))
            assert np.max(np.abs(np.linalg.eigvals(A - B @ K))) < 1.0

    def test_unstabilizable_raises(self):
        with pytest.raises(NotStabilizable):
            numerics.dare_solve(np.array([[2.0]]), np.array([[0.0]]), np.eye(1), np.eye(1))
