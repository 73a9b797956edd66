import numpy as np
import pytest
import scipy.optimize

from slskit import fh, numerics
from slskit.errors import SingularPerturbation
from slskit.lti import BltMatrix, blt_spectral_norm, downshift
from slskit.fh import FhCost, FhPerturbation, FhResponse, UncertaintyBounds
from slskit.lti import Plant


def scalar_plant(a=0.5, b=1.0):
    return Plant.state_feedback(np.array([[a]]), np.array([[b]]))


def random_feedback_response(plant, T, rng):
    """Achievable response from a random time-varying feedback law, built
    from the closed-loop recursion (the constructive side of achievability)."""
    n, p = plant.n, plant.nu
    Ks = [rng.normal(scale=0.3, size=(p, n)) for _ in range(T + 1)]
    phi_x = BltMatrix(n, n, T)
    phi_u = BltMatrix(p, n, T)
    for s in range(T + 1):
        phi_x.set_block(s, s, np.eye(n))
        phi_u.set_block(s, s, Ks[s])
        for t in range(s + 1, T + 1):
            nxt = (plant.A @ phi_x.block(t - 1, s)
                   + plant.B2 @ phi_u.block(t - 1, s))
            phi_x.set_block(t, s, nxt)
            phi_u.set_block(t, s, Ks[t] @ nxt)
    return FhResponse(phi_x, phi_u)


class TestAchievabilityResidual:
    def test_open_loop_integratorless(self):
        plant = Plant.state_feedback(np.zeros((2, 2)), np.eye(2))
        resp = FhResponse(BltMatrix.identity(2, 3), BltMatrix(2, 2, 3))
        assert fh.fh_achievability_residual(plant, resp).max_abs() <= 1e-12

    def test_feedback_map_is_achievable(self):
        rng = np.random.default_rng(20)
        plant = Plant.state_feedback(rng.normal(size=(3, 3)), rng.normal(size=(3, 2)))
        resp = random_feedback_response(plant, 4, rng)
        assert fh.fh_achievability_residual(plant, resp).max_abs() <= 1e-10

    def test_identity_open_loop_defect(self):
        A = np.array([[0.3, 0.1], [0.0, 0.2]])
        plant = Plant.state_feedback(A, np.eye(2))
        resp = FhResponse(BltMatrix.identity(2, 2), BltMatrix(2, 2, 2))
        R = fh.fh_achievability_residual(plant, resp)
        for t in range(1, 3):
            np.testing.assert_allclose(R.block(t, t - 1), -A, atol=1e-12)


class TestLqrX0:
    def test_zero_x0(self):
        sol = fh.fh_lqr_x0(scalar_plant(), FhCost(np.eye(1), np.eye(1), T=2), [0.0])
        assert sol.objective == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(sol.x, 0.0)

    def test_scalar_matches_kkt_oracle(self):
        # a=0.5, b=1, Q=R=1, T=2, x0=1: minimize x0^2+x1^2+x2^2+u0^2+u1^2+u2^2
        # subject to x1 = 0.5 + u0, x2 = 0.5 x1 + u1; u2 = 0 optimal.
        # Oracle: eliminate and minimize in (u0, u1) by dense grid refinement.
        def cost(u0, u1):
            x1 = 0.5 + u0
            x2 = 0.5 * x1 + u1
            return 1.0 + x1 ** 2 + x2 ** 2 + u0 ** 2 + u1 ** 2

        res = scipy.optimize.minimize(lambda v: cost(*v), [0.0, 0.0])
        sol = fh.fh_lqr_x0(scalar_plant(0.5, 1.0),
                           FhCost(np.eye(1), np.eye(1), T=2), [1.0])
        assert sol.objective == pytest.approx(res.fun, abs=1e-9)

    def test_converges_to_dare_value(self):
        a, b = 0.9, 1.0
        P, _ = numerics.dare_solve(a, b, 1.0, 1.0)
        x0 = np.array([1.3])
        vals = []
        for T in (3, 10, 30):
            sol = fh.fh_lqr_x0(scalar_plant(a, b), FhCost(np.eye(1), np.eye(1), T=T), x0)
            vals.append(sol.objective)
        target = float(x0 @ P @ x0)
        assert all(v <= target + 1e-9 for v in vals)
        assert vals[-1] == pytest.approx(target, rel=1e-6)
        assert vals == sorted(vals)


class TestLqrNoise:
    def test_static_noise_pass_through(self):
        plant = Plant.state_feedback(np.zeros((2, 2)), np.eye(2))
        resp, obj = fh.fh_lqr_noise(plant, FhCost(np.eye(2), np.eye(2), T=1))
        assert resp.phi_u.max_abs() <= 1e-10
        assert obj == pytest.approx(2.0)

    def test_deadbeat_when_control_free(self):
        a = np.array([[0.7, 0.2], [0.0, 0.5]])
        plant = Plant.state_feedback(a, np.eye(2))
        resp, obj = fh.fh_lqr_noise(plant, FhCost(np.eye(2), np.zeros((2, 2)), T=3))
        for t in range(4):
            for s in range(t):
                assert np.max(np.abs(resp.phi_x.block(t, s))) <= 1e-8
        for t in range(3):
            np.testing.assert_allclose(resp.phi_u.block(t, t), -a, atol=1e-8)

    def test_rate_approaches_dare(self):
        a, b = 0.8, 1.0
        P, _ = numerics.dare_solve(a, b, 1.0, 1.0)
        T = 100
        _, obj = fh.fh_lqr_noise(scalar_plant(a, b), FhCost(np.eye(1), np.eye(1), T=T))
        assert obj / T == pytest.approx(P[0, 0], rel=0.02)

    def test_column_decomposition_invariant(self):
        rng = np.random.default_rng(21)
        plant = Plant.state_feedback(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)))
        cost = FhCost(np.eye(2), np.eye(1), T=4)
        resp, obj = fh.fh_lqr_noise(plant, cost)
        total = 0.0
        for s in range(1, 5):
            for t in range(s, 5):
                bx = resp.phi_x.block(t, s)
                bu = resp.phi_u.block(t, s)
                total += float(np.sum(bx * bx) + np.sum(bu * bu))
        assert total == pytest.approx(obj, abs=1e-10)


class TestHinf:
    def test_point_feasible_set(self):
        # B = 0 and A = 0: the only achievable response is Phi_x = I, Phi_u free
        plant = Plant.state_feedback(np.zeros((1, 1)), np.zeros((1, 1)))
        resp, g = fh.fh_hinf(plant, FhCost(np.eye(1), np.eye(1), T=2))
        assert g == pytest.approx(1.0, rel=1e-2)

    def test_sandwich_against_lqr_solution(self):
        plant = scalar_plant(0.6, 1.0)
        cost = FhCost(np.eye(1), np.eye(1), T=4)
        lqr_resp, _ = fh.fh_lqr_noise(plant, cost)
        layout = fh._BltLayout(1, 1, 4)
        cap = layout.weighted_cap(cost, 1.0)
        lqr_norm = numerics.spectral_norm(cap.apply(fh.layout_pack(layout, lqr_resp)))
        resp, g = fh.fh_hinf(plant, cost)
        assert g <= lqr_norm + 1e-6
        h2_norm = numerics.spectral_norm(cap.apply(fh.layout_pack(layout, resp)))
        assert g == pytest.approx(h2_norm, rel=1e-9)

    def test_scalar_matches_grid_oracle(self):
        # dense grid over the single free parameter family via direct search:
        # T=1 scalar: variables u00, u10, u11 (x blocks forced), minimize
        # spectral norm of the 4x2 weighted stacked matrix.
        a, b = 0.5, 1.0
        plant = scalar_plant(a, b)
        cost = FhCost(np.eye(1), np.eye(1), T=1)

        def norm_of(v):
            u00, u10, u11 = v
            x10 = a + b * u00
            M = np.array([[1.0, 0.0], [x10, 1.0], [u00, 0.0], [u10, u11]])
            return np.linalg.norm(M, 2)

        res = scipy.optimize.minimize(norm_of, np.zeros(3), method="Nelder-Mead",
                                      options={"xatol": 1e-10, "fatol": 1e-12})
        _, g = fh.fh_hinf(plant, cost)
        assert g == pytest.approx(res.fun, rel=2e-3)


class TestL1:
    def test_zero_weighting(self):
        plant = scalar_plant()
        cost = FhCost(np.zeros((1, 1)), np.zeros((1, 1)), T=2)
        _, val = fh.fh_l1(plant, cost)
        assert val <= 1e-9

    def test_no_worse_than_lqr_solution(self):
        plant = scalar_plant(0.6, 1.0)
        cost = FhCost(np.eye(1), np.eye(1), T=3)
        lqr_resp, _ = fh.fh_lqr_noise(plant, cost)
        layout = fh._BltLayout(1, 1, 3)
        cap = layout.weighted_cap(cost, 1.0)
        lqr_l1 = fh._rows_l1_value(cap.apply(fh.layout_pack(layout, lqr_resp)))
        _, val = fh.fh_l1(plant, cost)
        assert val <= lqr_l1 + 1e-6

    def test_two_state_matches_lp_oracle(self):
        # T=1, 2 states, 1 input: free vars are the three Phi_u blocks; the
        # epigraph LP is solved by scipy's HiGHS as the independent oracle.
        A = np.array([[0.4, 0.3], [0.1, 0.2]])
        B = np.array([[1.0], [0.5]])
        plant = Plant.state_feedback(A, B)
        cost = FhCost(np.eye(2), np.eye(1), T=1)

        def stacked(u00, u10, u11):
            X10 = A + B @ u00
            rows = [np.hstack([np.eye(2), np.zeros((2, 2))]),
                    np.hstack([X10, np.eye(2)]),
                    np.hstack([u00, np.zeros((1, 2))]),
                    np.hstack([u10, u11])]
            return np.vstack(rows)

        # LP: minimize t s.t. row abs sums of stacked(...) <= t; enumerate by
        # scipy linprog over (u00(2), u10(2), u11(2), slack per abs entry)
        nv = 6
        n_entries = 6 * 4

        def entry_coeffs():
            # each weighted-response entry is affine in the 6 free vars
            base = stacked(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)))
            coef = np.zeros((6, 4, nv))
            for k in range(nv):
                e = np.zeros(nv)
                e[k] = 1.0
                pert = stacked(e[:2].reshape(1, 2), e[2:4].reshape(1, 2),
                               e[4:].reshape(1, 2))
                coef[:, :, k] = pert - base
            return base, coef

        base, coef = entry_coeffs()
        # variables: [u(6), s(24), t]; |entry| <= s_ij, sum_j s_ij <= t
        c = np.zeros(nv + n_entries + 1)
        c[-1] = 1.0
        A_ub, b_ub = [], []
        idx = 0
        for i in range(6):
            for j in range(4):
                row = np.zeros(nv + n_entries + 1)
                row[:nv] = coef[i, j]
                row[nv + idx] = -1.0
                A_ub.append(row.copy())
                b_ub.append(-base[i, j])
                row2 = np.zeros(nv + n_entries + 1)
                row2[:nv] = -coef[i, j]
                row2[nv + idx] = -1.0
                A_ub.append(row2)
                b_ub.append(base[i, j])
                idx += 1
        for i in range(6):
            row = np.zeros(nv + n_entries + 1)
            row[nv + i * 4: nv + (i + 1) * 4] = 1.0
            row[-1] = -1.0
            A_ub.append(row)
            b_ub.append(0.0)
        res = scipy.optimize.linprog(
            c, A_ub=np.array(A_ub), b_ub=np.array(b_ub),
            bounds=[(None, None)] * (nv + n_entries) + [(0, None)])
        _, val = fh.fh_l1(plant, cost)
        assert val == pytest.approx(res.fun, rel=2e-3)


class TestRobustResponse:
    def test_zero_delta(self):
        rng = np.random.default_rng(22)
        plant = Plant.state_feedback(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)))
        resp = random_feedback_response(plant, 3, rng)
        pert = FhPerturbation(BltMatrix(2, 2, 3))
        out = fh.fh_robust_response(resp, pert)
        np.testing.assert_allclose(out.phi_x.data, resp.phi_x.data, atol=1e-12)

    def test_nilpotent_neumann_inverse(self):
        rng = np.random.default_rng(23)
        T = 3
        delta = BltMatrix(2, 2, T)
        for t in range(1, T + 1):
            for s in range(t):
                delta.set_block(t, s, rng.normal(size=(2, 2)))
        eye = BltMatrix.identity(2, T)
        inv = fh.blt_inverse_general(eye + delta)
        series = eye.data.copy()
        term = np.eye(8)
        for _ in range(T):
            term = term @ (-delta.data)
            series += term
        np.testing.assert_allclose(inv.data, series, atol=1e-10)

    def test_model_error_matches_true_closed_loop(self):
        rng = np.random.default_rng(24)
        n, p, T = 2, 1, 4
        A_hat = rng.normal(scale=0.5, size=(n, n))
        B_hat = rng.normal(size=(n, p))
        A_true = A_hat + 0.03 * rng.normal(size=(n, n))
        B_true = B_hat + 0.03 * rng.normal(size=(n, p))
        plant_hat = Plant.state_feedback(A_hat, B_hat)
        resp = random_feedback_response(plant_hat, T, rng)
        # Delta = Z [DA DB] [Phi_x; Phi_u] on the true plant
        plant_true = Plant.state_feedback(A_true, B_true)
        delta = fh.fh_achievability_residual(plant_true, resp)
        achieved = fh.fh_robust_response(resp, FhPerturbation(delta))
        # time-domain oracle: simulate the controller on the true plant with
        # an initial-state impulse (the leading block of the stacked w)
        from slskit.sim import SimScenario, simulate
        for j in range(n):
            ctrl = fh.fh_controller_apply(resp)
            trace = simulate(SimScenario(plant_true, ctrl, T, x0=np.eye(n)[j]))
            for t in range(T + 1):
                np.testing.assert_allclose(
                    trace.x[t], achieved.phi_x.block(t, 0)[:, j], atol=1e-9)

    def test_singular_diagonal_raises(self):
        delta = BltMatrix(1, 1, 1)
        delta.set_block(0, 0, np.array([[-1.0]]))
        resp = FhResponse(BltMatrix.identity(1, 1), BltMatrix(1, 1, 1))
        with pytest.raises(SingularPerturbation):
            fh.fh_robust_response(resp, FhPerturbation(delta))


class TestRobustLqr:
    def test_zero_bounds_reduce_to_nominal(self):
        plant = scalar_plant(0.7, 1.0)
        cost = FhCost(np.eye(1), np.eye(1), T=4)
        _, nominal = fh.fh_lqr_noise(plant, cost)
        _, bound = fh.fh_robust_lqr(plant, cost, UncertaintyBounds(0.0, 0.0))
        assert bound == pytest.approx(nominal, rel=1e-5)

    def test_bound_monotone_in_eps(self):
        plant = scalar_plant(0.7, 1.0)
        cost = FhCost(np.eye(1), np.eye(1), T=3)
        bounds = []
        for eps in (0.0, 0.02, 0.05, 0.1):
            _, b = fh.fh_robust_lqr(plant, cost, UncertaintyBounds(eps, eps))
            bounds.append(b)
        assert all(b2 >= b1 - 1e-6 for b1, b2 in zip(bounds, bounds[1:]))

    def test_certified_bound_dominates_sampled_plants(self):
        rng = np.random.default_rng(25)
        eps = 0.05
        a_hat, b_hat = 0.6, 1.0
        plant_hat = scalar_plant(a_hat, b_hat)
        cost = FhCost(np.eye(1), np.eye(1), T=4)
        resp, bound = fh.fh_robust_lqr(plant_hat, cost, UncertaintyBounds(eps, eps))
        worst = 0.0
        for _ in range(100):
            da = eps * rng.uniform(-1, 1)
            db = eps * rng.uniform(-1, 1)
            plant_true = scalar_plant(a_hat + da, b_hat + db)
            delta = fh.fh_achievability_residual(plant_true, resp)
            achieved = fh.fh_robust_response(resp, FhPerturbation(delta))
            worst = max(worst, fh.fh_objective(achieved, cost))
        assert worst <= bound * (1 + 1e-9)


class TestController:
    def test_zero_response_zero_control(self):
        resp = FhResponse(BltMatrix.identity(2, 3), BltMatrix(1, 2, 3))
        ctrl = fh.fh_controller_apply(resp)
        for t in range(4):
            assert np.all(ctrl.step(np.ones(2)) == 0.0)

    def test_first_control_is_diagonal_gain(self):
        rng = np.random.default_rng(26)
        plant = Plant.state_feedback(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)))
        resp = random_feedback_response(plant, 3, rng)
        ctrl = fh.fh_controller_apply(resp)
        x0 = rng.normal(size=2)
        np.testing.assert_allclose(ctrl.step(x0), resp.phi_u.block(0, 0) @ x0,
                                   atol=1e-12)

    def test_matches_inverse_based_gain(self):
        from slskit.lti import blt_inverse
        rng = np.random.default_rng(27)
        plant = Plant.state_feedback(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
        T = 4
        resp = random_feedback_response(plant, T, rng)
        K = resp.phi_u @ blt_inverse(resp.phi_x)
        xs = rng.normal(size=(T + 1, 2))
        ctrl = fh.fh_controller_apply(resp)
        us = np.array([ctrl.step(x) for x in xs])
        u_map = (K @ xs.reshape(-1)).reshape(T + 1, 2)
        # block-lower-triangular K: only causal part acts on the given xs
        np.testing.assert_allclose(us, u_map, atol=1e-10)

    def test_closed_loop_reproduces_response(self):
        from slskit.sim import SimScenario, simulate
        rng = np.random.default_rng(28)
        plant = Plant.state_feedback(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)))
        cost = FhCost(np.eye(2), np.eye(1), T=5)
        resp, _ = fh.fh_lqr_noise(plant, cost)
        w = rng.normal(size=(6, 2))
        ctrl = fh.fh_controller_apply(resp)
        trace = simulate(SimScenario(plant, ctrl, 5, w=w, x0=w[0] * 0))
        # stacked w convention: first block is x0 (zero here), shifted noise
        wstack = np.zeros(12)
        wstack[2:] = w[:5].reshape(-1)
        x_map = (resp.phi_x @ wstack).reshape(6, 2)
        u_map = (resp.phi_u @ wstack).reshape(6, 1)
        np.testing.assert_allclose(trace.x, x_map, atol=1e-9)
        np.testing.assert_allclose(trace.u, u_map, atol=1e-9)
