import numpy as np
import pytest

from slskit import lti
from slskit.errors import BadDiagonal, DimensionMismatch


def random_fir(rng, rows, cols, T, strictly_proper=True):
    comps = [np.zeros((rows, cols))] if strictly_proper else [rng.normal(size=(rows, cols))]
    comps += [rng.normal(size=(rows, cols)) for _ in range(T)]
    return lti.FirTransferMatrix(comps, strictly_proper)


class TestDownshift:
    def test_definition(self):
        Z = lti.downshift(1, 2)
        expect = np.zeros((3, 3))
        expect[1, 0] = expect[2, 1] = 1.0
        np.testing.assert_allclose(Z.data, expect)

    def test_square_shifts_twice(self):
        Z = lti.downshift(2, 3)
        Z2 = Z @ Z
        for t in range(4):
            for s in range(t + 1):
                expect = np.eye(2) if t - s == 2 else np.zeros((2, 2))
                np.testing.assert_allclose(Z2.block(t, s), expect)

    def test_transpose_advances_signal(self):
        Z = lti.downshift(2, 3)
        w = np.arange(8.0)
        advanced = Z.data.T @ w
        np.testing.assert_allclose(advanced[:6], w[2:])
        np.testing.assert_allclose(advanced[6:], 0.0)


class TestBltInverse:
    def test_identity(self):
        I = lti.BltMatrix.identity(2, 3)
        np.testing.assert_allclose(lti.blt_inverse(I).data, I.data)

    def test_neumann_scalar(self):
        # (I + Z)^-1 = I - Z + Z^2 for scalar blocks, T = 2
        Z = lti.downshift(1, 2)
        M = lti.BltMatrix.identity(1, 2) + Z
        inv = lti.blt_inverse(M)
        expect = lti.BltMatrix.identity(1, 2).data - Z.data + (Z @ Z).data
        np.testing.assert_allclose(inv.data, expect, atol=1e-12)

    def test_random_strictly_causal(self):
        rng = np.random.default_rng(5)
        T, d = 4, 3
        M = lti.BltMatrix.identity(d, T)
        for t in range(1, T + 1):
            for s in range(t):
                M.set_block(t, s, rng.normal(size=(d, d)))
        inv = lti.blt_inverse(M)
        np.testing.assert_allclose((M @ inv).data, np.eye((T + 1) * d), atol=1e-10)

    def test_bad_diagonal(self):
        M = lti.BltMatrix.identity(2, 2)
        M.set_block(1, 1, 2 * np.eye(2))
        with pytest.raises(BadDiagonal):
            lti.blt_inverse(M)


class TestFirToBlt:
    def test_static_identity(self):
        G = lti.FirTransferMatrix.constant(np.eye(2))
        M = lti.fir_to_blt(G, 2)
        np.testing.assert_allclose(M.data, np.eye(6))

    def test_single_delay(self):
        A = np.array([[0.0, 1.0], [2.0, 3.0]])
        G = lti.FirTransferMatrix.from_tail([A])
        M = lti.fir_to_blt(G, 2)
        Z = lti.downshift(2, 2)
        blockdiag = lti.BltMatrix(2, 2, 2, np.kron(np.eye(3), A))
        np.testing.assert_allclose(M.data, (Z @ blockdiag).data)

    def test_convolution_identity(self):
        rng = np.random.default_rng(6)
        G = random_fir(rng, 2, 3, 2, strictly_proper=False)
        T = 5
        w = rng.normal(size=(T + 1, 3))
        lifted = lti.fir_to_blt(G, T) @ lti.stack_signal(w)
        direct = G.convolve_signal(w)
        np.testing.assert_allclose(lti.unstack_signal(lifted, 2), direct, atol=1e-12)

    def test_ring_homomorphism(self):
        rng = np.random.default_rng(7)
        T = 4
        G = random_fir(rng, 2, 2, 2, strictly_proper=False)
        H = random_fir(rng, 2, 2, 2, strictly_proper=False)
        left = lti.fir_to_blt(G, T) @ lti.fir_to_blt(H, T)
        right = lti.fir_to_blt((G @ H).truncate(T), T)
        np.testing.assert_allclose(left.data, right.data, atol=1e-12)


class TestNorms:
    def test_h2_zero(self):
        G = lti.FirTransferMatrix.zeros(2, 2, 3, strictly_proper=True)
        assert lti.h2_norm_sq(G) == 0.0

    def test_h2_identity_component(self):
        G = lti.FirTransferMatrix.from_tail([np.eye(2)])
        assert lti.h2_norm_sq(G) == pytest.approx(2.0)

    def test_h2_column_separable(self):
        rng = np.random.default_rng(8)
        G = random_fir(rng, 3, 4, 3, strictly_proper=False)
        total = lti.h2_norm_sq(G)
        parts = 0.0
        for cols in ([0, 2], [1], [3]):
            sub = lti.FirTransferMatrix([c[:, cols] for c in G.components])
            parts += lti.h2_norm_sq(sub)
        assert total == pytest.approx(parts, rel=1e-12)

    def test_h2_monte_carlo_energy(self):
        rng = np.random.default_rng(9)
        G = random_fir(rng, 2, 2, 3, strictly_proper=False)
        N = 100_000
        w = rng.normal(size=(N, 2))
        y = G.convolve_signal(w)
        energy_rate = float(np.mean(np.sum(y[G.T:] ** 2, axis=1)))
        assert energy_rate == pytest.approx(lti.h2_norm_sq(G), rel=0.02)

    def test_l1_zero_and_simple(self):
        assert lti.l1_norm(lti.FirTransferMatrix.zeros(1, 2, 2, True)) == 0.0
        G = lti.FirTransferMatrix.constant(np.array([[1.0, -2.0]]))
        assert lti.l1_norm(G) == pytest.approx(3.0)

    def test_l1_row_separable(self):
        rng = np.random.default_rng(10)
        G = random_fir(rng, 4, 2, 3, strictly_proper=False)
        total = lti.l1_norm(G)
        parts = max(
            lti.l1_norm(lti.FirTransferMatrix([c[rows, :] for c in G.components]))
            for rows in ([0, 1], [2], [3]))
        assert total == pytest.approx(parts, rel=1e-12)

    def test_l1_sign_matched_worst_case(self):
        rng = np.random.default_rng(11)
        G = random_fir(rng, 2, 2, 3, strictly_proper=False)
        target = lti.l1_norm(G)
        # random inputs never exceed it
        sup = 0.0
        for _ in range(100):
            w = rng.uniform(-1, 1, size=(10, 2))
            sup = max(sup, float(np.max(np.abs(G.convolve_signal(w)))))
        assert sup <= target + 1e-12
        # sign-matched input attains it
        row = int(np.argmax([sum(np.sum(np.abs(c[i])) for c in G.components)
                             for i in range(2)]))
        tau = G.T
        w = np.zeros((tau + 1, 2))
        for k in range(G.T + 1):
            w[tau - k] = np.sign(G.components[k][row])
        y = G.convolve_signal(w)
        assert abs(y[tau, row]) == pytest.approx(target, rel=1e-12)

    def test_blt_spectral_norms(self):
        assert lti.blt_spectral_norm(lti.BltMatrix.identity(2, 3)) == pytest.approx(1.0)
        assert lti.blt_spectral_norm(lti.downshift(2, 3)) == pytest.approx(1.0)
        two = lti.BltMatrix(2, 2, 3, 2.0 * np.eye(8))
        assert lti.blt_spectral_norm(two) == pytest.approx(2.0)


class TestSpectralRadius:
    def test_diagonal(self):
        assert lti.spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9)

    def test_nilpotent(self):
        Z = lti.downshift(2, 2)
        assert lti.spectral_radius(Z.data) == pytest.approx(0.0, abs=1e-9)

    def test_chain(self):
        from slskit.benchmarks import make_chain59
        assert lti.spectral_radius(make_chain59().A) == pytest.approx(1.0768, abs=1e-3)


class TestPlant:
    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            lti.Plant(np.eye(2), np.eye(2), np.ones((3, 1)), np.eye(2),
                      np.zeros((2, 2)), np.zeros((2, 1)), np.eye(2),
                      np.zeros((2, 2)), np.zeros((2, 1)))

    def test_graph_support_check(self):
        from slskit.locality import SystemGraph
        A = np.array([[1.0, 0.5], [0.0, 1.0]])
        graph = SystemGraph(2, [], [[0], [1]], [[0], []])
        with pytest.raises(DimensionMismatch):
            lti.Plant.state_feedback(A, np.array([[1.0], [0.0]]), graph=graph)

    def test_state_feedback_defaults(self):
        A = np.array([[1.0, 0.5], [0.0, 1.0]])
        plant = lti.Plant.state_feedback(A, np.eye(2))
        assert plant.ny == 2 and plant.nz == 4 and plant.nw == 2
        np.testing.assert_allclose(plant.C1.T @ plant.D12, np.zeros((2, 2)))
