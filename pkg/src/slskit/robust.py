"""FIR-horizon robustness: perturbed achievability, small-gain certificates,
achieved closed-loop responses, robust LQR under norm-bounded model error,
and the end-to-end suboptimality inequality check.

The central object is the achievability defect Delta of an approximate
response pair; the loop built from that pair behaves like the nominal one
pushed through (I + Delta)^{-1}, so every certificate here is a norm
statement about Delta.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import firopt, numerics
from .errors import DivergentSeries, Infeasible, PremiseViolated
from .lti import FirTransferMatrix, l1_norm, spectral_radius

GSS_GAMMA = numerics.GoldenSectionConfig(1e-6, 0.999, tol=2e-3)


@dataclass
class FirPerturbation:
    delta: FirTransferMatrix


@dataclass
class RobustCertificate:
    hinf_gain: float
    l1_gain: float
    l1_transpose_gain: float
    certified: bool

    @property
    def verdict(self):
        return "certified" if self.certified else "uncertified"

    @property
    def min_gain(self):
        return min(self.hinf_gain, self.l1_gain, self.l1_transpose_gain)


def perturbed_residual(plant, resp):
    """Achievability defect Delta with (zI - A) Phi_x - B2 Phi_u = I + Delta.

    Component 0 carries the Phi_x[1] - I defect; component t the recursion
    defect at lag t (including the FIR tail at t = T)."""
    A, B2 = plant.A, plant.B2
    T = resp.T
    comps = [resp.phi_x[1] - np.eye(plant.n)]
    for t in range(1, T + 1):
        comps.append(resp.phi_x[t + 1] - A @ resp.phi_x[t] - B2 @ resp.phi_u[t])
    return FirPerturbation(FirTransferMatrix(comps))


def hinf_norm(G, lift_factor=4, n_grid=512):
    return firopt.hinf_norm(G, lift_factor, n_grid)


def small_gain_certify(pert):
    """Small-gain stability certificate: all of the Hinf, L1 and transposed
    L1 gains of Delta must sit below one."""
    delta = pert.delta
    h = hinf_norm(delta)
    l1 = l1_norm(delta)
    l1t = l1_norm(delta.transpose())
    return RobustCertificate(h, l1, l1t, max(h, l1, l1t) < 1.0)


def delta_plus_identity(delta):
    """I + Delta as an FIR transfer matrix."""
    eye = FirTransferMatrix.constant(np.eye(delta.shape[0]))
    return eye + delta


def fir_inverse_truncated(X, horizon):
    """Leading `horizon` spectral components of X^{-1} for proper X with
    invertible X[0], by recursive deconvolution (exact Neumann series when
    X = I + strictly-proper Delta)."""
    lead = np.linalg.inv(X[0])
    comps = [lead]
    for t in range(1, horizon + 1):
        acc = np.zeros_like(X[0])
        for s in range(1, min(t, X.T) + 1):
            acc += X[s] @ comps[t - s]
        comps.append(-lead @ acc)
    return FirTransferMatrix(comps)


@dataclass
class AchievedResponse:
    phi_x: FirTransferMatrix
    phi_u: FirTransferMatrix
    tail_bound: float
    certificate: RobustCertificate


def achieved_response(resp, pert, horizon=None):
    """Actually achieved maps [Phi_x; Phi_u] (I + Delta)^{-1}, truncated.

    The truncation error of the Neumann series is reported through the
    geometric tail bound ||Delta||^(H+1) / (1 - ||Delta||) in the smallest
    certified norm.  Raises DivergentSeries when no tracked norm of Delta
    is below one; an uncertified-but-contractive case is allowed and the
    certificate is attached for the caller to inspect.
    """
    cert = small_gain_certify(pert)
    if cert.min_gain >= 1.0:
        raise DivergentSeries(
            f"all gains of Delta at least one (min {cert.min_gain:.3f})")
    H = horizon if horizon is not None else 8 * max(resp.T, 1)
    inv = fir_inverse_truncated(delta_plus_identity(pert.delta), H)
    gain = cert.min_gain
    tail = gain ** (H + 1) / (1.0 - gain)
    return AchievedResponse((resp.phi_x @ inv).truncate(H),
                            (resp.phi_u @ inv).truncate(H),
                            float(tail), cert)


# ---------------------------------------------------------------------------
# Robust LQR with model uncertainty


def robust_lqr(plant_est, bounds, T, Q=None, R=None, gss=GSS_GAMMA, admm_cfg=None):
    """Robust LQR on estimates (A_hat, B_hat) with spectral model error at
    most (eps_a, eps_b): golden section over the small-gain budget gamma of

        1/(1 - gamma) * min { ||W Phi||_H2 : FIR-achievable on estimates,
                              sqrt(2) ||[eps_A Phi_x; eps_B Phi_u]||_Hinf <= gamma }.

    Any feasible output (gamma < 1) robustly stabilizes every admissible
    plant.  Returns (response, achieved gamma, certified cost), with the
    certificate evaluated at the achieved (post-hoc, 4T-lift) Hinf value.
    """
    from .sf import psd_sqrt

    n, nu = plant_est.n, plant_est.nu
    Q = np.eye(n) if Q is None else np.atleast_2d(Q)
    R = np.eye(nu) if R is None else np.atleast_2d(R)
    W2 = np.block([[psd_sqrt(Q), np.zeros((n, nu))],
                   [np.zeros((nu, n)), psd_sqrt(R)]])
    Wscale = np.block([[bounds.eps_a * np.eye(n), np.zeros((n, nu))],
                       [np.zeros((nu, n)), bounds.eps_b * np.eye(nu)]])

    layout = firopt.FirLayout(n, nu, T)
    Aeq, beq = layout.achievability(plant_est.A, plant_est.B2, tail=True)
    Hq = layout.weight_gram(W2)
    cfg = admm_cfg or numerics.AdmmConfig(rho=1.0, eps_abs=1e-9, eps_rel=1e-8,
                                          max_iters=4000)
    cache = {}

    def inner(gamma):
        key = round(gamma, 12)
        if key not in cache:
            if bounds.eps_a == 0 and bounds.eps_b == 0:
                cache[key] = numerics.solve_equality_qp(
                    Hq, np.zeros(layout.n_vars), Aeq, beq)
            else:
                cap = layout.toeplitz_cap(Wscale, gamma / math.sqrt(2.0))
                try:
                    cache[key] = firopt.solve_qp_spectral(Hq, None, Aeq, beq, [cap], cfg)
                except Infeasible:
                    cache[key] = None
        return cache[key]

    def achieved_gamma(v):
        if bounds.eps_a == 0 and bounds.eps_b == 0:
            return 0.0
        resp = layout.to_response(v)
        return math.sqrt(2.0) * hinf_norm(Wscale @ resp.stacked())

    def certified(v):
        g = achieved_gamma(v)
        if g >= 1.0:
            return np.inf
        return math.sqrt(max(float(v @ Hq @ v), 0.0)) / (1.0 - g)

    def h(gamma):
        v = inner(gamma)
        return np.inf if v is None else certified(v)

    g_star, _ = numerics.golden_section_min(h, gss)
    v = inner(g_star)
    if v is None:
        for gamma in np.linspace(g_star, gss.upper, 8):
            v = inner(gamma)
            if v is not None:
                break
    if v is None:
        raise Infeasible("no small-gain budget gamma in (0, 1) is feasible")
    g_ach = achieved_gamma(v)
    if g_ach >= 1.0:
        raise Infeasible(f"achieved Hinf budget {g_ach:.3f} is not contractive")
    return layout.to_response(v), float(g_ach), float(certified(v))


# ---------------------------------------------------------------------------
# Suboptimality inequality (robustly-learned LQR)


def closed_loop_h2_cost(A, B, resp, Q=None, R=None):
    """LQR cost rate of the FIR controller realized from `resp` on the true
    plant (A, B) with unit white process noise, by a Lyapunov solve on the
    (plant + filter-bank buffer) closed loop."""
    from .sf import sf_controller_realize

    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.atleast_2d(Q)
    R = np.eye(B.shape[1]) if R is None else np.atleast_2d(R)
    ctrl = sf_controller_realize(resp)
    M = ctrl.closed_loop_matrix(A, B)
    if spectral_radius(M) >= 1.0:
        return np.inf
    dim = M.shape[0]
    Bw = np.zeros((dim, n))
    Bw[:n, :n] = np.eye(n)
    X = numerics.dlyap(M, Bw @ Bw.T)
    # u as a function of the loop state, mirroring the controller algebra
    T = resp.T
    dhat = np.zeros((n, dim))
    dhat[:, :n] = np.eye(n)
    for k in range(1, T):
        dhat[:, n + (k - 1) * n: n + k * n] = -resp.phi_x[k + 1]
    U = resp.phi_u[1] @ dhat
    for k in range(1, T):
        U[:, n + (k - 1) * n: n + k * n] += resp.phi_u[k + 1]
    Qbar = np.zeros((dim, dim))
    Qbar[:n, :n] = Q
    Qbar += U.T @ R @ U
    return float(np.trace(Qbar @ X))


def resolvent_hinf(M, n_grid=2048):
    """Hinf norm of (zI - M)^{-1} for a stable matrix, by a dense frequency
    grid with golden-section refinement around the grid peak."""
    n = M.shape[0]
    omegas = np.linspace(0.0, np.pi, n_grid)

    def value(omega):
        return float(np.linalg.norm(
            np.linalg.inv(np.exp(1j * omega) * np.eye(n) - M), 2))

    vals = [value(om) for om in omegas]
    k = int(np.argmax(vals))
    lo = omegas[max(0, k - 1)]
    hi = omegas[min(n_grid - 1, k + 1)]
    om_star, neg = numerics.golden_section_min(
        lambda om: -value(om), numerics.GoldenSectionConfig(lo, hi + 1e-12, tol=1e-8))
    return max(max(vals), -neg)


@dataclass
class Thm41Report:
    premise_value: float
    premise_holds: bool
    relative_error: float
    rhs_bound: float
    satisfied: bool


def thm41_bound_check(A, B, resp, bounds, Q=None, R=None):
    """Verify the relative LQR-cost inequality for a robustly synthesized
    controller against the true plant:

        (J(A, B, K_hat) - J*) / J* <= 5 (eps_A + eps_B ||K*||) ||(zI - A - B K*)^{-1}||_Hinf,

    valid when the right-hand side's dimensionless product is at most 1/5.
    The premise failing is reported, not raised.
    """
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.atleast_2d(Q)
    R = np.eye(B.shape[1]) if R is None else np.atleast_2d(R)
    P, K = numerics.dare_solve(A, B, Q, R)
    j_star = float(np.trace(P))
    k_norm = numerics.spectral_norm(K)
    resolv = resolvent_hinf(A - B @ K)
    premise = (bounds.eps_a + bounds.eps_b * k_norm) * resolv
    rhs = 5.0 * premise
    j_hat = closed_loop_h2_cost(A, B, resp, Q, R)
    rel = (j_hat - j_star) / j_star
    # 1e-9 absorbs round-off in the eps = 0 equality case
    return Thm41Report(float(premise), premise <= 0.2, float(rel), float(rhs),
                       bool(premise <= 0.2 and rel <= rhs + 1e-9))
