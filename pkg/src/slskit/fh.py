"""Finite-horizon synthesis over block-lower-triangular system responses.

The closed loop over t = 0..T is described by one big linear map from the
stacked disturbance [x0; w0; ...; w_{T-1}] to the stacked state and input
trajectories.  Achievability of a response pair is the affine condition
(I - ZA) Phi_x - ZB Phi_u = I, and every objective here weights the pair
with per-step cost matrices.

Time-varying dynamics are accepted everywhere a plant is: pass a tuple
(A_list, B_list) with one matrix per step instead of a Plant.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import firopt, numerics
from .errors import (DimensionMismatch, Infeasible, MaxItersExceeded,
                     SingularPerturbation)
from .lti import BltMatrix

GSS_TAU = numerics.GoldenSectionConfig(1e-6, 0.999, tol=2e-3)


@dataclass
class FhCost:
    """Per-step quadratic weights and disturbance covariance.

    Q and R may be single matrices (repeated over the horizon) or lists
    with one entry per step t = 0..T; u_T is included in the cost, so R
    has T+1 entries as well.  sigma_w weights the driving-noise block
    columns (lags 1..T); the initial state has its own covariance
    sigma_x0, zero by default, so the reported noise-LQR objective is the
    energy of the response to the disturbance sequence alone.
    """

    Q: object
    R: object
    T: int
    sigma_w: np.ndarray = None
    sigma_x0: np.ndarray = None

    def __post_init__(self):
        self.Q = self._expand(self.Q)
        self.R = self._expand(self.R)
        for name in ("sigma_w", "sigma_x0"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.atleast_2d(np.asarray(val, dtype=float)))

    def _expand(self, M):
        if isinstance(M, (list, tuple)):
            if len(M) != self.T + 1:
                raise DimensionMismatch(f"need {self.T + 1} per-step weights")
            return [np.atleast_2d(np.asarray(Mi, dtype=float)) for Mi in M]
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return [M] * (self.T + 1)


@dataclass
class UncertaintyBounds:
    eps_a: float
    eps_b: float

    def __post_init__(self):
        if self.eps_a < 0 or self.eps_b < 0:
            raise DimensionMismatch("uncertainty bounds must be non-negative")


@dataclass
class FhPerturbation:
    """Block-lower-triangular achievability defect."""

    delta: BltMatrix


@dataclass
class FhResponse:
    phi_x: BltMatrix
    phi_u: BltMatrix

    def __post_init__(self):
        if self.phi_x.T != self.phi_u.T or self.phi_x.col_dim != self.phi_u.col_dim:
            raise DimensionMismatch("response pair dimensions differ")

    @property
    def T(self):
        return self.phi_x.T

    @property
    def n(self):
        return self.phi_x.row_dim

    @property
    def nu(self):
        return self.phi_u.row_dim


def _ab_lists(system, T):
    if isinstance(system, tuple):
        A_list, B_list = system
        return ([np.atleast_2d(np.asarray(A, dtype=float)) for A in A_list],
                [np.atleast_2d(np.asarray(B, dtype=float)) for B in B_list])
    return [system.A] * T, [system.B2] * T


def fh_achievability_residual(plant, resp):
    """(I - ZA) Phi_x - ZB Phi_u - I as a BltMatrix; ~0 iff achievable."""
    A_list, B_list = _ab_lists(plant, resp.T)
    n, T = resp.n, resp.T
    if A_list[0].shape[0] != n:
        raise DimensionMismatch("plant and response state dimensions differ")
    R = BltMatrix(n, n, T)
    for t in range(T + 1):
        for s in range(t + 1):
            blk = resp.phi_x.block(t, s).copy()
            if t >= 1 and s <= t - 1:
                blk -= A_list[t - 1] @ resp.phi_x.block(t - 1, s)
                blk -= B_list[t - 1] @ resp.phi_u.block(t - 1, s)
            if t == s:
                blk -= np.eye(n)
            R.set_block(t, s, blk)
    return R


# ---------------------------------------------------------------------------
# Quadratic objectives (LQR)


def _column_kkt(A_list, B_list, cost, j, n, p):
    """KKT data for block column j: variables are Phi_x^{t,j} (t > j) and
    Phi_u^{t,j} (t >= j); Phi_x^{j,j} = I is substituted into the RHS."""
    T = cost.T
    x_steps = list(range(j + 1, T + 1))
    u_steps = list(range(j, T + 1))
    x_off = {t: i * n for i, t in enumerate(x_steps)}
    base_u = len(x_steps) * n
    u_off = {t: base_u + i * p for i, t in enumerate(u_steps)}
    L = base_u + len(u_steps) * p

    H = np.zeros((L, L))
    for t in x_steps:
        H[x_off[t]:x_off[t] + n, x_off[t]:x_off[t] + n] = cost.Q[t]
    for t in u_steps:
        H[u_off[t]:u_off[t] + p, u_off[t]:u_off[t] + p] = cost.R[t]

    m = len(x_steps) * n
    Aeq = np.zeros((m, L))
    beq = np.zeros((m, n))
    for i, t in enumerate(x_steps):
        r = i * n
        Aeq[r:r + n, x_off[t]:x_off[t] + n] = np.eye(n)
        if t - 1 in x_off:
            Aeq[r:r + n, x_off[t - 1]:x_off[t - 1] + n] = -A_list[t - 1]
        Aeq[r:r + n, u_off[t - 1]:u_off[t - 1] + p] = -B_list[t - 1]
        if t == j + 1:
            beq[r:r + n] = A_list[j]
    return H, Aeq, beq, x_off, u_off, L


def fh_lqr_noise(plant, cost):
    """LQR with driving noise: minimize the weighted Frobenius norm of the
    full response pair subject to achievability.

    Decomposes into independent per-block-column equality QPs; the
    reported objective folds in the disturbance covariance.
    """
    T = cost.T
    A_list, B_list = _ab_lists(plant, T)
    n = A_list[0].shape[0]
    p = B_list[0].shape[1]
    phi_x = BltMatrix(n, n, T)
    phi_u = BltMatrix(p, n, T)
    for j in range(T + 1):
        phi_x.set_block(j, j, np.eye(n))
        if j == T:
            continue
        H, Aeq, beq, x_off, u_off, L = _column_kkt(A_list, B_list, cost, j, n, p)
        V = numerics.solve_equality_qp(H, np.zeros((L, n)), Aeq, beq)
        for t, off in x_off.items():
            phi_x.set_block(t, j, V[off:off + n])
        for t, off in u_off.items():
            phi_u.set_block(t, j, V[off:off + p])
    resp = FhResponse(phi_x, phi_u)
    return resp, fh_objective(resp, cost)


def fh_objective(resp, cost):
    """Covariance-weighted quadratic cost of a response pair: the trace of
    each block column's weighted Gram against sigma_w (driving noise,
    columns 1..T) or sigma_x0 (initial state, column 0)."""
    total = 0.0
    n = resp.n
    for s in range(resp.T + 1):
        sigma = cost.sigma_x0 if s == 0 else cost.sigma_w
        if sigma is not None and not np.any(sigma):
            continue
        G = np.zeros((n, n))
        for t in range(s, resp.T + 1):
            bx = resp.phi_x.block(t, s)
            bu = resp.phi_u.block(t, s)
            G += bx.T @ cost.Q[t] @ bx + bu.T @ cost.R[t] @ bu
        if s == 0:
            if cost.sigma_x0 is None:
                continue
            G = G @ cost.sigma_x0
        elif cost.sigma_w is not None:
            G = G @ cost.sigma_w
        total += float(np.trace(G))
    return total


@dataclass
class FhX0Solution:
    """First-block-column response and the induced optimal trajectory."""

    phi_x0: np.ndarray   # ((T+1) n, n)
    phi_u0: np.ndarray   # ((T+1) p, n)
    x: np.ndarray        # (T+1, n)
    u: np.ndarray        # (T+1, p)
    objective: float


def fh_lqr_x0(plant, cost, x0):
    """LQR with known initial state and no driving noise: only the first
    block column of the response matters, solved as one equality QP."""
    T = cost.T
    A_list, B_list = _ab_lists(plant, T)
    n = A_list[0].shape[0]
    p = B_list[0].shape[1]
    x0 = np.asarray(x0, dtype=float).reshape(n)
    H, Aeq, beq, x_off, u_off, L = _column_kkt(A_list, B_list, cost, 0, n, p)
    V = numerics.solve_equality_qp(H, np.zeros((L, n)), Aeq, beq)
    phi_x0 = np.zeros(((T + 1) * n, n))
    phi_u0 = np.zeros(((T + 1) * p, n))
    phi_x0[:n] = np.eye(n)
    for t, off in x_off.items():
        phi_x0[t * n:(t + 1) * n] = V[off:off + n]
    for t, off in u_off.items():
        phi_u0[t * p:(t + 1) * p] = V[off:off + p]
    x = (phi_x0 @ x0).reshape(T + 1, n)
    u = (phi_u0 @ x0).reshape(T + 1, p)
    obj = sum(float(x[t] @ cost.Q[t] @ x[t] + u[t] @ cost.R[t] @ u[t])
              for t in range(T + 1))
    return FhX0Solution(phi_x0, phi_u0, x, u, obj)


# ---------------------------------------------------------------------------
# Minimax objectives (Hinf / L1) via level bisection


class _BltLayout:
    """Packed lower-triangle variables for one response pair."""

    def __init__(self, n, p, T):
        self.n, self.p, self.T = n, p, T
        self.x_off = {}
        self.u_off = {}
        off = 0
        for t in range(T + 1):
            for s in range(t + 1):
                self.x_off[(t, s)] = off
                off += n * n
                self.u_off[(t, s)] = off
                off += p * n
        self.n_vars = off

    def achievability(self, A_list, B_list):
        n, p = self.n, self.p
        rows = []
        rhs = []
        nsq = n * n
        for t in range(self.T + 1):
            for s in range(t + 1):
                row = np.zeros((nsq, self.n_vars))
                ox = self.x_off[(t, s)]
                row[:, ox:ox + nsq] = np.eye(nsq)
                if t >= 1 and s <= t - 1:
                    oxp = self.x_off[(t - 1, s)]
                    row[:, oxp:oxp + nsq] = -np.kron(A_list[t - 1], np.eye(n))
                    oup = self.u_off[(t - 1, s)]
                    row[:, oup:oup + p * n] = -np.kron(B_list[t - 1], np.eye(n))
                rows.append(row)
                rhs.append(np.eye(n).ravel() if t == s else np.zeros(nsq))
        return np.vstack(rows), np.concatenate(rhs)

    def unpack(self, v):
        phi_x = BltMatrix(self.n, self.n, self.T)
        phi_u = BltMatrix(self.p, self.n, self.T)
        for (t, s), off in self.x_off.items():
            phi_x.set_block(t, s, v[off:off + self.n * self.n].reshape(self.n, self.n))
        for (t, s), off in self.u_off.items():
            phi_u.set_block(t, s, v[off:off + self.p * self.n].reshape(self.p, self.n))
        return FhResponse(phi_x, phi_u)

    def weighted_cap(self, cost, radius, project=None, measure=None):
        """Cap on the stacked weighted response [Qc^1/2 Phi_x; Rc^1/2 Phi_u]."""
        n, p, T = self.n, self.p, self.T
        from .sf import psd_sqrt
        Qh = [psd_sqrt(cost.Q[t]) for t in range(T + 1)]
        Rh = [psd_sqrt(cost.R[t]) for t in range(T + 1)]
        nrows = (T + 1) * (n + p)
        ncols = (T + 1) * n
        urow0 = (T + 1) * n

        def apply(v):
            M = np.zeros((nrows, ncols))
            for (t, s), off in self.x_off.items():
                M[t * n:(t + 1) * n, s * n:(s + 1) * n] = \
                    Qh[t] @ v[off:off + n * n].reshape(n, n)
            for (t, s), off in self.u_off.items():
                M[urow0 + t * p:urow0 + (t + 1) * p, s * n:(s + 1) * n] = \
                    Rh[t] @ v[off:off + p * n].reshape(p, n)
            return M

        def adjoint(M):
            g = np.zeros(self.n_vars)
            for (t, s), off in self.x_off.items():
                g[off:off + n * n] = (Qh[t].T @ M[t * n:(t + 1) * n,
                                                  s * n:(s + 1) * n]).ravel()
            for (t, s), off in self.u_off.items():
                g[off:off + p * n] = (Rh[t].T @ M[urow0 + t * p:urow0 + (t + 1) * p,
                                                  s * n:(s + 1) * n]).ravel()
            return g

        gram = np.zeros((self.n_vars, self.n_vars))
        for (t, s), off in self.x_off.items():
            gram[off:off + n * n, off:off + n * n] = np.kron(Qh[t].T @ Qh[t], np.eye(n))
        for (t, s), off in self.u_off.items():
            gram[off:off + p * n, off:off + p * n] = np.kron(Rh[t].T @ Rh[t], np.eye(n))
        return firopt.SpectralCap(apply, adjoint, gram, radius,
                                  project=project, measure=measure)

    def scaled_pair_cap(self, eps_a, eps_b, radius):
        """Cap on [eps_a Phi_x; eps_b Phi_u] stacked as one dense matrix."""
        scaled = FhCost(Q=eps_a ** 2 * np.eye(self.n),
                        R=eps_b ** 2 * np.eye(self.p), T=self.T)
        return self.weighted_cap(scaled, radius)


def _rows_l1_project(M, radius):
    out = np.empty_like(M)
    for i in range(M.shape[0]):
        out[i] = numerics.l1_ball_project(M[i], radius)
    return out


def _rows_l1_value(M):
    return float(np.max(np.sum(np.abs(M), axis=1))) if M.size else 0.0


def _bisect_level(layout, Aeq, beq, make_cap, hi, v_hi, rel_tol, admm_cfg):
    """Shrink the constraint level until infeasible; v_hi must be feasible
    at the initial level hi (it seeds the incumbent)."""
    cfg = admm_cfg or numerics.AdmmConfig(rho=1.0, eps_abs=1e-9, eps_rel=1e-8,
                                          max_iters=4000)
    lo = 0.0
    best = v_hi
    while hi - lo > rel_tol * max(hi, 1e-12):
        mid = 0.5 * (lo + hi)
        try:
            v = firopt.solve_qp_spectral(np.zeros((layout.n_vars,) * 2), None,
                                         Aeq, beq, [make_cap(mid)], cfg)
            best, hi = v, mid
        except Infeasible:
            lo = mid
    return best


def fh_hinf(plant, cost, rel_tol=1e-3, admm_cfg=None):
    """Minimize the l2->l2 gain of the weighted stacked response by
    bisection on the level with an ADMM feasibility solve per level."""
    T = cost.T
    A_list, B_list = _ab_lists(plant, T)
    layout = _BltLayout(A_list[0].shape[0], B_list[0].shape[1], T)
    Aeq, beq = layout.achievability(A_list, B_list)
    lqr_resp, _ = fh_lqr_noise(plant, cost)
    cap0 = layout.weighted_cap(cost, 1.0)
    v_hi = layout_pack(layout, lqr_resp)
    hi = numerics.spectral_norm(cap0.apply(v_hi)) * (1 + 1e-9)
    v = _bisect_level(layout, Aeq, beq, lambda r: layout.weighted_cap(cost, r),
                      hi, v_hi, rel_tol, admm_cfg)
    achieved = numerics.spectral_norm(cap0.apply(v))
    return layout.unpack(v), float(achieved)


def fh_l1(plant, cost, rel_tol=1e-3, admm_cfg=None):
    """Minimize the worst row absolute sum (linf->linf gain) of the weighted
    stacked response; row-separable level constraint, same bisection."""
    T = cost.T
    A_list, B_list = _ab_lists(plant, T)
    layout = _BltLayout(A_list[0].shape[0], B_list[0].shape[1], T)
    Aeq, beq = layout.achievability(A_list, B_list)
    lqr_resp, _ = fh_lqr_noise(plant, cost)
    cap0 = layout.weighted_cap(cost, 1.0)
    v_hi = layout_pack(layout, lqr_resp)
    hi = _rows_l1_value(cap0.apply(v_hi)) * (1 + 1e-9)

    def make_cap(r):
        return layout.weighted_cap(cost, r, project=_rows_l1_project,
                                   measure=_rows_l1_value)

    v = _bisect_level(layout, Aeq, beq, make_cap, hi, v_hi, rel_tol, admm_cfg)
    achieved = _rows_l1_value(cap0.apply(v))
    return layout.unpack(v), float(achieved)


def layout_pack(layout, resp):
    v = np.zeros(layout.n_vars)
    for (t, s), off in layout.x_off.items():
        v[off:off + layout.n * layout.n] = resp.phi_x.block(t, s).ravel()
    for (t, s), off in layout.u_off.items():
        v[off:off + layout.p * layout.n] = resp.phi_u.block(t, s).ravel()
    return v


# ---------------------------------------------------------------------------
# Robustness


def blt_inverse_general(M):
    """Inverse of a BLT operator with invertible (not necessarily identity)
    diagonal blocks, by block forward substitution."""
    d = M.row_dim
    diag_inv = []
    for t in range(M.T + 1):
        blk = M.block(t, t)
        try:
            diag_inv.append(np.linalg.inv(blk))
        except np.linalg.LinAlgError as exc:
            raise SingularPerturbation(f"diagonal block {t} is singular") from exc
    X = BltMatrix(d, d, M.T)
    for s in range(M.T + 1):
        for t in range(s, M.T + 1):
            if t == s:
                X.set_block(t, s, diag_inv[t])
            else:
                acc = -sum(M.block(t, tau) @ X.block(tau, s) for tau in range(s, t))
                X.set_block(t, s, diag_inv[t] @ acc)
    return X


def fh_robust_response(resp, pert):
    """Maps actually achieved by the controller built from an approximate
    response: [Phi_x; Phi_u] (I + Delta)^{-1}."""
    n = resp.n
    eyeD = BltMatrix(n, n, resp.T, np.eye((resp.T + 1) * n))
    inv = blt_inverse_general(eyeD + pert.delta)
    return FhResponse(resp.phi_x @ inv, resp.phi_u @ inv)


def fh_robust_lqr(plant_est, cost, bounds, gss=GSS_TAU, admm_cfg=None):
    """Robust LQR on estimated dynamics: quasi-convex upper bound via an
    outer search over the contraction budget tau of

        (sum_t tau^t)^2 * min { ||W Phi||_F^2 : achievable on estimates,
                                sqrt(2) ||[eps_A Phi_x; eps_B Phi_u]|| <= tau }.

    Returns (response, certified upper bound) where the certificate is
    evaluated at the achieved (not requested) contraction.
    """
    T = cost.T
    A_list, B_list = _ab_lists(plant_est, T)
    layout = _BltLayout(A_list[0].shape[0], B_list[0].shape[1], T)
    Aeq, beq = layout.achievability(A_list, B_list)
    Hq = layout.weighted_cap(cost, 1.0).gram
    scale_cap = layout.scaled_pair_cap(bounds.eps_a, bounds.eps_b, 1.0)
    cfg = admm_cfg or numerics.AdmmConfig(rho=1.0, eps_abs=1e-9, eps_rel=1e-8,
                                          max_iters=4000)
    cache = {}

    def inner(tau):
        key = round(tau, 12)
        if key not in cache:
            try:
                cache[key] = firopt.solve_qp_spectral(
                    Hq, None, Aeq, beq,
                    [scale_cap.with_radius(tau / math.sqrt(2.0))], cfg)
            except Infeasible:
                cache[key] = None
        return cache[key]

    def certified(v):
        tau_ach = math.sqrt(2.0) * numerics.spectral_norm(scale_cap.apply(v))
        if tau_ach >= 1.0:
            return np.inf
        series = ((1.0 - tau_ach ** T) / (1.0 - tau_ach)) if tau_ach < 1 else np.inf
        resp = layout.unpack(v)
        return series ** 2 * fh_objective(resp, cost)

    def h(tau):
        v = inner(tau)
        return np.inf if v is None else certified(v)

    tau_star, _ = numerics.golden_section_min(h, gss)
    v = inner(tau_star)
    if v is None:
        # feasible region may sit right of the final bracket midpoint
        for tau in np.linspace(tau_star, gss.upper, 8):
            v = inner(tau)
            if v is not None:
                break
    if v is None:
        raise Infeasible("no contraction budget tau in (0, 1) is feasible")
    return layout.unpack(v), float(certified(v))


# ---------------------------------------------------------------------------
# Controller


class FhController:
    """Time-varying controller realizing K = Phi_u Phi_x^{-1} through the
    disturbance-reconstruction recursion (no matrix inverse is formed)."""

    def __init__(self, resp):
        self.resp = resp
        self.reset()

    def reset(self):
        self.t = 0
        self._w = []
        self.last_internal = np.zeros(self.resp.n)

    def step(self, x):
        t = self.t
        if t > self.resp.T:
            raise MaxItersExceeded(f"controller horizon {self.resp.T} exhausted")
        x = np.asarray(x, dtype=float).reshape(self.resp.n)
        what = x.copy()
        for s in range(t):
            what -= self.resp.phi_x.block(t, s) @ self._w[s]
        self._w.append(what)
        u = np.zeros(self.resp.nu)
        for s in range(t + 1):
            u += self.resp.phi_u.block(t, s) @ self._w[s]
        self.last_internal = what
        self.t += 1
        return u


def fh_controller_apply(resp):
    return FhController(resp)
