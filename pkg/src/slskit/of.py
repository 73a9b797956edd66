"""Output-feedback synthesis over the four-block FIR system response.

The response quadruple maps state and measurement disturbances to states
and inputs.  Achievability is two coupled recursion families: the "left"
family ties columns (how disturbances propagate through the plant), the
"right" family ties rows (how information propagates into signals).  The
synthesis ADMM alternates between a row-separable half (H2 objective,
actuator regularizer, optional worst-case row caps, right family) and a
column-separable half (sensor regularizer, left family), each solved on
locality-reduced index sets with cached affine proximal maps.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import (DimensionMismatch, IllPosedLoop, Infeasible,
                     MaxItersExceeded)
from .lti import FirTransferMatrix, h2_norm_sq, l1_norm


@dataclass
class OfResponse:
    """Strictly proper (xx, ux, xy) blocks plus a proper uy block."""

    phi_xx: FirTransferMatrix
    phi_ux: FirTransferMatrix
    phi_xy: FirTransferMatrix
    phi_uy: FirTransferMatrix

    def __post_init__(self):
        for name in ("phi_xx", "phi_ux", "phi_xy"):
            if not getattr(self, name).strictly_proper:
                raise DimensionMismatch(f"{name} must be strictly proper")
        if not (self.phi_xx.T == self.phi_ux.T == self.phi_xy.T == self.phi_uy.T):
            raise DimensionMismatch("block horizons differ")

    @property
    def T(self):
        return self.phi_xx.T

    @property
    def n(self):
        return self.phi_xx.shape[0]

    @property
    def nu(self):
        return self.phi_ux.shape[0]

    @property
    def ny(self):
        return self.phi_xy.shape[1]

    @classmethod
    def from_stack(cls, stack, n, nu, ny):
        """Build from a (T+1, n+nu, n+ny) component array."""
        xs = [np.array(s[:n, :n]) for s in stack]
        us = [np.array(s[n:, :n]) for s in stack]
        xy = [np.array(s[:n, n:]) for s in stack]
        uy = [np.array(s[n:, n:]) for s in stack]
        return cls(FirTransferMatrix(xs, True), FirTransferMatrix(us, True),
                   FirTransferMatrix(xy, True), FirTransferMatrix(uy, False))

    def stack(self):
        T = self.T
        out = np.zeros((T + 1, self.n + self.nu, self.n + self.ny))
        for k in range(T + 1):
            out[k, :self.n, :self.n] = self.phi_xx[k]
            out[k, self.n:, :self.n] = self.phi_ux[k]
            out[k, :self.n, self.n:] = self.phi_xy[k]
            out[k, self.n:, self.n:] = self.phi_uy[k]
        return out


@dataclass
class RegularizationWeights:
    """Per-actuator (mu) and per-sensor (lam) group-norm prices."""

    mu: np.ndarray = None
    lam: np.ndarray = None

    def __post_init__(self):
        for name in ("mu", "lam"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if np.any(val < 0):
                    raise DimensionMismatch(f"{name} entries must be non-negative")
                setattr(self, name, val)


def of_achievability_residual(plant, resp, include_tail=True):
    """Worst Frobenius defects of the left (column) and right (row)
    recursion families, returned as (left, right)."""
    A, B2, C2 = plant.A, plant.B2, plant.C2
    n = plant.n
    T = resp.T
    xx, ux, xy, uy = resp.phi_xx, resp.phi_ux, resp.phi_xy, resp.phi_uy
    left = np.linalg.norm(xx[1] - np.eye(n))
    left = max(left, np.linalg.norm(xy[1] - B2 @ uy[0]))
    for k in range(1, T):
        left = max(left, np.linalg.norm(xx[k + 1] - A @ xx[k] - B2 @ ux[k]))
        left = max(left, np.linalg.norm(xy[k + 1] - A @ xy[k] - B2 @ uy[k]))
    if include_tail:
        left = max(left, np.linalg.norm(A @ xx[T] + B2 @ ux[T]))
        left = max(left, np.linalg.norm(A @ xy[T] + B2 @ uy[T]))

    right = np.linalg.norm(xx[1] - np.eye(n))
    right = max(right, np.linalg.norm(ux[1] - uy[0] @ C2))
    for k in range(1, T):
        right = max(right, np.linalg.norm(xx[k + 1] - xx[k] @ A - xy[k] @ C2))
        right = max(right, np.linalg.norm(ux[k + 1] - ux[k] @ A - uy[k] @ C2))
    if include_tail:
        right = max(right, np.linalg.norm(xx[T] @ A + xy[T] @ C2))
        right = max(right, np.linalg.norm(ux[T] @ A + uy[T] @ C2))
    return float(left), float(right)


def of_construct_from_parts(plant, sf_pair, est_pair):
    """Stabilizing output-feedback response assembled from a state-feedback
    solution and a state-estimation solution.

    sf_pair = (phi_x1, phi_u1) solves the state-feedback constraint;
    est_pair = (phi_xx2, phi_xy2) solves the estimation constraint.  The
    four combination formulas are evaluated by FIR convolution.
    """
    A = plant.A
    phi_x1, phi_u1 = sf_pair
    phi_xx2, phi_xy2 = est_pair
    zxx2 = phi_xx2.z_shifted_diff(A)   # (zI - A) phi_xx2
    zxy2 = phi_xy2.z_shifted_diff(A)
    phi_xx = phi_x1 + phi_xx2 - phi_x1 @ zxx2
    phi_ux = phi_u1 - phi_u1 @ zxx2
    phi_xy = phi_xy2 - phi_x1 @ zxy2
    phi_uy = (phi_u1 @ zxy2).scale(-1.0)
    return OfResponse(phi_xx, phi_ux, phi_xy, phi_uy)


def dual_estimation_parts(plant, T):
    """FIR solution of the estimation constraint, via the transposed
    state-feedback synthesis on the dual pair (A', C2')."""
    from .locality import full_masks
    from .lti import Plant
    from .sf import synthesize_llqr

    dual = Plant.state_feedback(plant.A.T, plant.C2.T)
    resp, _ = synthesize_llqr(dual, full_masks(dual.graph, T))
    return resp.phi_x.transpose(), resp.phi_u.transpose()


def of_weighted_response(resp, plant):
    """[C1 D12] Phi [B1; D21] as an FIR transfer matrix."""
    comps = []
    for k in range(resp.T + 1):
        comps.append((plant.C1 @ resp.phi_xx[k] + plant.D12 @ resp.phi_ux[k]) @ plant.B1
                     + (plant.C1 @ resp.phi_xy[k] + plant.D12 @ resp.phi_uy[k]) @ plant.D21)
    return FirTransferMatrix(comps)


def of_h2_objective(resp, plant):
    """Squared H2 norm of [C1 D12] Phi [B1; D21]."""
    return h2_norm_sq(of_weighted_response(resp, plant))


# ---------------------------------------------------------------------------
# Controller realization


class OfController:
    """Filter-bank realization of K = Phi_uy - Phi_ux Phi_xx^{-1} Phi_xy.

    Internal signal buffers implement
        beta[t+1] = -sum_k Phi_xx[k+2] beta[t-k] - sum_k Phi_xy[k+1] ybar[t-k]
        u[t]      =  sum_k Phi_ux[k+1] beta[t-k] + sum_k Phi_uy[k] ybar[t-k]
    with ybar = y - D22 u closing the static loop when D22 is nonzero.
    Single-owner mutable: one instance per closed loop.
    """

    def __init__(self, resp, D22=None):
        self.resp = resp
        self.D22 = None if D22 is None or not np.any(D22) else np.atleast_2d(D22)
        if self.D22 is not None:
            loop = np.eye(resp.nu) + resp.phi_uy[0] @ self.D22
            try:
                self._loop_inv = np.linalg.inv(loop)
            except np.linalg.LinAlgError as exc:
                raise IllPosedLoop("I + Phi_uy[0] D22 is singular") from exc
            if np.linalg.cond(loop) > 1e12:
                raise IllPosedLoop("I + Phi_uy[0] D22 is numerically singular")
        self.reset()

    def reset(self):
        T = self.resp.T
        self._beta = [np.zeros(self.resp.n) for _ in range(max(T, 1))]
        self._ybar = [np.zeros(self.resp.ny) for _ in range(T)]
        self.last_internal = np.zeros(self.resp.n)

    def step(self, y, delta_beta=None):
        """Advance one step given the true measurement (including any
        direct feedthrough D22 u); the static loop is solved exactly."""
        resp = self.resp
        y = np.array(y, dtype=float).reshape(resp.ny)  # defensive copy: buffered
        partial = self._partial_control()
        if self.D22 is None:
            u = partial + resp.phi_uy[0] @ y
            ybar = y
        else:
            u = self._loop_inv @ (partial + resp.phi_uy[0] @ y)
            ybar = y - self.D22 @ u
        self._advance(ybar, delta_beta)
        return u

    def step_free(self, y_free, delta_beta=None):
        """Advance one step given the feedthrough-free measurement
        C2 x + D21 w; equals step() at the consistent true measurement
        y_free + D22 u, with the static loop eliminated algebraically."""
        resp = self.resp
        ybar = np.array(y_free, dtype=float).reshape(resp.ny)  # defensive copy
        u = self._partial_control() + resp.phi_uy[0] @ ybar
        self._advance(ybar, delta_beta)
        return u

    def _partial_control(self):
        resp = self.resp
        u = np.zeros(resp.nu)
        for k in range(resp.T):
            u += resp.phi_ux[k + 1] @ self._beta[k]
        for k in range(1, resp.T + 1):
            u += resp.phi_uy[k] @ self._ybar[k - 1]
        return u

    def _advance(self, ybar, delta_beta):
        resp = self.resp
        T = resp.T
        beta_next = np.zeros(resp.n)
        for k in range(T - 1):
            beta_next -= resp.phi_xx[k + 2] @ self._beta[k]
        beta_next -= resp.phi_xy[1] @ ybar
        for k in range(1, T):
            beta_next -= resp.phi_xy[k + 1] @ self._ybar[k - 1]
        if delta_beta is not None:
            beta_next = beta_next + np.asarray(delta_beta, dtype=float)
        self.last_internal = self._beta[0].copy()
        self._beta = [beta_next] + self._beta[:-1]
        if T:
            self._ybar = [ybar] + self._ybar[:-1]


def of_controller_realize(resp, D22=None):
    return OfController(resp, D22)


# ---------------------------------------------------------------------------
# Partially separable ADMM synthesis


class AffineProx:
    """Cached proximal map of a quadratic restricted to an affine set:
    prox(v) = argmin 0.5 x'Hx + (rho/2)||x - v||^2  s.t.  Aeq x = beq,
    precomputed as x = M v + c (one KKT inversion at construction)."""

    def __init__(self, H, Aeq, beq, rho, reg=1e-9):
        L = H.shape[0] if H is not None else Aeq.shape[1]
        m = Aeq.shape[0]
        Hfull = (H if H is not None else np.zeros((L, L))) + rho * np.eye(L)
        kkt = np.block([[Hfull, Aeq.T], [Aeq, np.zeros((m, m))]])
        rhs = np.zeros((L + m, L + beq.shape[1]))
        rhs[:L, :L] = rho * np.eye(L)
        rhs[L:, L:] = beq
        sol = None
        for attempt in range(3):
            mat = kkt.copy()
            if attempt >= 1:
                mat[L:, L:] -= reg * np.eye(m)  # absorb redundant rows
            try:
                with np.errstate(all="ignore"):
                    cand = (np.linalg.solve(mat, rhs) if attempt < 2
                            else np.linalg.lstsq(mat, rhs, rcond=None)[0])
                resid = np.linalg.norm(mat @ cand - rhs) / (1.0 + np.linalg.norm(rhs))
                if np.all(np.isfinite(cand)) and resid <= 1e-8:
                    sol = cand
                    break
            except np.linalg.LinAlgError:
                continue
        if sol is None:
            raise Infeasible("proximal-map KKT system could not be solved; "
                             "constraints are inconsistent beyond round-off")
        self.M = np.ascontiguousarray(sol[:L, :L])
        self.offsets = np.ascontiguousarray(sol[:L, L:].T)  # one per RHS column
        # a valid prox of a convex function is nonexpansive; reject silently
        # wrong factorizations outright
        if L and np.linalg.norm(self.M, 2) > 1.0 + 1e-7:
            raise Infeasible("proximal map is expansive: constraint block is "
                             "numerically inconsistent")

    def __call__(self, v, which=0):
        return self.M @ v + self.offsets[which]


def _prox_with_shrinks(affine2, shrinks, v, rho, iters=400, tol=1e-9, which=0,
                       state=None):
    """prox of f + sum(g_i) at v with parameter rho, where f is the cached
    quadratic/affine piece (affine2 = its prox at parameter 2 rho) and the
    g_i have exact proxes.  Inner two-block splitting; the g-block applies
    the shrink proxes sequentially (exact when a single shrink is present,
    the documented alternation otherwise).  Returns (w, state) with the
    g-block iterate, so shrink-induced zeros and caps hold exactly; pass
    the returned state back in to warm-start the next call.
    """
    if state is None:
        z = affine2(v, which)
        u = np.zeros_like(z)
    else:
        z, u = state
    w = z
    for _ in range(iters):
        x = affine2(0.5 * (v + z - u), which)
        w = x + u
        for g in shrinks:
            w = g(w)
        u = u + x - w
        z = w
        if np.linalg.norm(x - w) <= tol * max(1.0, np.linalg.norm(w)):
            break
    return w, (z, u)


@dataclass
class OfSynthesisResult:
    response: OfResponse
    objective: float
    h2_sq: float
    iters: int
    primal_residuals: list
    dual_residuals: list
    converged: bool
    state: tuple = None   # (Phi, Psi, Lam) arrays for warm starts
    wall_seconds: float = 0.0
    row_objective: float = 0.0
    col_objective: float = 0.0


class _RowWorker:
    """Phi-half subproblem for one row group: masked row variables across
    all components under the right (information) constraint family."""

    def __init__(self, plant, mask_stack, rows, rho, weight, mu=0.0,
                 l1_cap=None, w_col=None):
        T = mask_stack.shape[0] - 1
        n, ny = plant.n, plant.ny
        A, C2 = plant.A, plant.C2
        self.rows = list(map(int, rows))
        r0 = self.rows[0]
        self.is_u_row = r0 >= n
        self.vars = [(k, int(c)) for k in range(T + 1)
                     for c in np.nonzero(mask_stack[k, r0])[0]]
        self.index = {kc: i for i, kc in enumerate(self.vars)}
        L = len(self.vars)
        self.k_of = np.array([k for k, _ in self.vars], dtype=int)
        self.c_of = np.array([c for _, c in self.vars], dtype=int)

        Wc = np.vstack([plant.B1, plant.D21])
        G = Wc @ Wc.T
        H = np.zeros((L, L))
        for k in range(T + 1):
            sel = np.nonzero(self.k_of == k)[0]
            if len(sel):
                cols = self.c_of[sel]
                H[np.ix_(sel, sel)] = 2.0 * weight * G[np.ix_(cols, cols)]

        A_supp = A != 0
        C_supp = C2 != 0
        rows_eq, rhs = [], []
        q = len(self.rows)
        for k in range(T + 1):
            at_next = self.c_of[self.k_of == k + 1] if k < T else np.array([], int)
            prev_x = self.c_of[(self.k_of == k) & (self.c_of < n)]
            prev_y = self.c_of[(self.k_of == k) & (self.c_of >= n)]
            touched = set(int(c) for c in at_next if c < n)
            for m in prev_x:
                touched.update(map(int, np.nonzero(A_supp[m])[0]))
            for m in prev_y:
                touched.update(map(int, np.nonzero(C_supp[m - n])[0]))
            if k == 0 and not self.is_u_row:
                touched.update(self.rows)
            for c in sorted(touched):
                row_vec = np.zeros(L)
                used = False
                if k < T and (k + 1, c) in self.index:
                    row_vec[self.index[(k + 1, c)]] = 1.0
                    used = True
                for m in prev_x:
                    if A[m, c] != 0:
                        row_vec[self.index[(k, int(m))]] -= A[m, c]
                        used = True
                for m in prev_y:
                    if C2[m - n, c] != 0:
                        row_vec[self.index[(k, int(m))]] -= C2[m - n, c]
                        used = True
                b = np.zeros(q)
                if k == 0 and not self.is_u_row:
                    b = np.array([1.0 if c == r else 0.0 for r in self.rows])
                if used or np.any(b):
                    rows_eq.append(row_vec)
                    rhs.append(b)

        Aeq = np.array(rows_eq) if rows_eq else np.zeros((0, L))
        beq = np.array(rhs) if rhs else np.zeros((0, q))
        self.rho = rho
        self.mu = mu
        self.l1_cap = l1_cap
        self._shrinks = bool(mu > 0 or l1_cap is not None)
        self._prox = AffineProx(H, Aeq, beq, rho)
        self._prox2 = AffineProx(H, Aeq, beq, 2 * rho) if self._shrinks else None
        self._inner = {}
        if l1_cap is not None:
            self._wc = w_col[self.c_of]

    def solve(self, target, ri):
        if not self._shrinks:
            return self._prox(target, ri)
        shrinks = []
        if self.mu > 0:
            mu, rho = self.mu, self.rho
            shrinks.append(lambda w: numerics.group_soft_threshold(w, mu / rho))
        if self.l1_cap is not None:
            cap = self.l1_cap
            wc = self._wc
            active = wc > 1e-14

            def project(w):
                out = w.copy()
                out[active] = numerics.weighted_l1_ball_project(
                    w[active], wc[active], cap)
                return out

            shrinks.append(project)
        out, self._inner[ri] = _prox_with_shrinks(
            self._prox2, shrinks, target, self.rho, which=ri,
            state=self._inner.get(ri))
        return out

    def gather(self, stack, ri):
        return stack[self.k_of, self.rows[ri], self.c_of]

    def scatter(self, stack, ri, vals):
        stack[self.k_of, self.rows[ri], self.c_of] = vals


class _ColWorker:
    """Psi-half subproblem for one column group: masked column variables
    across all components under the left (plant) constraint family.
    lam may carry one sensor price per column of the group."""

    def __init__(self, plant, mask_stack, cols, rho, lam=None):
        T = mask_stack.shape[0] - 1
        n, nu = plant.n, plant.nu
        A, B2 = plant.A, plant.B2
        self.cols = list(map(int, cols))
        c0 = self.cols[0]
        self.is_y_col = c0 >= n
        self.vars = [(k, int(r)) for k in range(T + 1)
                     for r in np.nonzero(mask_stack[k, :, c0])[0]]
        self.index = {kr: i for i, kr in enumerate(self.vars)}
        L = len(self.vars)
        self.k_of = np.array([k for k, _ in self.vars], dtype=int)
        self.r_of = np.array([r for _, r in self.vars], dtype=int)

        A_supp = A != 0
        B_supp = B2 != 0
        rows_eq, rhs = [], []
        q = len(self.cols)
        for k in range(T + 1):
            at_next = self.r_of[self.k_of == k + 1] if k < T else np.array([], int)
            prev_x = self.r_of[(self.k_of == k) & (self.r_of < n)]
            prev_u = self.r_of[(self.k_of == k) & (self.r_of >= n)]
            touched = set(int(r) for r in at_next if r < n)
            for m in prev_x:
                touched.update(map(int, np.nonzero(A_supp[:, m])[0]))
            for m in prev_u:
                touched.update(map(int, np.nonzero(B_supp[:, m - n])[0]))
            if k == 0 and not self.is_y_col:
                touched.update(self.cols)
            for r in sorted(touched):
                row_vec = np.zeros(L)
                used = False
                if k < T and (k + 1, r) in self.index:
                    row_vec[self.index[(k + 1, r)]] = 1.0
                    used = True
                for m in prev_x:
                    if A[r, m] != 0:
                        row_vec[self.index[(k, int(m))]] -= A[r, m]
                        used = True
                for m in prev_u:
                    if B2[r, m - n] != 0:
                        row_vec[self.index[(k, int(m))]] -= B2[r, m - n]
                        used = True
                b = np.zeros(q)
                if k == 0 and not self.is_y_col:
                    b = np.array([1.0 if r == c else 0.0 for c in self.cols])
                if used or np.any(b):
                    rows_eq.append(row_vec)
                    rhs.append(b)

        Aeq = np.array(rows_eq) if rows_eq else np.zeros((0, L))
        beq = np.array(rhs) if rhs else np.zeros((0, q))
        self.rho = rho
        self.lam = np.zeros(q) if lam is None else np.asarray(lam, dtype=float)
        self._prox = AffineProx(None, Aeq, beq, rho)
        self._prox2 = (AffineProx(None, Aeq, beq, 2 * rho)
                       if np.any(self.lam > 0) else None)
        self._inner = {}

    def solve(self, target, ci):
        if self.lam[ci] <= 0:
            return self._prox(target, ci)
        lam, rho = float(self.lam[ci]), self.rho
        shrink = [lambda w: numerics.group_soft_threshold(w, lam / rho)]
        out, self._inner[ci] = _prox_with_shrinks(
            self._prox2, shrink, target, self.rho, which=ci,
            state=self._inner.get(ci))
        return out

    def gather(self, stack, ci):
        return stack[self.k_of, self.r_of, self.cols[ci]]

    def scatter(self, stack, ci, vals):
        stack[self.k_of, self.r_of, self.cols[ci]] = vals


def _row_weights(plant):
    Wz = np.hstack([plant.C1, plant.D12])
    G = Wz.T @ Wz
    if np.max(np.abs(G - np.diag(np.diag(G)))) > 1e-10:
        raise DimensionMismatch("[C1 D12] needs a diagonal Gram for the "
                                "row-separable H2 objective")
    return np.diag(G)


def _col_l1_weights(plant):
    """Per-source-column weights of the worst-case row cap; requires each
    disturbance source to drive exactly one noise channel."""
    Wc = np.vstack([plant.B1, plant.D21])
    if np.any(np.sum(Wc != 0, axis=1) > 1) or np.any(np.sum(Wc != 0, axis=0) > 1):
        raise DimensionMismatch("[B1; D21] must route one noise channel per "
                                "source for the row-separable worst-case cap")
    return np.sum(np.abs(Wc), axis=1)


def of_admm_synthesize(plant, masks, weights=None, l1_cap=None, cfg=None,
                       jobs=1, warm_start=None):
    """Localized output-feedback H2 synthesis by partially separable ADMM.

    The Phi-half solves per-row subproblems (H2 rows, actuator shrinkage,
    optional worst-case row caps, right achievability); the Psi-half
    solves per-column subproblems (sensor shrinkage, left achievability);
    a scaled dual update couples the halves.  All sub-updates run on
    locality-reduced index sets through proximal maps cached at setup.

    Raises Infeasible when the consensus gap certifiably plateaus above
    tolerance, MaxItersExceeded (carrying the partial result) when the
    budget runs out while still converging.
    """
    cfg = cfg or numerics.AdmmConfig()
    weights = weights or RegularizationWeights()
    n, nu, ny = plant.n, plant.nu, plant.ny
    T = masks.T
    mask_stack = masks.stacked()
    rho = cfg.rho
    row_weight = _row_weights(plant)
    w_col = _col_l1_weights(plant) if l1_cap is not None else None

    graph = masks.graph
    row_groups = [np.asarray(g) for g in graph.node_states if len(g)]
    row_groups += [np.array([n + i]) for g in graph.node_inputs for i in g]
    col_groups = [np.asarray(g) for g in graph.node_states if len(g)]
    col_groups += [np.array([n + j for j in g]) for g in graph.node_outputs if len(g)]

    t0 = time.time()

    def make_row(rows):
        r0 = int(rows[0])
        mu_i = float(weights.mu[r0 - n]) if (r0 >= n and weights.mu is not None) else 0.0
        return _RowWorker(plant, mask_stack, rows, rho, float(row_weight[r0]),
                          mu_i, l1_cap, w_col)

    def make_col(cols):
        if int(cols[0]) >= n and weights.lam is not None:
            lam_vec = np.array([weights.lam[c - n] for c in cols], dtype=float)
        else:
            lam_vec = None
        return _ColWorker(plant, mask_stack, cols, rho, lam_vec)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            row_workers = list(pool.map(make_row, row_groups))
            col_workers = list(pool.map(make_col, col_groups))
    else:
        row_workers = [make_row(g) for g in row_groups]
        col_workers = [make_col(g) for g in col_groups]

    if warm_start is not None:
        Phi, Psi, Lam = (np.array(warm_start[0]), np.array(warm_start[1]),
                         np.array(warm_start[2]))
    else:
        Phi = np.zeros((T + 1, n + nu, n + ny))
        Psi = np.zeros_like(Phi)
        Lam = np.zeros_like(Phi)

    def run_half(workers, stack, target, members):
        def work(w):
            for i in range(len(getattr(w, members))):
                w.scatter(stack, i, w.solve(w.gather(target, i), i))
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(work, workers))
        else:
            for w in workers:
                work(w)

    primal_hist, dual_hist = [], []
    converged = False
    scale = np.sqrt(max(mask_stack.sum(), 1))
    r_primal = r_dual = np.inf
    for it in range(cfg.max_iters):
        run_half(row_workers, Phi, Psi - Lam, "rows")
        Psi_prev = Psi.copy()
        run_half(col_workers, Psi, Phi + Lam, "cols")
        Lam = Lam + Phi - Psi
        r_primal = float(np.linalg.norm(Phi - Psi))
        r_dual = rho * float(np.linalg.norm(Psi - Psi_prev))
        primal_hist.append(r_primal)
        dual_hist.append(r_dual)
        tol_p = cfg.eps_abs * scale + cfg.eps_rel * max(np.linalg.norm(Phi),
                                                        np.linalg.norm(Psi))
        tol_d = cfg.eps_abs * scale + cfg.eps_rel * rho * np.linalg.norm(Lam)
        if r_primal <= tol_p and r_dual <= tol_d:
            converged = True
            break

    resp = OfResponse.from_stack(Phi, n, nu, ny)
    h2 = of_h2_objective(resp, plant)
    row_obj, col_obj = _objective_parts(resp, plant, weights, h2)
    result = OfSynthesisResult(resp, float(row_obj + col_obj), float(h2),
                               len(primal_hist), primal_hist, dual_hist,
                               converged, (Phi, Psi, Lam), time.time() - t0,
                               float(row_obj), float(col_obj))
    if not converged:
        tail = primal_hist[-max(len(primal_hist) // 4, 2):]
        plateaued = tail[-1] > 0.99 * tail[0] and tail[-1] > 100 * cfg.eps_abs * scale
        if plateaued:
            raise Infeasible(
                f"consensus gap plateaued at {tail[-1]:.3e}: constraint sets "
                "appear disjoint under the given masks", residual=tail[-1])
        raise MaxItersExceeded(
            f"ADMM still converging after {cfg.max_iters} iterations "
            f"(primal {r_primal:.3e})", result=result)
    return result


def _objective_parts(resp, plant, weights, h2):
    """Row-separable and column-separable objective components."""
    row_obj = h2
    if weights.mu is not None:
        for i in range(resp.nu):
            row_obj += weights.mu[i] * np.sqrt(
                sum(float(resp.phi_ux[k][i] @ resp.phi_ux[k][i]
                          + resp.phi_uy[k][i] @ resp.phi_uy[k][i])
                    for k in range(resp.T + 1)))
    col_obj = 0.0
    if weights.lam is not None:
        for j in range(resp.ny):
            col_obj += weights.lam[j] * np.sqrt(
                sum(float(resp.phi_xy[k][:, j] @ resp.phi_xy[k][:, j]
                          + resp.phi_uy[k][:, j] @ resp.phi_uy[k][:, j])
                    for k in range(resp.T + 1)))
    return row_obj, col_obj


def mixed_h2_l1_sweep(plant, masks, gamma_grid, weights=None, cfg=None, jobs=1):
    """Trade-off sweep of the localized mixed H2/worst-case problem:
    re-solves the H2 synthesis under the given l1 row caps, warm-started
    point to point.  Infeasible points are recorded and the sweep goes on.
    """
    points = []
    state = None
    for gamma in gamma_grid:
        try:
            res = of_admm_synthesize(plant, masks, weights=weights,
                                     l1_cap=(None if np.isinf(gamma) else float(gamma)),
                                     cfg=cfg, jobs=jobs, warm_start=state)
            state = res.state
            achieved = l1_norm(of_weighted_response(res.response, plant))
            points.append({"gamma": float(gamma), "h2_sq": res.h2_sq,
                           "l1": float(achieved), "iters": res.iters,
                           "feasible": True})
        except (Infeasible, MaxItersExceeded):
            points.append({"gamma": float(gamma), "h2_sq": float("nan"),
                           "l1": float("nan"), "iters": 0, "feasible": False})
    return points
