"""Dense linear-algebra and first-order optimization kernels.

Everything in this module is a pure function of its value inputs, so all
kernels are safe to call concurrently.  Synthesis modules build on three
primitives: equality-constrained QPs (KKT solves), spectral projections,
and a generic two-block ADMM loop.
"""

import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import MaxItersExceeded, NoConvergence, NotStabilizable, SingularKkt


@contextmanager
def _quiet_linalg():
    # singular first attempts are part of the regularization ladder
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        yield

KKT_REGULARIZATION = 1e-10


@dataclass
class AdmmConfig:
    """Penalty and stopping parameters for :func:`admm_two_block`."""

    rho: float = 1.0
    eps_abs: float = 1e-6
    eps_rel: float = 1e-4
    max_iters: int = 10000

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class GoldenSectionConfig:
    lower: float
    upper: float
    tol: float = 1e-4
    max_iters: int = 200

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def solve_equality_qp(H, f, Aeq, beq, reg=KKT_REGULARIZATION):
    """Minimize 0.5 x'Hx + f'x subject to Aeq x = beq via one KKT solve.

    `f` and `beq` may carry multiple right-hand-side columns (2-D arrays);
    the solution then has one column per RHS.  If the plain KKT matrix is
    singular, H is regularized by +reg*I and the solve retried once.

    Raises SingularKkt when the regularized system still fails or the
    constraint residual exceeds 1e-8 * (1 + |beq|).
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Aeq = np.asarray(Aeq, dtype=float)
    if Aeq.ndim == 1:
        Aeq = Aeq.reshape(1, -1)
    n = H.shape[0]
    m = Aeq.shape[0]
    f = np.zeros(n) if f is None else np.asarray(f, dtype=float)
    vector_rhs = f.ndim == 1 and np.asarray(beq).ndim <= 1
    f2 = f.reshape(n, -1)
    b2 = np.asarray(beq, dtype=float).reshape(m, -1) if m else np.zeros((0, f2.shape[1]))
    ncols = max(f2.shape[1], b2.shape[1])
    if f2.shape[1] == 1 and ncols > 1:
        f2 = np.repeat(f2, ncols, axis=1)
    if m and b2.shape[1] == 1 and ncols > 1:
        b2 = np.repeat(b2, ncols, axis=1)

    rhs = np.vstack([-f2, b2]) if m else -f2

    def attempt(Hmat, dual_reg):
        # -dual_reg I in the (2,2) block absorbs redundant equality rows
        kkt = (np.block([[Hmat, Aeq.T], [Aeq, -dual_reg * np.eye(m)]])
               if m else Hmat)
        try:
            with _quiet_linalg(), np.errstate(all="ignore"):
                lu = scipy.linalg.lu_factor(kkt)
                sol = scipy.linalg.lu_solve(lu, rhs)
                for _ in range(2):  # iterative refinement vs mild ill-conditioning
                    r = rhs - kkt @ sol
                    if not np.all(np.isfinite(r)) \
                            or np.max(np.abs(r)) < 1e-14 * max(1.0, np.max(np.abs(rhs))):
                        break
                    sol = sol + scipy.linalg.lu_solve(lu, r)
        except (scipy.linalg.LinAlgError, ValueError):
            return None, np.inf
        if not np.all(np.isfinite(sol)):
            return None, np.inf
        x = sol[:n]
        resid = np.linalg.norm(Aeq @ x - b2) if m else 0.0
        return x, resid

    tol = 1e-8 * (1.0 + np.linalg.norm(b2)) if m else np.inf
    last_resid = np.inf
    for Hmat, dual in ((H, 0.0), (H + reg * np.eye(n), 0.0), (H + reg * np.eye(n), reg)):
        x, resid = attempt(Hmat, dual)
        if x is not None and resid <= tol:
            return x[:, 0] if vector_rhs else x
        last_resid = min(last_resid, resid)

    # Last resort for badly conditioned KKT systems: nullspace method.
    # The constraint residual is then as good as the least-squares solve.
    x0, *_ = np.linalg.lstsq(Aeq, b2, rcond=None)
    _, s, Vt = np.linalg.svd(Aeq)
    rank = int(np.sum(s > max(Aeq.shape) * np.finfo(float).eps * (s[0] if s.size else 0)))
    N = Vt[rank:].T
    if N.shape[1]:
        Hn = N.T @ H @ N
        rhs_n = -N.T @ (H @ x0 + f2)
        try:
            z = np.linalg.solve(Hn, rhs_n)
        except np.linalg.LinAlgError:
            z = np.linalg.solve(Hn + reg * np.eye(Hn.shape[0]), rhs_n)
        x0 = x0 + N @ z
    resid = np.linalg.norm(Aeq @ x0 - b2)
    if np.all(np.isfinite(x0)) and resid <= tol:
        return x0[:, 0] if vector_rhs else x0
    raise SingularKkt(
        f"KKT solve failed (best constraint residual {min(last_resid, resid):.3e})")


class KktSolver:
    """Pre-factorized KKT system for repeated solves with varying RHS.

    Used by ADMM loops where H and Aeq are fixed while the linear term
    changes every iteration.
    """

    def __init__(self, H, Aeq, beq, reg=KKT_REGULARIZATION):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        Aeq = np.asarray(Aeq, dtype=float)
        if Aeq.ndim == 1:
            Aeq = Aeq.reshape(1, -1)
        self.n = H.shape[0]
        self.m = Aeq.shape[0]
        self.beq = np.asarray(beq, dtype=float).reshape(self.m, -1)

        def factor(primal_reg, dual_reg):
            kkt = np.block([[H + primal_reg * np.eye(self.n), Aeq.T],
                            [Aeq, -dual_reg * np.eye(self.m)]])
            try:
                with _quiet_linalg():
                    lu = scipy.linalg.lu_factor(kkt)
            except (scipy.linalg.LinAlgError, ValueError):
                return None
            self._lu = lu
            # LU of a singular KKT can succeed with inf/nan pivots; probe once.
            return np.all(np.isfinite(self.solve(np.zeros((self.n, 1)))))

        if not (factor(0.0, 0.0) or factor(reg, 0.0) or factor(reg, reg)):
            raise SingularKkt("KKT system singular after regularization")

    def solve(self, minus_f):
        """Solve for linear term f = -minus_f; returns x with beq kept fixed."""
        minus_f = minus_f.reshape(self.n, -1)
        ncols = minus_f.shape[1]
        b = self.beq if self.beq.shape[1] == ncols else np.repeat(self.beq, ncols, axis=1)
        rhs = np.vstack([minus_f, b])
        return scipy.linalg.lu_solve(self._lu, rhs)[: self.n]


def svd(M):
    """Full SVD returning (U, sigma, V) with M = U @ diag(sigma) @ V.T.

    Singular values come back non-negative and sorted descending.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence("SVD failed to converge") from exc
    return U, s, Vt.T


def spectral_norm(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def spectral_ball_project(M, gamma):
    """Nearest matrix (Frobenius) with spectral norm at most gamma.

    Clips the singular values of M at gamma; a no-op when M is already
    inside the ball.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    U, s, V = svd(M)
    if s.size == 0 or s[0] <= gamma:
        return M.copy()
    k = min(M.shape)
    return (U[:, :k] * np.minimum(s, gamma)) @ V[:, :k].T


def l1_ball_project(v, radius):
    """Euclidean projection onto the l1 ball of the given radius (sort-based)."""
    v = np.asarray(v, dtype=float)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    a = np.abs(v.ravel())
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(u) + 1)
    rho = np.max(np.nonzero(u * ks > (css - radius))[0]) + 1
    theta = (css[rho - 1] - radius) / rho
    return (np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)).reshape(v.shape)


def weighted_l1_ball_project(v, weights, radius):
    """Euclidean projection onto {x : sum_c w_c |x_c| <= radius}, w_c > 0.

    Solves for the threshold on the piecewise-linear trade-off curve:
    x_c = sign(v_c) max(|v_c| - theta w_c, 0) with theta chosen so the
    weighted l1 value meets the radius.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(weights, dtype=float)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    a = np.abs(v)
    if float(w @ a) <= radius:
        return v.copy()
    t = a / w
    order = np.argsort(t)[::-1]
    wa = (w * a)[order]
    ww = (w * w)[order]
    csum_wa = np.cumsum(wa)
    csum_ww = np.cumsum(ww)
    thetas = (csum_wa - radius) / csum_ww
    t_sorted = t[order]
    k = np.nonzero(thetas < t_sorted)[0]
    theta = thetas[k[-1]] if len(k) else thetas[-1]
    return np.sign(v) * np.maximum(a - theta * w, 0.0)


def group_soft_threshold(v, kappa):
    """Proximal map of kappa * ||.||_2: shrink v toward zero as a block."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm <= kappa:
        return np.zeros_like(v)
    return (1.0 - kappa / nrm) * v


@dataclass
class AdmmResult:
    phi: np.ndarray
    psi: np.ndarray
    lam: np.ndarray
    iters: int
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    converged: bool = False

    @property
    def solution(self):
        return self.psi


def admm_two_block(prox_f, prox_g, x0, cfg=None):
    """Two-block ADMM on min f(Phi) + g(Psi) s.t. Phi = Psi.

    `prox_f(v, rho)` must return argmin f(x) + rho/2 ||x - v||^2 (same for
    prox_g).  Iterates the three scaled-dual updates

        Phi  <- prox_f(Psi - Lam)
        Psi  <- prox_g(Phi + Lam)
        Lam  <- Lam + Phi - Psi

    and stops once the primal residual ||Phi - Psi|| falls below
    eps_abs + eps_rel * max(||Phi||, ||Psi||) and the dual residual
    rho ||Psi_k+1 - Psi_k|| below the analogous bound.

    Returns (solution, AdmmResult); the solution is the Psi iterate so
    indicator-type g constraints hold exactly.  Raises MaxItersExceeded
    (carrying the last AdmmResult) when the budget runs out.
    """
    cfg = cfg or AdmmConfig()
    rho = cfg.rho
    phi = np.array(x0, dtype=float)
    psi = phi.copy()
    lam = np.zeros_like(phi)
    result = AdmmResult(phi, psi, lam, 0)
    for k in range(cfg.max_iters):
        phi = prox_f(psi - lam, rho)
        psi_new = prox_g(phi + lam, rho)
        lam = lam + phi - psi_new
        r_primal = float(np.linalg.norm(phi - psi_new))
        r_dual = rho * float(np.linalg.norm(psi_new - psi))
        psi = psi_new
        result = AdmmResult(phi, psi, lam, k + 1,
                            result.primal_residuals + [r_primal],
                            result.dual_residuals + [r_dual])
        scale_p = max(np.linalg.norm(phi), np.linalg.norm(psi))
        scale_d = rho * np.linalg.norm(lam)
        if (r_primal <= cfg.eps_abs + cfg.eps_rel * scale_p
                and r_dual <= cfg.eps_abs + cfg.eps_rel * scale_d):
            result.converged = True
            return psi, result
    raise MaxItersExceeded(
        f"ADMM did not converge in {cfg.max_iters} iterations "
        f"(primal {result.primal_residuals[-1]:.3e}, dual {result.dual_residuals[-1]:.3e})",
        result=result)


def golden_section_min(h, cfg):
    """Golden-section search for the minimizer of a unimodal scalar function.

    Returns (x_star, h(x_star)) with |x_star - true minimizer| below
    cfg.tol for unimodal h.  Function values of +inf are allowed (treated
    as 'worse than anything finite'), which lets callers embed infeasible
    regions at one end of the bracket.
    """
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = cfg.lower, cfg.upper
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    hc, hd = h(c), h(d)
    best = min((hc, c), (hd, d), key=lambda t: t[0])
    for _ in range(cfg.max_iters):
        if (b - a) <= cfg.tol:
            x = 0.5 * (a + b)
            hx = h(x)
            if hx <= best[0]:
                return x, hx
            return best[1], best[0]
        # ties: finite plateaus keep the left interval (flat tails sit at the
        # upper end of our gamma objectives); infinite ties keep the right
        # (the infeasible region is always the left end of the bracket).
        if hc < hd or (hc == hd and np.isfinite(hc)):
            b, d, hd = d, c, hc
            c = b - inv_phi * (b - a)
            hc = h(c)
        else:
            a, c, hc = c, d, hd
            d = a + inv_phi * (b - a)
            hd = h(d)
        for val, x in ((hc, c), (hd, d)):
            if val < best[0]:
                best = (val, x)
    raise MaxItersExceeded(f"golden section interval still {b - a:.3e} wide")


def dare_solve(A, B, Q, R):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Returns (P, K) with

        P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q,      u = -K x,

    so the closed loop A - BK has spectral radius below one.  Backed by
    the LAPACK solver with an explicit residual and closed-loop check;
    raises NotStabilizable when either fails.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotStabilizable(f"Riccati solve failed: {exc}") from exc
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    resid = P - (A.T @ P @ A - A.T @ P @ B @ K + Q)
    rel = np.linalg.norm(resid) / max(1.0, np.linalg.norm(P))
    if rel > 1e-9:
        raise NotStabilizable(f"Riccati residual {rel:.3e} too large")
    cl_radius = np.max(np.abs(np.linalg.eigvals(A - B @ K)))
    if cl_radius >= 1.0:
        raise NotStabilizable(f"closed loop spectral radius {cl_radius:.6f} >= 1")
    return P, K


def dlyap(A, W):
    """Solve X = A X A' + W (discrete Lyapunov); A must be stable."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return scipy.linalg.solve_discrete_lyapunov(A, W)
