"""Shared solver machinery for quadratic programs over FIR response
variables with spectral-norm caps on linear images of the variable.

The variable vector packs the spectral components of a strictly proper
response pair: for k = 1..T, row-major vec of Phi_x[k] followed by
Phi_u[k].  Spectral caps are handled by consensus ADMM: each cap owns a
duplicate matrix variable tied to a linear image of the packed vector,
whose proximal step is a singular-value clip.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import numerics
from .errors import Infeasible
from .lti import FirTransferMatrix, fir_to_blt, blt_spectral_norm


@dataclass
class SpectralCap:
    """Constraint on a linear image of v: project() must be the Euclidean
    projection onto the feasible ball (spectral-norm clip by default;
    override for other row/column-structured balls).

    gram is the matrix of v -> ||apply(v)||_F^2 (the operator's normal
    matrix), used to keep the ADMM v-update a single cached KKT solve.
    """

    apply: callable
    adjoint: callable
    gram: np.ndarray
    radius: float
    shift: np.ndarray = None   # constant offset: image is apply(v) + shift
    project: callable = None   # default: spectral ball
    measure: callable = None   # constraint value of an image (default sigma_max)

    def image(self, v):
        img = self.apply(v)
        return img + self.shift if self.shift is not None else img

    def proj(self, M):
        if self.project is not None:
            return self.project(M, self.radius)
        return numerics.spectral_ball_project(M, self.radius)

    def value(self, M):
        return self.measure(M) if self.measure else numerics.spectral_norm(M)

    def with_radius(self, r):
        return replace(self, radius=float(r))


class FirLayout:
    """Index layout for the packed (Phi_x, Phi_u) component variables."""

    def __init__(self, n, nu, T):
        self.n, self.nu, self.T = n, nu, T
        self.per_k = n * n + nu * n
        self.n_vars = T * self.per_k

    def x_slice(self, k):
        base = (k - 1) * self.per_k
        return slice(base, base + self.n * self.n)

    def u_slice(self, k):
        base = (k - 1) * self.per_k + self.n * self.n
        return slice(base, base + self.nu * self.n)

    def pack(self, resp):
        v = np.zeros(self.n_vars)
        for k in range(1, self.T + 1):
            v[self.x_slice(k)] = resp.phi_x[k].ravel()
            v[self.u_slice(k)] = resp.phi_u[k].ravel()
        return v

    def to_response(self, v):
        from .sf import SfResponse
        phi_x = [np.zeros((self.n, self.n))]
        phi_u = [np.zeros((self.nu, self.n))]
        for k in range(1, self.T + 1):
            phi_x.append(v[self.x_slice(k)].reshape(self.n, self.n))
            phi_u.append(v[self.u_slice(k)].reshape(self.nu, self.n))
        return SfResponse(FirTransferMatrix(phi_x, True), FirTransferMatrix(phi_u, True))

    # -- constraints ----------------------------------------------------
    def achievability(self, A, B2, tail=True):
        """Dense rows of the componentwise achievability recursion.

        tail=True adds the exact-FIR boundary A Phi_x[T] + B2 Phi_u[T] = 0;
        tail=False leaves the boundary to a virtual-actuation slack.
        """
        n, nu, T = self.n, self.nu, self.T
        nsq = n * n
        rows = nsq * (1 + (T - 1) + (1 if tail else 0))
        Aeq = np.zeros((rows, self.n_vars))
        beq = np.zeros(rows)
        Aeq[:nsq, self.x_slice(1)] = np.eye(nsq)
        beq[:nsq] = np.eye(n).ravel()
        kronA = np.kron(A, np.eye(n))
        kronB = np.kron(B2, np.eye(n))
        r = nsq
        for k in range(1, T):
            Aeq[r:r + nsq, self.x_slice(k + 1)] = np.eye(nsq)
            Aeq[r:r + nsq, self.x_slice(k)] = -kronA
            Aeq[r:r + nsq, self.u_slice(k)] = -kronB
            r += nsq
        if tail:
            Aeq[r:r + nsq, self.x_slice(T)] = kronA
            Aeq[r:r + nsq, self.u_slice(T)] = kronB
        return Aeq, beq

    # -- quadratic forms --------------------------------------------------
    def weight_gram(self, W):
        """Quadratic form of sum_k ||W [Phi_x[k]; Phi_u[k]]||_F^2."""
        H = np.zeros((self.n_vars, self.n_vars))
        G = np.kron(W.T @ W, np.eye(self.n))
        for k in range(1, self.T + 1):
            lo = (k - 1) * self.per_k
            H[lo:lo + self.per_k, lo:lo + self.per_k] = G
        return H

    # -- spectral caps ----------------------------------------------------
    def boundary_map(self, A, B2, radius=1.0):
        """Cap on V(v) = -(A Phi_x[T] + B2 Phi_u[T])."""
        n, T = self.n, self.T

        def apply(v):
            return -(A @ v[self.x_slice(T)].reshape(n, n)
                     + B2 @ v[self.u_slice(T)].reshape(self.nu, n))

        def adjoint(M):
            g = np.zeros(self.n_vars)
            g[self.x_slice(T)] = (-A.T @ M).ravel()
            g[self.u_slice(T)] = (-B2.T @ M).ravel()
            return g

        gram = np.zeros((self.n_vars, self.n_vars))
        AB = np.hstack([A, B2])
        lo = (T - 1) * self.per_k
        gram[lo:lo + self.per_k, lo:lo + self.per_k] = np.kron(AB.T @ AB, np.eye(n))
        return SpectralCap(apply, adjoint, gram, radius)

    def toeplitz_cap(self, W, radius, lift_T=None):
        """Cap on the block-Toeplitz lifting of W [Phi_x; Phi_u].

        The finite lifting under-estimates the Hinf norm from below, so
        callers certify the final iterate with hinf_norm separately.
        """
        N = lift_T if lift_T is not None else 2 * self.T
        n, nu, T = self.n, self.nu, self.T
        rw = W.shape[0]

        def components(v):
            comps = [np.zeros((rw, n))]
            for k in range(1, T + 1):
                S = np.vstack([v[self.x_slice(k)].reshape(n, n),
                               v[self.u_slice(k)].reshape(nu, n)])
                comps.append(W @ S)
            return comps

        def apply(v):
            return fir_to_blt(FirTransferMatrix(components(v), True), N).data

        def adjoint(M):
            g = np.zeros(self.n_vars)
            for k in range(1, T + 1):
                acc = np.zeros((rw, n))
                for t in range(k, N + 1):
                    acc += M[t * rw:(t + 1) * rw, (t - k) * n:(t - k + 1) * n]
                S = W.T @ acc
                g[self.x_slice(k)] = S[:n].ravel()
                g[self.u_slice(k)] = S[n:].ravel()
            return g

        gram = np.zeros((self.n_vars, self.n_vars))
        G0 = np.kron(W.T @ W, np.eye(n))
        for k in range(1, T + 1):
            lo = (k - 1) * self.per_k
            gram[lo:lo + self.per_k, lo:lo + self.per_k] = (N + 1 - k) * G0
        return SpectralCap(apply, adjoint, gram, radius)


DEFAULT_CAP_ADMM = numerics.AdmmConfig(rho=1.0, eps_abs=1e-9, eps_rel=1e-8, max_iters=6000)


def solve_qp_spectral(H, f, Aeq, beq, caps, cfg=None, v0=None):
    """min 0.5 v'Hv + f'v  s.t.  Aeq v = beq, ||cap_i(v)|| <= r_i.

    Pure KKT solve when there are no caps or when the unconstrained
    solution already satisfies them; consensus ADMM otherwise.  Raises
    Infeasible when ADMM cannot close the consensus gap, which certifies
    (numerically) an empty intersection.
    """
    n_vars = H.shape[0]
    f = np.zeros(n_vars) if f is None else f
    v = numerics.solve_equality_qp(H, f, Aeq, beq)
    if all(c.value(c.image(v)) <= c.radius * (1 + 1e-9) for c in caps):
        return v
    cfg = cfg or DEFAULT_CAP_ADMM
    rho = cfg.rho
    H_aug = H + rho * sum(c.gram for c in caps)
    kkt = numerics.KktSolver(H_aug, Aeq, beq)
    psis = [c.proj(c.image(v)) for c in caps]
    lams = [np.zeros_like(p) for p in psis]
    scale = np.sqrt(sum(p.size for p in psis))
    best_res = np.inf
    for it in range(cfg.max_iters):
        rhs = -f
        for c, psi, lam in zip(caps, psis, lams):
            rhs = rhs + rho * c.adjoint(psi - lam - (c.shift if c.shift is not None else 0.0))
        v = kkt.solve(rhs.reshape(-1, 1)).ravel()
        r_primal_sq = 0.0
        r_dual_sq = 0.0
        for i, c in enumerate(caps):
            img = c.image(v)
            psi_new = c.proj(img + lams[i])
            r_dual_sq += float(np.sum((psi_new - psis[i]) ** 2))
            psis[i] = psi_new
            lams[i] = lams[i] + img - psi_new
            r_primal_sq += float(np.sum((img - psi_new) ** 2))
        r_primal = np.sqrt(r_primal_sq)
        r_dual = rho * np.sqrt(r_dual_sq)
        best_res = min(best_res, r_primal)
        norm_scale = max(np.linalg.norm(v), 1.0)
        if (r_primal <= cfg.eps_abs * scale + cfg.eps_rel * norm_scale
                and r_dual <= cfg.eps_abs * scale + cfg.eps_rel * norm_scale):
            return v
    raise Infeasible(
        f"spectral-cap ADMM stalled (best consensus gap {best_res:.3e})",
        residual=best_res)


def freq_response_norm(G, n_grid=512):
    """Max singular value of the frequency response on a uniform grid."""
    comps = G.as_array()
    ks = np.arange(comps.shape[0])
    worst = 0.0
    for omega in np.linspace(0.0, np.pi, n_grid):
        F = np.tensordot(np.exp(-1j * omega * ks), comps, axes=(0, 0))
        worst = max(worst, float(np.linalg.norm(F, 2)))
    return worst


def hinf_norm(G, lift_factor=4, n_grid=512):
    """Hinf norm of an FIR transfer matrix.

    Takes the larger of the block-Toeplitz flattening norm at horizon
    lift_factor * T and a frequency-grid sweep; both approach the true
    norm from below, so the max is the tighter estimate.
    """
    if G.T == 0:
        return numerics.spectral_norm(G[0])
    lifted = blt_spectral_norm(fir_to_blt(G, lift_factor * G.T))
    return max(lifted, freq_response_norm(G, n_grid))
