"""Core system types: plants, FIR transfer matrices, block-lower-triangular
operators, and the norms defined over them.

Conventions
-----------
* FIR spectral components: component k multiplies z^{-k}.  Strictly proper
  transfer matrices store component 0 explicitly as a zero block so all
  indexing is uniform.
* A BltMatrix is the matrix of a causal linear map on stacked signals over
  t = 0..T: block (t, s) maps the block-s input to the block-t output and
  is zero for s > t.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BadDiagonal, DimensionMismatch, NoConvergence
from .locality import SystemGraph


def stack_signal(samples):
    """Stack a (T+1, dim) sample array into one tall vector."""
    return np.asarray(samples, dtype=float).reshape(-1)


def unstack_signal(vec, dim):
    """Inverse of stack_signal: view a tall vector as (T+1, dim) samples."""
    return np.asarray(vec, dtype=float).reshape(-1, dim)


# ---------------------------------------------------------------------------
# Plant


@dataclass
class Plant:
    """Discrete-time LTI plant in standard 9-matrix form with its
    subsystem interconnection graph."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    C2: np.ndarray
    D21: np.ndarray
    D22: np.ndarray
    graph: SystemGraph = None

    def __post_init__(self):
        for name in ("A", "B1", "B2", "C1", "D11", "D12", "C2", "D21", "D22"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        checks = [
            (self.B1.shape[0], n, "B1 rows"), (self.B2.shape[0], n, "B2 rows"),
            (self.C1.shape[1], n, "C1 cols"), (self.C2.shape[1], n, "C2 cols"),
            (self.D11.shape, (self.nz, self.nw), "D11"),
            (self.D12.shape, (self.nz, self.nu), "D12"),
            (self.D21.shape, (self.ny, self.nw), "D21"),
            (self.D22.shape, (self.ny, self.nu), "D22"),
        ]
        for got, want, what in checks:
            if got != want:
                raise DimensionMismatch(f"{what}: expected {want}, got {got}")
        if self.graph is None:
            self.graph = SystemGraph.from_state_support(self.A, self.B2, self.C2)
        self._check_graph_support()

    def _check_graph_support(self):
        node = self.graph.state_node
        if len(node) != self.n:
            raise DimensionMismatch("graph state assignment does not cover the state")
        rows, cols = np.nonzero(self.A)
        for i, j in zip(rows, cols):
            if node[i] != node[j] and not self.graph.adj[node[i], node[j]]:
                raise DimensionMismatch(
                    f"A[{i},{j}] nonzero but graph has no edge {node[j]} -> {node[i]}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B2.shape[1]

    @property
    def nw(self):
        return self.B1.shape[1]

    @property
    def ny(self):
        return self.C2.shape[0]

    @property
    def nz(self):
        return self.C1.shape[0]

    @classmethod
    def state_feedback(cls, A, B2, B1=None, C1=None, D12=None, graph=None):
        """Plant with full state measurement (C2 = I) and default
        performance output [x; u] (so [C1 D12] has orthonormal rows)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        B2 = np.asarray(B2, dtype=float).reshape(n, -1)
        nu = B2.shape[1]
        B1 = np.eye(n) if B1 is None else np.asarray(B1, dtype=float)
        nw = B1.shape[1]
        if C1 is None and D12 is None:
            C1 = np.vstack([np.eye(n), np.zeros((nu, n))])
            D12 = np.vstack([np.zeros((n, nu)), np.eye(nu)])
        nz = C1.shape[0]
        return cls(A, B1, B2, C1, np.zeros((nz, nw)), D12,
                   np.eye(n), np.zeros((n, nw)), np.zeros((n, nu)), graph)


# ---------------------------------------------------------------------------
# FIR transfer matrices


class FirTransferMatrix:
    """Finite-impulse-response transfer matrix sum_k z^{-k} G[k]."""

    __array_ufunc__ = None  # ndarray @ G defers to __rmatmul__
    __array_priority__ = 1000

    def __init__(self, components, strictly_proper=False):
        self.components = [np.atleast_2d(np.asarray(c, dtype=float)) for c in components]
        if not self.components:
            raise DimensionMismatch("need at least one spectral component")
        shape = self.components[0].shape
        if any(c.shape != shape for c in self.components):
            raise DimensionMismatch("all spectral components must share dimensions")
        self.strictly_proper = bool(strictly_proper)
        if self.strictly_proper and np.any(self.components[0]):
            raise DimensionMismatch("strictly proper transfer matrix has G[0] != 0")

    # -- constructors -------------------------------------------------
    @classmethod
    def zeros(cls, rows, cols, T, strictly_proper=False):
        return cls([np.zeros((rows, cols)) for _ in range(T + 1)], strictly_proper)

    @classmethod
    def from_tail(cls, tail_components, strictly_proper=True):
        """Build from components 1..T (component 0 implied zero)."""
        tail = [np.atleast_2d(np.asarray(c, dtype=float)) for c in tail_components]
        zero = np.zeros_like(tail[0])
        return cls([zero] + tail, strictly_proper)

    @classmethod
    def constant(cls, M):
        return cls([np.atleast_2d(np.asarray(M, dtype=float))], strictly_proper=False)

    # -- structure ----------------------------------------------------
    @property
    def T(self):
        return len(self.components) - 1

    @property
    def shape(self):
        return self.components[0].shape

    def __getitem__(self, k):
        if 0 <= k <= self.T:
            return self.components[k]
        return np.zeros(self.shape)

    def copy(self):
        return FirTransferMatrix([c.copy() for c in self.components], self.strictly_proper)

    def truncate(self, T):
        comps = [self[k] for k in range(T + 1)]
        return FirTransferMatrix(comps, self.strictly_proper)

    def transpose(self):
        return FirTransferMatrix([c.T for c in self.components], self.strictly_proper)

    def as_array(self):
        """Components stacked as a (T+1, rows, cols) array."""
        return np.stack(self.components)

    # -- algebra --------------------------------------------------------
    def __add__(self, other):
        T = max(self.T, other.T)
        return FirTransferMatrix(
            [self[k] + other[k] for k in range(T + 1)],
            self.strictly_proper and other.strictly_proper)

    def __sub__(self, other):
        T = max(self.T, other.T)
        return FirTransferMatrix(
            [self[k] - other[k] for k in range(T + 1)],
            self.strictly_proper and other.strictly_proper)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, alpha):
        return FirTransferMatrix([alpha * c for c in self.components], self.strictly_proper)

    def __matmul__(self, other):
        """Convolution product; the result has horizon T1 + T2 (exact)."""
        if isinstance(other, FirTransferMatrix):
            if self.shape[1] != other.shape[0]:
                raise DimensionMismatch("inner dimensions do not match")
            T = self.T + other.T
            comps = [np.zeros((self.shape[0], other.shape[1])) for _ in range(T + 1)]
            for a, Ga in enumerate(self.components):
                if not np.any(Ga):
                    continue
                for b, Gb in enumerate(other.components):
                    comps[a + b] += Ga @ Gb
            return FirTransferMatrix(comps, self.strictly_proper or other.strictly_proper)
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return FirTransferMatrix([c @ other for c in self.components], self.strictly_proper)

    def __rmatmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return FirTransferMatrix([other @ c for c in self.components], self.strictly_proper)

    def z_shifted_diff(self, A):
        """(zI - A) applied on the left; requires a strictly proper operand.

        Component k of the result is G[k+1] - A G[k], which is proper in
        general (component 0 equals G[1])."""
        if not self.strictly_proper:
            raise DimensionMismatch("(zI - A) G needs strictly proper G")
        comps = [self[k + 1] - A @ self[k] for k in range(self.T + 1)]
        return FirTransferMatrix(comps, strictly_proper=False)

    def z_shifted_diff_right(self, A):
        """(zI - A) applied on the right of a strictly proper operand:
        component k of G (zI - A) is G[k+1] - G[k] A."""
        if not self.strictly_proper:
            raise DimensionMismatch("G (zI - A) needs strictly proper G")
        comps = [self[k + 1] - self[k] @ A for k in range(self.T + 1)]
        return FirTransferMatrix(comps, strictly_proper=False)

    def convolve_signal(self, w):
        """Time-domain convolution with a (H+1, cols) input sample array."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        H = w.shape[0]
        out = np.zeros((H, self.shape[0]))
        for k, c in enumerate(self.components):
            if k >= H:
                break
            if np.any(c):
                out[k:] += w[:H - k] @ c.T
        return out


def h2_norm_sq(G):
    """Squared H2 norm: sum of squared Frobenius norms of the components."""
    return float(sum(np.sum(c * c) for c in G.components))


def l1_norm(G):
    """Worst-case l_inf -> l_inf gain: max over rows of the total absolute
    coefficient sum across all components."""
    if G.shape[0] == 0:
        return 0.0
    acc = np.zeros(G.shape[0])
    for c in G.components:
        acc += np.sum(np.abs(c), axis=1)
    return float(np.max(acc))


# ---------------------------------------------------------------------------
# Block-lower-triangular operators


class BltMatrix:
    """Dense block-lower-triangular operator over a horizon T.

    Blocks are uniform: every block row has `row_dim` rows and every block
    column has `col_dim` columns.
    """

    def __init__(self, row_dim, col_dim, T, data=None):
        self.row_dim = int(row_dim)
        self.col_dim = int(col_dim)
        self.T = int(T)
        shape = ((T + 1) * self.row_dim, (T + 1) * self.col_dim)
        if data is None:
            self.data = np.zeros(shape)
        else:
            self.data = np.asarray(data, dtype=float)
            if self.data.shape != shape:
                raise DimensionMismatch(f"expected data of shape {shape}")
            self._zero_upper()

    def _zero_upper(self):
        for t in range(self.T + 1):
            for s in range(t + 1, self.T + 1):
                self.data[t * self.row_dim:(t + 1) * self.row_dim,
                          s * self.col_dim:(s + 1) * self.col_dim] = 0.0

    @classmethod
    def identity(cls, dim, T):
        return cls(dim, dim, T, np.eye((T + 1) * dim))

    def block(self, t, s):
        return self.data[t * self.row_dim:(t + 1) * self.row_dim,
                         s * self.col_dim:(s + 1) * self.col_dim]

    def set_block(self, t, s, M):
        if s > t:
            raise DimensionMismatch("cannot set an upper (anticausal) block")
        self.data[t * self.row_dim:(t + 1) * self.row_dim,
                  s * self.col_dim:(s + 1) * self.col_dim] = M

    def copy(self):
        return BltMatrix(self.row_dim, self.col_dim, self.T, self.data.copy())

    def __add__(self, other):
        self._compat(other, cols=True, rows=True)
        return BltMatrix(self.row_dim, self.col_dim, self.T, self.data + other.data)

    def __sub__(self, other):
        self._compat(other, cols=True, rows=True)
        return BltMatrix(self.row_dim, self.col_dim, self.T, self.data - other.data)

    def __matmul__(self, other):
        if isinstance(other, BltMatrix):
            if self.col_dim != other.row_dim or self.T != other.T:
                raise DimensionMismatch("BLT product dimension mismatch")
            return BltMatrix(self.row_dim, other.col_dim, self.T, self.data @ other.data)
        return self.data @ np.asarray(other, dtype=float)

    def _compat(self, other, rows=False, cols=False):
        if self.T != other.T or (rows and self.row_dim != other.row_dim) \
                or (cols and self.col_dim != other.col_dim):
            raise DimensionMismatch("BLT operands are incompatible")

    def is_strictly_causal(self, tol=0.0):
        return all(np.max(np.abs(self.block(t, t))) <= tol for t in range(self.T + 1))

    def max_abs(self):
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def frobenius_sq(self):
        return float(np.sum(self.data * self.data))


def downshift(block_dim, T):
    """Block-downshift operator: identity blocks on the first sub-diagonal."""
    Z = BltMatrix(block_dim, block_dim, T)
    for t in range(1, T + 1):
        Z.set_block(t, t - 1, np.eye(block_dim))
    return Z


def blt_from_blocks(blocks, T):
    """Assemble a BltMatrix from a {(t, s): block} mapping."""
    (t0, s0), first = next(iter(blocks.items()))
    M = BltMatrix(np.atleast_2d(first).shape[0], np.atleast_2d(first).shape[1], T)
    for (t, s), blk in blocks.items():
        M.set_block(t, s, blk)
    return M


def fir_to_blt(G, T):
    """Toeplitz lifting of an FIR transfer matrix: block (t, s) = G[t-s]."""
    if G.T > T:
        raise DimensionMismatch("FIR horizon exceeds the lifting horizon")
    M = BltMatrix(G.shape[0], G.shape[1], T)
    for t in range(T + 1):
        for s in range(max(0, t - G.T), t + 1):
            M.set_block(t, s, G[t - s])
    return M


def blt_inverse(M, tol=1e-12):
    """Inverse of a BLT operator with identity diagonal blocks, computed by
    block forward substitution (exact up to round-off)."""
    if M.row_dim != M.col_dim:
        raise DimensionMismatch("only square BLT operators are invertible")
    d = M.row_dim
    for t in range(M.T + 1):
        if np.max(np.abs(M.block(t, t) - np.eye(d))) > tol:
            raise BadDiagonal(f"diagonal block {t} is not the identity")
    X = BltMatrix(d, d, M.T)
    for s in range(M.T + 1):
        for t in range(s, M.T + 1):
            blk = np.eye(d) if t == s else -sum(
                M.block(t, tau) @ X.block(tau, s) for tau in range(s, t))
            X.set_block(t, s, blk)
    return X


def blt_spectral_norm(M):
    """Largest singular value of the flattened operator matrix."""
    if M.data.size == 0:
        return 0.0
    return float(np.linalg.norm(M.data, 2))


def spectral_radius(A):
    """Magnitude of the dominant eigenvalue."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch("spectral radius needs a square matrix")
    try:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    except np.linalg.LinAlgError as exc:
        raise NoConvergence("eigenvalue iteration failed") from exc
