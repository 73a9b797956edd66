"""Deterministic case-study plants, centralized oracles, and benchmark runs.

Generators are pure functions of their parameters and seed, so repeated
calls produce bit-identical plants.  Randomized constructions use the
toolkit's portable PRNG (see `sim.SplitMix64`) rather than host-library
randomness, keeping cross-platform runs reproducible.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics, sim
from .errors import NotDetectable, NotStabilizable, ValidationError
from .locality import SystemGraph
from .lti import Plant, spectral_radius


def make_chain59():
    """59-state tridiagonal chain with 20 sparsely placed actuators.

    A has unit diagonal and +/-0.2 off-diagonals; actuator pairs sit at
    states 6k+1, 6k+2 (1-indexed) for k = 0..9.  Open loop is unstable
    with spectral radius about 1.0768.
    """
    n = 59
    A = np.eye(n) + 0.2 * np.diag(np.ones(n - 1), 1) - 0.2 * np.diag(np.ones(n - 1), -1)
    B = np.zeros((n, 20))
    for k in range(10):
        B[6 * k + 0, 2 * k + 0] = 1.0
        B[6 * k + 1, 2 * k + 1] = 1.0
    return Plant.state_feedback(A, B)


def make_bichain(nodes=100, kappa=1.0, target_rho=1.1, actuator_indices=None):
    """Symmetric bidirectional chain x_i+ = alpha (x_i + k x_{i-1} + k x_{i+1})
    + b_i u_i, with alpha scaled so the open-loop spectral radius hits the
    target.  Default actuator placement: sites 5j-4 and 5j (1-indexed)."""
    base = np.eye(nodes) + kappa * (np.diag(np.ones(nodes - 1), 1)
                                    + np.diag(np.ones(nodes - 1), -1))
    alpha = target_rho / spectral_radius(base)
    A = alpha * base
    if actuator_indices is None:
        # 1-indexed sites 5j-4 and 5j, j = 1..nodes/5
        actuator_indices = sorted({5 * j - 5 for j in range(1, nodes // 5 + 1)}
                                  | {5 * j - 1 for j in range(1, nodes // 5 + 1)})
    B = np.zeros((nodes, len(actuator_indices)))
    for col, i in enumerate(actuator_indices):
        B[i, col] = 1.0
    return Plant.state_feedback(A, B)


@dataclass
class SwingParams:
    """Parameter ranges for the discretized swing-equation mesh."""

    dt: float = 0.2
    coupling_range: tuple = (0.5, 1.0)
    damping_range: tuple = (1.0, 1.5)
    inverse_inertia_range: tuple = (0.0, 2.0)
    freq_noise_cov: float = 1.0
    phase_noise_cov: float = 1e-4
    sensor_noise_cov: float = 1e-2


def _mesh_spanning_tree(rows, cols, seed):
    """Seeded randomized Kruskal over the grid edges.

    Edge order: all horizontal edges row-major, then all vertical edges
    row-major, shuffled by a Fisher-Yates pass driven by SplitMix64.
    """
    edges = []
    node = lambda r, c: r * cols + c
    for r in range(rows):
        for c in range(cols - 1):
            edges.append((node(r, c), node(r, c + 1)))
    for r in range(rows - 1):
        for c in range(cols):
            edges.append((node(r, c), node(r + 1, c)))
    rng = sim.SplitMix64(seed)
    for i in range(len(edges) - 1, 0, -1):
        j = rng.next_below(i + 1)
        edges[i], edges[j] = edges[j], edges[i]
    parent = list(range(rows * cols))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = []
    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.append((a, b))
    return tree


def make_power_mesh(rows=10, cols=10, seed=0, params=None):
    """Power-grid style network: a randomized spanning tree on a rows x cols
    mesh, two states (phase, frequency) per bus, discretized swing dynamics.

    Per-bus parameters are drawn uniformly from the configured ranges.
    Process noise excites frequency (unit covariance) and phase (1e-4
    covariance); every bus has a phase and a frequency measurement with
    sensor covariance 1e-2.  The performance output weights state and
    input equally ([C1 D12] = I).
    """
    params = params or SwingParams()
    N = rows * cols
    tree = _mesh_spanning_tree(rows, cols, seed)
    neighbors = [[] for _ in range(N)]
    for a, b in tree:
        neighbors[a].append(b)
        neighbors[b].append(a)

    rng = sim.SplitMix64(seed ^ 0x9E3779B97F4A7C15)
    lo, hi = params.coupling_range
    coupling = {}
    for a, b in tree:
        coupling[(a, b)] = coupling[(b, a)] = lo + (hi - lo) * rng.next_float()
    d_lo, d_hi = params.damping_range
    m_lo, m_hi = params.inverse_inertia_range
    damping = [d_lo + (d_hi - d_lo) * rng.next_float() for _ in range(N)]
    minv = [m_lo + (m_hi - m_lo) * rng.next_float() for _ in range(N)]

    n = 2 * N
    A = np.zeros((n, n))
    B2 = np.zeros((n, N))
    dt = params.dt
    for i in range(N):
        k_i = sum(coupling[(i, j)] for j in neighbors[i])
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[1.0, dt],
                                               [-k_i * minv[i] * dt, 1.0 - damping[i] * minv[i] * dt]]
        for j in neighbors[i]:
            A[2 * i + 1, 2 * j] = coupling[(i, j)] * minv[i] * dt
        B2[2 * i + 1, i] = 1.0

    # disturbance: phase noise then frequency noise per bus, then sensor noise
    B1 = np.hstack([np.kron(np.eye(N), np.diag([np.sqrt(params.phase_noise_cov),
                                                np.sqrt(params.freq_noise_cov)])),
                    np.zeros((n, n))])
    C2 = np.eye(n)
    D21 = np.hstack([np.zeros((n, n)), np.sqrt(params.sensor_noise_cov) * np.eye(n)])
    C1 = np.vstack([np.eye(n), np.zeros((N, n))])
    D12 = np.vstack([np.zeros((n, N)), np.eye(N)])
    D11 = np.zeros((n + N, 2 * n))
    D22 = np.zeros((n, N))

    graph = SystemGraph(
        N, [(a, b) for a, b in tree] + [(b, a) for a, b in tree],
        node_states=[[2 * i, 2 * i + 1] for i in range(N)],
        node_inputs=[[i] for i in range(N)],
        node_outputs=[[2 * i, 2 * i + 1] for i in range(N)])
    return Plant(A, B1, B2, C1, D11, D12, C2, D21, D22, graph)


# ---------------------------------------------------------------------------
# Centralized oracles


def _h2_of_closed_loop(Acl, Bcl, Ccl, Dcl=None):
    """H2 norm of a stable state-space loop via the controllability Gramian."""
    if spectral_radius(Acl) >= 1.0:
        raise NotStabilizable("closed loop is not stable")
    X = numerics.dlyap(Acl, Bcl @ Bcl.T)
    val = float(np.trace(Ccl @ X @ Ccl.T))
    if Dcl is not None:
        val += float(np.sum(Dcl * Dcl))
    return np.sqrt(max(val, 0.0))


def _lqg_gains(plant):
    Q = plant.C1.T @ plant.C1
    R = plant.D12.T @ plant.D12
    if np.max(np.abs(plant.C1.T @ plant.D12)) > 1e-12:
        raise ValidationError("cross-weighted performance outputs are not supported")
    try:
        _, K = numerics.dare_solve(plant.A, plant.B2, Q, R)
    except NotStabilizable:
        raise
    W = plant.B1 @ plant.B1.T
    V = plant.D21 @ plant.D21.T
    if np.max(np.abs(plant.B1 @ plant.D21.T)) > 1e-12:
        raise ValidationError("correlated process/sensor noise is not supported")
    try:
        S, _ = numerics.dare_solve(plant.A.T, plant.C2.T, W, V)
    except NotStabilizable as exc:
        raise NotDetectable(str(exc)) from exc
    return K, S


def centralized_h2_baseline(plant, mode="state-feedback"):
    """DARE-based centralized H2 oracle.

    Modes:
      state-feedback: LQR cost rate trace(P B1 B1') -- the normalizer for
        state-feedback benchmarks (returned as the squared-H2 value).
      output-feedback strictly proper: predictor-form LQG (u depends on
        past measurements only).
      output-feedback proper: current-estimator LQG (u may use y[t]).

    Returns (cost, gains dict).  Output-feedback costs are H2 norms of the
    closed loop from the scaled noise to [C1 x + D12 u].
    """
    if mode == "state-feedback":
        Q = plant.C1.T @ plant.C1
        R = plant.D12.T @ plant.D12
        P, K = numerics.dare_solve(plant.A, plant.B2, Q, R)
        cost = float(np.trace(plant.B1.T @ P @ plant.B1))
        return cost, {"K": K, "P": P}

    K, S = _lqg_gains(plant)
    A, B1, B2, C1, D12, C2, D21 = (plant.A, plant.B1, plant.B2, plant.C1,
                                   plant.D12, plant.C2, plant.D21)
    n = plant.n
    V = C2 @ S @ C2.T + D21 @ D21.T
    if mode == "output-feedback strictly proper":
        L = A @ S @ C2.T @ np.linalg.inv(V)
        Acl = np.block([[A, -B2 @ K], [L @ C2, A - B2 @ K - L @ C2]])
        Bcl = np.vstack([B1, L @ D21])
        Ccl = np.hstack([C1, -D12 @ K])
        cost = _h2_of_closed_loop(Acl, Bcl, Ccl)
        return cost, {"K": K, "L": L, "S": S}
    if mode == "output-feedback proper":
        Lf = S @ C2.T @ np.linalg.inv(V)
        # controller state is the one-step prediction x_hat[t | t-1]
        Ak = (A - B2 @ K) @ (np.eye(n) - Lf @ C2)
        Bk = (A - B2 @ K) @ Lf
        Ck = -K @ (np.eye(n) - Lf @ C2)
        Dk = -K @ Lf
        Acl = np.block([[A + B2 @ Dk @ C2, B2 @ Ck], [Bk @ C2, Ak]])
        Bcl = np.vstack([B1 + B2 @ Dk @ D21, Bk @ D21])
        Ccl = np.hstack([C1 + D12 @ Dk @ C2, D12 @ Ck])
        Dcl = D12 @ Dk @ D21
        cost = _h2_of_closed_loop(Acl, Bcl, Ccl, Dcl)
        return cost, {"K": K, "Lf": Lf, "S": S,
                      "Ak": Ak, "Bk": Bk, "Ck": Ck, "Dk": Dk}
    raise ValidationError(f"unknown baseline mode: {mode}")


# ---------------------------------------------------------------------------
# Benchmark runs


@dataclass
class BenchmarkSpec:
    name: str
    seed: int = 0
    config: dict = field(default_factory=dict)


def _run_chain_llqr(spec):
    from . import sf
    from .locality import LocalityConfig, build_masks

    cfg = spec.config
    plant = make_chain59()
    d = int(cfg.get("d", 9))
    T = int(cfg.get("T", 29))
    tc = float(cfg.get("tc", 1.5))
    centralized, _ = centralized_h2_baseline(plant, "state-feedback")
    masks = build_masks(plant.graph, LocalityConfig(d=d, T=T, tc=tc))
    t0 = time.time()
    resp, obj = sf.synthesize_llqr(plant, masks, jobs=int(cfg.get("jobs", 1)))
    wall = 1000.0 * (time.time() - t0)
    from .sf import sf_achievability_residual
    return {
        "benchmark": spec.name, "seed": spec.seed, "config": dict(cfg),
        "objective": obj,
        "normalized": float(np.sqrt(obj / centralized)),
        "wall_ms": wall, "feasible": True,
        "residual": sf_achievability_residual(plant, resp),
        "mask_nonzeros": int(sum(int(m.sum()) for m in masks.mask_x[1:])
                             + sum(int(m.sum()) for m in masks.mask_u[1:])),
    }, resp


def _run_mesh_h2(spec):
    from . import of
    from .locality import LocalityConfig, build_of_masks

    cfg = spec.config
    plant = make_power_mesh(int(cfg.get("rows", 10)), int(cfg.get("cols", 10)),
                            seed=spec.seed)
    d = int(cfg.get("d", 2))
    T = int(cfg.get("T", 10))
    tc = float(cfg.get("tc", 2.0))
    masks = build_of_masks(plant.graph, LocalityConfig(d=d, T=T, tc=tc))
    admm = numerics.AdmmConfig(
        rho=float(cfg.get("rho", 1.0)),
        eps_abs=float(cfg.get("eps_abs", 1e-7)),
        eps_rel=float(cfg.get("eps_rel", 1e-6)),
        max_iters=int(cfg.get("max_iters", 3000)))
    centralized, _ = centralized_h2_baseline(plant, "output-feedback proper")
    t0 = time.time()
    res = of.of_admm_synthesize(plant, masks, cfg=admm, jobs=int(cfg.get("jobs", 1)))
    wall = 1000.0 * (time.time() - t0)
    h2 = float(np.sqrt(res.h2_sq))
    return {
        "benchmark": spec.name, "seed": spec.seed, "config": dict(cfg),
        "objective": h2, "normalized": h2 / centralized,
        "centralized_proper": centralized,
        "wall_ms": wall, "feasible": True, "iters": res.iters,
    }, res


RUNNERS = {
    "chain59-llqr": _run_chain_llqr,
    "mesh-h2": _run_mesh_h2,
}


def run_benchmark(spec, out_path=None):
    """Run one configured benchmark and return (report dict, artifact).

    Reports carry the seed and full config for provenance; unknown names
    raise ValidationError.  `out_path` writes the JSON report.
    """
    if spec.name not in RUNNERS:
        raise ValidationError(f"unknown benchmark: {spec.name}")
    report, artifact = RUNNERS[spec.name](spec)
    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return report, artifact


def llqr_timing_scaling(sizes=(50, 100, 200, 400), d=4, T=7, seed=0):
    """Wall-clock scaling of localized synthesis on growing chains.

    Returns one (n, wall_ms) record per size; the log-log slope against n
    stays well below the cubic centralized trend when (d, T) is fixed.
    """
    from . import sf
    from .locality import LocalityConfig, build_masks

    records = []
    for n in sizes:
        A = np.eye(n) + 0.2 * np.diag(np.ones(n - 1), 1) - 0.2 * np.diag(np.ones(n - 1), -1)
        A *= 0.999 / spectral_radius(A)
        plant = Plant.state_feedback(A, np.eye(n))
        masks = build_masks(plant.graph, LocalityConfig(d=d, T=T, tc=2.0))
        t0 = time.time()
        sf.synthesize_llqr(plant, masks)
        records.append({"n": int(n), "wall_ms": 1000.0 * (time.time() - t0)})
    return records
