"""Graph distances, locality/delay support masks, and column decomposition.

A `SystemGraph` describes which subsystem affects which, and how state,
input, and measurement indices are assigned to subsystems.  Masks built
here constrain the spectral components of synthesized responses: entry
(i, j) of component k may be nonzero only when the disturbance source j
can have reached i within the hop budget allowed at lag k.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, SlsError


class SystemGraph:
    """Directed influence graph over subsystems.

    Edge (src, dst) means subsystem src affects subsystem dst.  Every
    state/input/output index of the plant belongs to exactly one node.
    """

    def __init__(self, n_nodes, edges, node_states, node_inputs=None, node_outputs=None):
        self.n_nodes = int(n_nodes)
        self.adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for src, dst in edges:
            self.adj[dst, src] = True
        self.node_states = [np.asarray(s, dtype=int) for s in node_states]
        self.node_inputs = ([np.asarray(s, dtype=int) for s in node_inputs]
                            if node_inputs is not None else [np.array([], int)] * self.n_nodes)
        self.node_outputs = ([np.asarray(s, dtype=int) for s in node_outputs]
                             if node_outputs is not None else [np.array([], int)] * self.n_nodes)
        if len(self.node_states) != self.n_nodes:
            raise InvalidConfig("node_states must list one entry per node")
        self._check_partition(self.node_states, "state")
        self._check_partition(self.node_inputs, "input")
        self._check_partition(self.node_outputs, "output")
        self.n_states = sum(len(s) for s in self.node_states)
        self.n_inputs = sum(len(s) for s in self.node_inputs)
        self.n_outputs = sum(len(s) for s in self.node_outputs)
        self.state_node = self._owner(self.node_states, self.n_states)
        self.input_node = self._owner(self.node_inputs, self.n_inputs)
        self.output_node = self._owner(self.node_outputs, self.n_outputs)

    @staticmethod
    def _check_partition(groups, what):
        seen = set()
        for g in groups:
            for i in g:
                if int(i) in seen:
                    raise InvalidConfig(f"{what} index {i} assigned to two nodes")
                seen.add(int(i))

    @staticmethod
    def _owner(groups, total):
        owner = np.full(total, -1, dtype=int)
        for node, g in enumerate(groups):
            owner[g] = node
        return owner

    @classmethod
    def from_state_support(cls, A, B2=None, C2=None):
        """One node per state; edges from the support of A; inputs/outputs
        assigned to the node of their first nonzero coefficient."""
        A = np.asarray(A)
        n = A.shape[0]
        edges = [(j, i) for i in range(n) for j in range(n) if i != j and A[i, j] != 0]
        node_states = [[i] for i in range(n)]
        node_inputs = [[] for _ in range(n)]
        if B2 is not None:
            B2 = np.asarray(B2)
            for j in range(B2.shape[1]):
                rows = np.nonzero(B2[:, j])[0]
                node_inputs[rows[0] if len(rows) else 0].append(j)
        node_outputs = [[] for _ in range(n)]
        if C2 is not None:
            C2 = np.asarray(C2)
            for i in range(C2.shape[0]):
                cols = np.nonzero(C2[i, :])[0]
                node_outputs[cols[0] if len(cols) else 0].append(i)
        return cls(n, edges, node_states, node_inputs, node_outputs)

    def successors(self, node):
        return np.nonzero(self.adj[:, node])[0]

    def d_out_set(self, node, d):
        """Nodes within directed distance d from `node` (nodes it can affect)."""
        return self._bfs(node, d, forward=True)

    def d_in_set(self, node, d):
        """Nodes that can affect `node` within directed distance d."""
        return self._bfs(node, d, forward=False)

    def _bfs(self, node, d, forward):
        frontier = {int(node)}
        seen = {int(node)}
        for _ in range(d):
            nxt = set()
            for v in frontier:
                neigh = np.nonzero(self.adj[:, v])[0] if forward else np.nonzero(self.adj[v, :])[0]
                nxt.update(int(u) for u in neigh if u not in seen)
            if not nxt:
                break
            seen.update(nxt)
            frontier = nxt
        return seen

    def reach_within(self, d):
        """Boolean matrix R with R[i, j] = True iff dist(j -> i) <= d.

        Computed as boolean powers of (adj | I), incrementally.
        """
        R = np.eye(self.n_nodes, dtype=bool)
        step = self.adj | np.eye(self.n_nodes, dtype=bool)
        for _ in range(min(d, self.n_nodes)):
            nxt = step @ R
            if np.array_equal(nxt, R):
                break
            R = nxt
        return R


@dataclass
class LocalityConfig:
    """Locality radius d, FIR horizon T, and the delay model.

    Two delay models are supported: integer actuation/communication/sensing
    delays (ka, kc, ks), and a real-valued communication-speed multiplier tc
    (set tc to enable it; it then overrides the integer model).
    """

    d: int
    T: int
    ka: int = 0
    kc: int = 1
    ks: int = 0
    tc: float | None = None

    def __post_init__(self):
        if self.d < 0 or self.T < 1:
            raise InvalidConfig("need d >= 0 and T >= 1")
        if min(self.ka, self.kc, self.ks) < 0:
            raise InvalidConfig("delays must be non-negative")
        if self.tc is not None and self.tc <= 0:
            raise InvalidConfig("tc must be positive")

    def radius_x(self, k):
        """Allowed hop radius for state-response component k (or None for empty)."""
        if self.tc is not None:
            return min(self.d, int(np.floor(self.tc * (k - 1)))) if k >= 1 else None
        alpha = self._alpha(k)
        return None if alpha is None else min(self.d, alpha)

    def radius_u(self, k):
        """Allowed hop radius for input-response component k (or None for empty).

        Under the tc model a controller may react to a disturbance h hops
        away at lag k only when the information strictly beats the clock:
        1 + h/tc < k, so the radius is ceil(tc (k-1)) - 1 (empty at k = 1).
        """
        if self.tc is not None:
            r = int(np.ceil(self.tc * (k - 1))) - 1
            return min(self.d + 1, r) if r >= 0 else None
        alpha = self._alpha(k)
        return None if alpha is None else min(self.d + 1, alpha)

    def _alpha(self, k):
        lag = k - self.ka - self.ks
        if lag < 0:
            return None
        if self.kc == 0:
            # Instantaneous communication: no propagation limit once the
            # actuation+sensing latency has elapsed.
            return self.d + 1
        return lag // self.kc


@dataclass
class SupportMask:
    """Per-component boolean masks for a state-feedback response pair.

    mask_x[k] is n x n and mask_u[k] is nu x n for k = 1..T; index 0 is
    kept as an all-False placeholder so component indices line up.
    """

    mask_x: list
    mask_u: list
    graph: SystemGraph

    @property
    def T(self):
        return len(self.mask_x) - 1

    @property
    def shape(self):
        return self.mask_x[1].shape, self.mask_u[1].shape

    def is_full(self):
        return all(m.all() for m in self.mask_x[1:]) and all(m.all() for m in self.mask_u[1:])


def _lift(reach, row_nodes, col_nodes):
    """Expand a node-level boolean matrix to an index-level mask."""
    return reach[np.ix_(row_nodes, col_nodes)]


def build_masks(graph, cfg):
    """Support masks for (Phi_x, Phi_u) under locality d and the delay model.

    State components are confined to d hops, input components to d+1 hops,
    both further capped by the per-lag communication radius.  Input rows
    exist only at actuated nodes (the B2 row lifting).
    """
    n, nu = graph.n_states, graph.n_inputs
    reach_cache = {}

    def reach(r):
        if r not in reach_cache:
            reach_cache[r] = graph.reach_within(r)
        return reach_cache[r]

    mask_x = [np.zeros((n, n), dtype=bool)]
    mask_u = [np.zeros((nu, n), dtype=bool)]
    for k in range(1, cfg.T + 1):
        rx = cfg.radius_x(k)
        ru = cfg.radius_u(k)
        mask_x.append(_lift(reach(rx), graph.state_node, graph.state_node)
                      if rx is not None else np.zeros((n, n), dtype=bool))
        mask_u.append(_lift(reach(ru), graph.input_node, graph.state_node)
                      if ru is not None and nu else np.zeros((nu, n), dtype=bool))
    return SupportMask(mask_x, mask_u, graph)


def full_masks(graph, T):
    """Dense masks (no locality or delay restriction) at horizon T."""
    n, nu = graph.n_states, graph.n_inputs
    return SupportMask(
        [np.zeros((n, n), dtype=bool)] + [np.ones((n, n), dtype=bool) for _ in range(T)],
        [np.zeros((nu, n), dtype=bool)] + [np.ones((nu, n), dtype=bool) for _ in range(T)],
        graph)


@dataclass
class OfSupportMask:
    """Per-component masks for the four output-feedback response blocks.

    Component lists run k = 0..T; the strictly proper blocks (xx, ux, xy)
    have all-False entries at k = 0 while the measurement feedthrough
    block uy may be nonzero there.
    """

    mask_xx: list
    mask_ux: list
    mask_xy: list
    mask_uy: list
    graph: SystemGraph

    @property
    def T(self):
        return len(self.mask_xx) - 1

    def stacked(self):
        """(T+1, n+nu, n+ny) boolean array of the combined mask."""
        T = self.T
        out = []
        for k in range(T + 1):
            top = np.hstack([self.mask_xx[k], self.mask_xy[k]])
            bot = np.hstack([self.mask_ux[k], self.mask_uy[k]])
            out.append(np.vstack([top, bot]))
        return np.array(out)


def build_of_masks(graph, cfg):
    """Locality/delay masks for output-feedback synthesis.

    Hop budgets: state block d, input and sensor-to-state blocks d+1, and
    the sensor-to-input corner d+2 (each boundary cancellation needs one
    extra hop of freedom on the acting side).  Lag schedules follow the
    same arrival logic as the state-feedback masks; measurements are
    sensed locally with no delay, so the uy block starts at lag 0.
    """
    n, nu, ny = graph.n_states, graph.n_inputs, graph.n_outputs
    reach_cache = {}

    def reach(r):
        if r not in reach_cache:
            reach_cache[r] = graph.reach_within(r)
        return reach_cache[r]

    def radius_state(k):
        # disturbance manifests in the state one step after it strikes
        if cfg.tc is not None:
            return int(np.floor(cfg.tc * (k - 1))) if k >= 1 else None
        return cfg._alpha(k)

    def radius_meas(k):
        # measurements are sensed locally with no extra manifestation lag
        if cfg.tc is not None:
            return int(np.floor(cfg.tc * k))
        lag = k - cfg.ks
        if lag < 0:
            return None
        return cfg.d + 2 if cfg.kc == 0 else lag // cfg.kc

    def lift(r, cap, rows, cols, shape):
        if r is None or r < 0 or 0 in shape:
            return np.zeros(shape, dtype=bool)
        return reach(min(cap, r))[np.ix_(rows, cols)]

    sn, inn, on = graph.state_node, graph.input_node, graph.output_node
    mask_xx = [np.zeros((n, n), bool)]
    mask_ux = [np.zeros((nu, n), bool)]
    mask_xy = [np.zeros((n, ny), bool)]
    mask_uy = [lift(radius_meas(0), cfg.d + 2, inn, on, (nu, ny))]
    for k in range(1, cfg.T + 1):
        rs = radius_state(k)
        rm = radius_meas(k)
        mask_xx.append(lift(rs, cfg.d, sn, sn, (n, n)))
        mask_ux.append(lift(rs, cfg.d + 1, inn, sn, (nu, n)))
        mask_xy.append(lift(rm, cfg.d + 1, sn, on, (n, ny)))
        mask_uy.append(lift(rm, cfg.d + 2, inn, on, (nu, ny)))
    return OfSupportMask(mask_xx, mask_ux, mask_xy, mask_uy, graph)


def full_of_masks(graph, T):
    n, nu, ny = graph.n_states, graph.n_inputs, graph.n_outputs
    ones = lambda r, c: np.ones((r, c), bool)
    zeros = lambda r, c: np.zeros((r, c), bool)
    return OfSupportMask(
        [zeros(n, n)] + [ones(n, n)] * T,
        [zeros(nu, n)] + [ones(nu, n)] * T,
        [zeros(n, ny)] + [ones(n, ny)] * T,
        [ones(nu, ny)] * (T + 1),
        graph)


def column_partition(mask, strategy="per_node"):
    """Partition response columns for separable solves.

    "per_node" groups the state columns of each disturbance-source node
    (all of a node's states share their locality pattern); "singleton"
    puts every column in its own group.
    """
    n = mask.mask_x[1].shape[1]
    if strategy == "singleton":
        return [np.array([j]) for j in range(n)]
    if strategy == "per_node":
        return [np.asarray(s) for s in mask.graph.node_states if len(s)]
    raise InvalidConfig(f"unknown partition strategy: {strategy}")


def reduced_sets(mask, plant, cols):
    """Row/constraint index sets for the reduced column subproblem.

    s_j collects the state and input rows that may be nonzero in columns
    `cols` at any lag; t_j collects the state-update constraints touched
    by those variables through the support of [A B2].
    """
    cols = np.asarray(cols)
    x_rows = np.zeros(mask.mask_x[1].shape[0], dtype=bool)
    u_rows = np.zeros(mask.mask_u[1].shape[0], dtype=bool)
    for k in range(1, mask.T + 1):
        x_rows |= mask.mask_x[k][:, cols].any(axis=1)
        u_rows |= mask.mask_u[k][:, cols].any(axis=1)
    A_supp = np.asarray(plant.A) != 0
    B_supp = np.asarray(plant.B2) != 0
    t_rows = x_rows.copy()
    if x_rows.any():
        t_rows |= A_supp[:, x_rows].any(axis=1)
    if u_rows.any():
        t_rows |= B_supp[:, u_rows].any(axis=1)
    return (np.nonzero(x_rows)[0], np.nonzero(u_rows)[0]), np.nonzero(t_rows)[0]


def decompose_and_solve(groups, solve_group, jobs=1):
    """Run one solver call per column group, optionally on a thread pool.

    Results come back in group order.  A failing subproblem is re-raised
    tagged with its column set.
    """

    def run(idx):
        try:
            return solve_group(groups[idx])
        except SlsError as exc:
            raise type(exc)(f"columns {list(map(int, groups[idx]))}: {exc}") from exc

    if jobs <= 1 or len(groups) <= 1:
        return [run(i) for i in range(len(groups))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, range(len(groups))))
