"""Closed-loop simulation: plant stepping, controller coupling, perturbation
injection, space-time fields, and empirical stability verdicts.

Disturbance generation uses SplitMix64 + Box-Muller (documented below), so
identical seeds give bit-identical traces on any platform.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .lti import FirTransferMatrix

OVERFLOW_GUARD = 1e12
FIELD_FLOOR = 1e-12

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 PRNG (64-bit state).

    next_u64: state += 0x9E3779B97F4A7C15; z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31),
    all modulo 2^64.  Uniform doubles take the top 53 bits; normals use the
    Box-Muller transform on consecutive uniform pairs.  This is the
    reference generator for every randomized artifact in the toolkit.
    """

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_float(self):
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def next_below(self, n):
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal_pair(self):
        u1 = 1.0 - self.next_float()  # (0, 1]
        u2 = self.next_float()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)

    def normals(self, count):
        out = np.empty(count)
        for i in range(0, count - 1, 2):
            out[i], out[i + 1] = self.normal_pair()
        if count % 2:
            out[-1] = self.normal_pair()[0]
        return out


def white_noise(nw, horizon, seed, sigma=None):
    """(horizon+1, nw) noise samples; sigma scales per-channel std dev."""
    rng = SplitMix64(seed)
    w = rng.normals((horizon + 1) * nw).reshape(horizon + 1, nw)
    if sigma is not None:
        w = w @ np.atleast_2d(sigma).T
    return w


def impulse(nw, horizon, index, time=0, magnitude=1.0):
    """Unit impulse on one disturbance channel."""
    w = np.zeros((horizon + 1, nw))
    w[time, index] = magnitude
    return w


@dataclass
class SimScenario:
    plant: object
    controller: object
    horizon: int
    w: np.ndarray = None           # (horizon+1, nw) disturbance samples
    x0: np.ndarray = None
    delta_x: np.ndarray = None     # injected at the state update
    delta_y: np.ndarray = None     # injected on the measurement
    delta_u: np.ndarray = None     # injected on the applied control
    delta_beta: np.ndarray = None  # injected inside the controller state
    Q: np.ndarray = None           # per-step cost weights (default identity)
    R: np.ndarray = None

    def __post_init__(self):
        if self.horizon < 1:
            raise DimensionMismatch("horizon must be at least 1")
        for name in ("w", "delta_x", "delta_y", "delta_u", "delta_beta"):
            val = getattr(self, name)
            if val is not None:
                val = np.atleast_2d(np.asarray(val, dtype=float))
                if val.shape[0] < self.horizon + 1:
                    pad = np.zeros((self.horizon + 1 - val.shape[0], val.shape[1]))
                    val = np.vstack([val, pad])
                setattr(self, name, val)


@dataclass
class SimTrace:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    internal: np.ndarray
    cost_per_step: np.ndarray
    total_cost: float
    verdict: str               # decayed | grew
    growth_ratio: float
    truncated_at: int = None   # set when the overflow guard fired

    @property
    def horizon(self):
        return self.x.shape[0] - 1


def simulate(scenario):
    """Exact forward recursion of the closed loop with optional injections.

    State overflow beyond 1e12 is reported as an unstable verdict with the
    trace truncated at the offending step, never as an exception.
    """
    plant, ctrl = scenario.plant, scenario.controller
    H = scenario.horizon
    n, nu, ny, nw = plant.n, plant.nu, plant.ny, plant.nw
    x = np.zeros((H + 1, n))
    u = np.zeros((H + 1, nu))
    y = np.zeros((H + 1, ny))
    internal = None
    cost = np.zeros(H + 1)
    Q = np.eye(n) if scenario.Q is None else np.atleast_2d(scenario.Q)
    R = np.eye(nu) if scenario.R is None else np.atleast_2d(scenario.R)
    if scenario.x0 is not None:
        x[0] = np.asarray(scenario.x0, dtype=float)
    w = scenario.w if scenario.w is not None else np.zeros((H + 1, nw))
    if ctrl is not None and hasattr(ctrl, "reset"):
        ctrl.reset()
    truncated = None
    t_end = H
    has_d22 = np.any(plant.D22)
    for t in range(H + 1):
        if np.max(np.abs(x[t])) > OVERFLOW_GUARD:
            truncated = t
            t_end = t
            break
        # feedthrough-free measurement; a D22 term is added after the
        # static loop is resolved (the controller's feedthrough-free entry
        # point is the exact algebraic solution of that loop)
        y[t] = plant.C2 @ x[t] + plant.D21 @ w[t]
        if scenario.delta_y is not None:
            y[t] += scenario.delta_y[t]
        if ctrl is None:
            ut = np.zeros(nu)
        else:
            stepper = ctrl.step_free if (has_d22 and hasattr(ctrl, "step_free")) \
                else ctrl.step
            if scenario.delta_beta is not None:
                ut = stepper(y[t], delta_beta=scenario.delta_beta[t])
            else:
                ut = stepper(y[t])
        if scenario.delta_u is not None:
            ut = ut + scenario.delta_u[t]
        u[t] = ut
        if has_d22:
            y[t] = y[t] + plant.D22 @ u[t]
        if ctrl is not None and hasattr(ctrl, "last_internal"):
            if internal is None:
                internal = np.zeros((H + 1, len(ctrl.last_internal)))
            internal[t] = ctrl.last_internal
        cost[t] = float(x[t] @ Q @ x[t] + u[t] @ R @ u[t])
        if t < H:
            x[t + 1] = plant.A @ x[t] + plant.B2 @ u[t] + plant.B1 @ w[t]
            if scenario.delta_x is not None:
                x[t + 1] += scenario.delta_x[t]
    if internal is None:
        internal = np.zeros((H + 1, 0))
    verdict, ratio = _stability_verdict(x[:t_end + 1], truncated)
    return SimTrace(x, u, y, internal, cost, float(np.sum(cost)), verdict, ratio,
                    truncated)


def _stability_verdict(x, truncated):
    norms = np.linalg.norm(x, axis=1)
    if truncated is not None:
        rates = [norms[t + 1] / norms[t] for t in range(len(norms) - 1)
                 if norms[t] > 0 and norms[t + 1] > 0]
        ratio = float(np.exp(np.mean(np.log(rates)))) if rates else np.inf
        return "grew", ratio
    half = len(norms) // 2
    tail = norms[half:]
    positive = tail > 0
    if not positive.any() or np.max(tail) < 1e-300:
        return "decayed", 0.0
    logs = np.log(tail[positive])
    ts = np.arange(len(tail))[positive]
    if len(ts) < 2:
        return "decayed", 0.0
    slope = np.polyfit(ts, logs, 1)[0]
    ratio = float(np.exp(slope))
    return ("grew" if ratio > 1.0 else "decayed"), ratio


def space_time_field(trace, graph, signal="x"):
    """(node, time) matrix of log10 per-node magnitudes with a 1e-12 floor."""
    data = getattr(trace, signal)
    groups = graph.node_states if signal == "x" else graph.node_inputs
    rows = []
    for g in groups:
        if len(g) == 0:
            rows.append(np.full(data.shape[0], FIELD_FLOOR))
        else:
            rows.append(np.max(np.abs(data[:, g]), axis=1))
    return np.log10(np.maximum(np.array(rows), FIELD_FLOOR))


# ---------------------------------------------------------------------------
# Perturbation-map verification


def _sf_analytic_map(plant, resp, i_delta, which_in, which_out):
    """Closed-loop perturbation maps of the state-feedback realization.

    i_delta is the truncated FIR inverse of (I + Delta).  Entries follow
    the realization's loop algebra; with an achievable response i_delta
    is the identity.
    """
    A, B2, n = plant.A, plant.B2, plant.n
    phi_x, phi_u = resp.phi_x, resp.phi_u
    eye = FirTransferMatrix.constant(np.eye(n))
    z_inv = FirTransferMatrix.from_tail([np.eye(n)])

    def col(base):  # maps delta_x -> signal through I_delta
        return base @ i_delta

    if which_in == "dx":
        if which_out == "x":
            return col(phi_x)
        if which_out == "u":
            return col(phi_u)
        if which_out == "dhat":
            return z_inv @ i_delta
    if which_in == "dy":
        if which_out == "x":
            return (phi_x @ i_delta).z_shifted_diff_right(A) - eye
        if which_out == "u":
            return (phi_u @ i_delta).z_shifted_diff_right(A)
        if which_out == "dhat":
            return i_delta - (z_inv @ i_delta) @ A
    if which_in == "du":
        if which_out == "x":
            return col(phi_x) @ B2
        if which_out == "u":
            return FirTransferMatrix.constant(np.eye(plant.nu)) + (phi_u @ i_delta) @ B2
        if which_out == "dhat":
            return (z_inv @ i_delta) @ B2
    raise DimensionMismatch(f"no analytic map for {which_in} -> {which_out}")


def _of_analytic_map(plant, resp, which_in, which_out):
    """Closed-loop maps of the output-feedback realization (achievable case)."""
    from .lti import FirTransferMatrix as F
    A, B2, C2 = plant.A, plant.B2, plant.C2
    n, nu, ny = plant.n, plant.nu, plant.ny
    xx, ux, xy, uy = resp.phi_xx, resp.phi_ux, resp.phi_xy, resp.phi_uy
    delay = lambda G: F.from_tail([G[k] for k in range(G.T + 1)])  # z^-1 G
    table = {
        ("dx", "x"): lambda: xx,
        ("dx", "u"): lambda: ux,
        ("dx", "y"): lambda: C2 @ xx,
        ("dx", "beta"): lambda: delay(B2 @ ux).scale(-1.0),
        ("dy", "x"): lambda: xy,
        ("dy", "u"): lambda: uy,
        ("dy", "y"): lambda: F.constant(np.eye(ny)) + C2 @ xy,
        ("dy", "beta"): lambda: delay(B2 @ uy).scale(-1.0),
        ("du", "x"): lambda: xx @ B2,
        ("du", "u"): lambda: F.constant(np.eye(nu)) + ux @ B2,
        ("du", "y"): lambda: (C2 @ xx) @ B2,
        ("du", "beta"): lambda: delay((B2 @ ux) @ B2).scale(-1.0),
        ("dbeta", "x"): lambda: delay(xy @ C2),
        ("dbeta", "u"): lambda: delay(uy @ C2),
        ("dbeta", "y"): lambda: delay((C2 @ xy) @ C2),
        ("dbeta", "beta"): lambda: _beta_beta(plant, resp),
    }
    key = (which_in, which_out)
    if key not in table:
        raise DimensionMismatch(f"no analytic map for {which_in} -> {which_out}")
    return table[key]()


def _beta_beta(plant, resp):
    """z^-1 I - z^-2 (A + B2 Phi_uy C2), expanded over the uy components."""
    n = plant.n
    uy = resp.phi_uy
    comps = [np.zeros((n, n)), np.eye(n), -(plant.A + plant.B2 @ uy[0] @ plant.C2)]
    for k in range(1, uy.T + 1):
        comps.append(-(plant.B2 @ uy[k] @ plant.C2))
    return FirTransferMatrix(comps, strictly_proper=True)


def perturbation_map_check(plant, response, which_in, which_out, horizon=None):
    """Empirically estimate one closed-loop perturbation map by impulse
    injection and compare with its loop-algebra formula.

    Returns (max deviation, empirical components, analytic FIR map).
    """
    from . import of as of_mod
    from . import robust as robust_mod
    from . import sf as sf_mod

    is_of = hasattr(response, "phi_uy")
    if horizon is None:
        horizon = 2 * (response.phi_uy.T if is_of else response.T) + 2
    if is_of:
        analytic = _of_analytic_map(plant, response, which_in, which_out)
        make_ctrl = lambda: of_mod.of_controller_realize(response, plant.D22)
        in_dim = {"dx": plant.n, "dy": plant.ny, "du": plant.nu, "dbeta": plant.n}[which_in]
    else:
        delta = robust_mod.perturbed_residual(plant, response)
        i_delta = robust_mod.fir_inverse_truncated(
            robust_mod.delta_plus_identity(delta.delta), horizon)
        analytic = _sf_analytic_map(plant, response, i_delta, which_in, which_out)
        make_ctrl = lambda: sf_mod.sf_controller_realize(response)
        in_dim = {"dx": plant.n, "dy": plant.n, "du": plant.nu}[which_in]

    out_sel = {"x": "x", "u": "u", "dhat": "internal", "beta": "internal",
               "y": "y"}[which_out]
    empirical = None
    for j in range(in_dim):
        inj = np.zeros((horizon + 1, in_dim))
        inj[0, j] = 1.0
        kw = {"delta_x": None, "delta_y": None, "delta_u": None, "delta_beta": None}
        kw["delta_" + which_in[1:]] = inj
        trace = simulate(SimScenario(plant, make_ctrl(), horizon, **kw))
        sig = getattr(trace, out_sel)
        if empirical is None:
            empirical = np.zeros((horizon + 1, sig.shape[1], in_dim))
        empirical[:, :, j] = sig
    worst = 0.0
    for k in range(horizon + 1):
        worst = max(worst, float(np.max(np.abs(empirical[k] - analytic[k]))))
    return worst, empirical, analytic
