"""Hindsight benchmarks and regret accounting.

Two comparator families: a certified grid of static feedback gains rolled
out against the recorded disturbances, and the stronger fixed
disturbance-feedback policy found by projected gradient descent on the
truncated-memory surrogate objective. Slope fits of log-regret against
log-horizon summarize sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dfc import ClosedLoopCache, DfcParams, DfcSet, project_to_set
from .errors import (
    DimensionMismatch,
    EmptyGrid,
    IncompleteTrace,
    NonPositiveRegret,
    NotStable,
)
from .known import ExperimentTrace
from .stability import StabilityCertificate, certify_strong_stability, \
    synthesize_stabilizer
from .world import NoiseSchedule, SystemParams, noise_block


@dataclass(frozen=True)
class PolicyGrid:
    """Candidate static gains, each certified against the true system."""

    Ks: tuple
    certs: tuple

    def __len__(self) -> int:
        return len(self.Ks)


def linear_policy_grid(sys: SystemParams, *, radius: float = 0.3,
                       points_per_axis: int = 3, max_candidates: int = 200,
                       seed: int = 0) -> PolicyGrid:
    """Certified grid around the Riccati stabilizer.

    Small gain matrices (up to 4 entries) get an axis-aligned lattice;
    larger ones get seeded random perturbations. Candidates that fail
    certification are dropped.
    """
    K0 = synthesize_stabilizer(sys)
    n_entries = K0.size
    offsets = []
    if n_entries <= 4:
        axis = np.linspace(-radius, radius, points_per_axis)
        grids = np.meshgrid(*([axis] * n_entries), indexing="ij")
        offsets = np.stack([g.ravel() for g in grids], axis=1)
    else:
        rng = np.random.default_rng(seed)
        offsets = rng.uniform(-radius, radius,
                              size=(max_candidates - 1, n_entries))
        offsets = np.vstack([np.zeros(n_entries), offsets])
    Ks, certs = [], []
    for off in offsets[:max_candidates]:
        K = K0 + off.reshape(K0.shape)
        try:
            cert = certify_strong_stability(K, sys)
        except NotStable:
            continue
        Ks.append(K)
        certs.append(cert)
    return PolicyGrid(Ks=tuple(Ks), certs=tuple(certs))


def _noise_array(noise, sys: SystemParams, T: int) -> np.ndarray:
    """Disturbances as an array with row t = w_t for t = 1..T (row 0 zero)."""
    if isinstance(noise, NoiseSchedule):
        W = np.zeros((T + 1, sys.d1))
        W[1:] = noise_block(noise, 1, T + 1)
        return W
    W = np.asarray(noise, dtype=float)
    if W.ndim != 2 or W.shape[0] < T + 1 or W.shape[1] != sys.d1:
        raise DimensionMismatch(
            f"noise array must be at least ({T + 1}, {sys.d1}), got {W.shape}"
        )
    return W[: T + 1]


def rollout_dfc_policy(M: DfcParams, K: np.ndarray, sys: SystemParams,
                       noise, T: int) -> tuple[np.ndarray, np.ndarray]:
    """True trajectory of the fixed policy: u = -Kx + noise-feedback blocks.

    Returns (xs, us) with xs[t] the state at round t (1..T+1) and us[t]
    the action at round t (1..T); row 0 is padding.
    """
    W = _noise_array(noise, sys, T)
    H = M.H
    d1, d2 = sys.d1, sys.d2
    xs = np.zeros((T + 2, d1))
    us = np.zeros((T + 1, d2))
    pad = np.vstack([np.zeros((H, d1)), W])  # pad[k] = w_{k-H}
    x = np.zeros(d1)
    blocks = M.blocks
    for t in range(1, T + 1):
        # noises w_{t-1}..w_{t-H}, newest first
        nh = pad[t - 1 + H - np.arange(1, H + 1) + 1]
        u = -(K @ x) + np.einsum("kba,ka->b", blocks, nh)
        xs[t] = x
        us[t] = u
        x = sys.A @ x + sys.B @ u + W[t]
    xs[T + 1] = x
    return xs, us


def trajectory_network_cost(costs, xs: np.ndarray, us: np.ndarray,
                            T: int) -> float:
    """Accumulated global cost along one trajectory."""
    total = 0.0
    for t in range(1, T + 1):
        total += costs.network_cost(t, xs[t], us[t])
    return float(total)


def best_linear_in_hindsight(noise, costs, grid: PolicyGrid,
                             sys: SystemParams, T: int):
    """Roll out every certified gain on the recorded noise; return the argmin.

    Ties break toward the earliest grid entry.
    """
    if len(grid) == 0:
        raise EmptyGrid("policy grid holds no certified candidates")
    W = _noise_array(noise, sys, T)
    best_J = math.inf
    best_K = None
    for K in grid.Ks:
        xs = np.zeros(sys.d1)
        J = 0.0
        x = xs
        for t in range(1, T + 1):
            u = -(K @ x)
            J += costs.network_cost(t, x, u)
            x = sys.A @ x + sys.B @ u + W[t]
        if J < best_J - 1e-15:
            best_J = J
            best_K = K
    return best_K, float(best_J)


def individual_regret(trace: ExperimentTrace, agent: int,
                      J_star: float) -> float:
    """Agent's accumulated global cost along its own trajectory, minus J*."""
    if not (0 <= agent < trace.m):
        raise IncompleteTrace(f"agent {agent} outside 0..{trace.m - 1}")
    rows = trace.cost_row[1:, agent]
    if rows.shape[0] != trace.T or not np.all(np.isfinite(rows)):
        raise IncompleteTrace("trace rows missing or non-finite")
    return float(rows.sum() - J_star)


# ---------------------------------------------------------------------------
# Offline disturbance-feedback comparator


class _OfflineSurrogate:
    """Batched per-round-average surrogate objective and its exact gradient.

    The objective averages, over rounds H+1..T, the global quadratic cost
    evaluated at the truncated-memory state/action replay of one fixed
    policy. The additive target-spread constant is dropped; it does not
    move the minimizer.
    """

    def __init__(self, W: np.ndarray, costs, sys: SystemParams,
                 K: np.ndarray, H: int, T: int):
        self.sys = sys
        self.K = np.asarray(K, dtype=float)
        self.H = H
        self.T = T
        self.m = costs.m
        if T <= H:
            raise DimensionMismatch(f"need T > H, got T={T} H={H}")
        cache = ClosedLoopCache(sys, self.K)
        self.pow_stack = cache.pow_stack(H)       # (H+1, d1, d1)
        self.powB = cache.powB_stack(H)           # (H+1, d1, d2)
        self.pow_rev = self.pow_stack[::-1]
        self.powB_rev = self.powB[::-1]
        self.Q = costs.Q_at(0)
        self.R = costs.R_at(0)
        self.Gbar = costs.mean_target_block(H + 1, T + 1)  # (T-H, d1)
        d1 = sys.d1
        self.pad = np.vstack([np.zeros((H, d1)), W[: T + 1]])  # pad[k]=w_{k-H}
        # swv[k, a, j] = pad[k+j, a], windows of length H and H+1
        self.swvH = sliding_window_view(self.pad, H, axis=0)
        self.swvH1 = sliding_window_view(self.pad, H + 1, axis=0)

    def _replay(self, blocks: np.ndarray):
        """Surrogate states/actions for all rounds: Y, V rows t = H+1..T."""
        H, T = self.H, self.T
        Mrev = blocks[::-1]
        # z[s-1] = sum_r blocks[r] w_{s-1-r}, s = 1..T+1
        z = np.einsum("jba,saj->sb", Mrev, self.swvH[1: T + 2])
        direct = np.einsum("jab,tbj->ta", self.pow_rev,
                           self.swvH1[H + 1: T + 1])
        swv_z = sliding_window_view(z, H + 1, axis=0)
        zdir = np.einsum("jab,tbj->ta", self.powB_rev, swv_z[0: T - H])
        Y = direct + zdir
        V = -(Y @ self.K.T) + z[H + 1: T + 1]
        return Y, V, z

    def value(self, blocks: np.ndarray) -> float:
        Y, V, _ = self._replay(blocks)
        E = Y - self.Gbar
        fx = np.einsum("ta,ab,tb->", E, self.Q, E)
        fu = np.einsum("ta,ab,tb->", V, self.R, V)
        return float(self.m * (fx + fu) / (self.T - self.H))

    def value_and_grad(self, blocks: np.ndarray):
        H, T = self.H, self.T
        Y, V, _ = self._replay(blocks)
        E = Y - self.Gbar
        fx = np.einsum("ta,ab,tb->", E, self.Q, E)
        fu = np.einsum("ta,ab,tb->", V, self.R, V)
        val = float(self.m * (fx + fu) / (T - H))
        gy = 2.0 * self.m * (E @ self.Q)
        gv = 2.0 * self.m * (V @ self.R)
        s_rows = gy - gv @ self.K
        Pj = np.einsum("jab,ta->tjb", self.powB, s_rows)  # (T-H, H+1, d2)
        C = np.zeros((T + 2, self.sys.d2))
        for j in range(H + 1):
            C[H + 1 - j: T + 1 - j] += Pj[:, j]
        term1 = np.einsum("sb,saj->jba", C[1: T + 1],
                          self.swvH[1: T + 1])[::-1]
        term2 = np.einsum("tb,taj->jba", gv, self.swvH[H + 2: T + 2])[::-1]
        grad = (term1 + term2) / (T - H)
        return val, np.ascontiguousarray(grad)


@dataclass
class OfflineDfcResult:
    """Best fixed policy found, with convergence diagnostics."""

    params: DfcParams
    converged: bool
    iterations: int
    pg_norm: float
    objective: float
    step: float


def offline_surrogate_objective(M: DfcParams, noise, costs,
                                sys: SystemParams, K: np.ndarray,
                                T: int) -> float:
    """Per-round-average surrogate objective of a fixed policy."""
    W = _noise_array(noise, sys, T)
    surf = _OfflineSurrogate(W, costs, sys, K, M.H, T)
    return surf.value(M.blocks)


def offline_surrogate_gradient(M: DfcParams, noise, costs,
                               sys: SystemParams, K: np.ndarray,
                               T: int) -> np.ndarray:
    W = _noise_array(noise, sys, T)
    surf = _OfflineSurrogate(W, costs, sys, K, M.H, T)
    return surf.value_and_grad(M.blocks)[1]


def _lipschitz_estimate(surf: _OfflineSurrogate, shape, seed: int = 0,
                        iters: int = 25) -> float:
    """Largest curvature of the quadratic objective by power iteration.

    Hessian-vector products are exact gradient differences because the
    objective is quadratic in the policy.
    """
    rng = np.random.default_rng(seed)
    M0 = np.zeros(shape)
    g0 = surf.value_and_grad(M0)[1]
    V = rng.standard_normal(shape)
    V /= np.linalg.norm(V.ravel())
    lam = 0.0
    for _ in range(iters):
        HV = surf.value_and_grad(M0 + V)[1] - g0
        lam = float(np.linalg.norm(HV.ravel()))
        if lam < 1e-14:
            return 1e-14
        V = HV / lam
    return lam


def offline_optimal_dfc(noise, costs, set_: DfcSet, sys: SystemParams,
                        K: np.ndarray, T: int, *, tol: float = 1e-6,
                        max_iter: int = 10_000,
                        M0: DfcParams | None = None) -> OfflineDfcResult:
    """Projected gradient descent to the best fixed in-set policy.

    The objective is convex (quadratic costs composed with maps affine in
    the policy), so the stationarity measure — the projected-gradient
    mapping — certifies global optimality within tolerance. Hitting the
    iteration cap returns the best iterate with converged=False.
    """
    K = np.asarray(K, dtype=float)
    W = _noise_array(noise, sys, T)
    H = set_.H
    surf = _OfflineSurrogate(W, costs, sys, K, H, T)
    shape = (H, sys.d2, sys.d1)
    L = _lipschitz_estimate(surf, shape)
    step = 1.0 / (1.05 * L)
    M = np.zeros(shape) if M0 is None else M0.blocks.copy()
    M = project_to_set(DfcParams(blocks=M), set_).blocks
    best_val = math.inf
    best_M = M.copy()
    pg_norm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        val, g = surf.value_and_grad(M)
        if val < best_val:
            best_val = val
            best_M = M.copy()
        M_next = project_to_set(DfcParams(blocks=M - step * g), set_).blocks
        pg_norm = float(np.linalg.norm((M - M_next).ravel()) / step)
        M = M_next
        if pg_norm <= tol:
            break
    final_val = surf.value(M)
    if final_val < best_val:
        best_val = final_val
        best_M = M
    return OfflineDfcResult(
        params=DfcParams(blocks=best_M),
        converged=pg_norm <= tol,
        iterations=it,
        pg_norm=pg_norm,
        objective=best_val,
        step=step,
    )


def regret_slope(points) -> tuple[float, float, float]:
    """Least-squares fit of log(regret) on log(T): (slope, intercept, r2)."""
    pts = list(points)
    if len(pts) < 3:
        raise NonPositiveRegret("need at least 3 sweep points for a fit")
    Ts = np.array([p[0] for p in pts], dtype=float)
    Rs = np.array([p[1] for p in pts], dtype=float)
    if np.any(Rs <= 0.0):
        raise NonPositiveRegret(
            "non-positive regret in sweep; enlarge T or the comparator class"
        )
    lx = np.log(Ts)
    ly = np.log(Rs)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


@dataclass
class RegretSummary:
    """Comparator values and per-agent regrets for one run."""

    J_star_dfc: float
    J_star_grid: float | None
    per_agent_J: np.ndarray
    regrets: np.ndarray
    comparator: str = "offline_dfc"
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "J_star_dfc": self.J_star_dfc,
            "J_star_grid": self.J_star_grid,
            "per_agent_J": self.per_agent_J.tolist(),
            "regrets": self.regrets.tolist(),
            "comparator": self.comparator,
            "extras": self.extras,
        }


def summarize_regret(trace: ExperimentTrace, costs, sys: SystemParams,
                     K: np.ndarray, set_: DfcSet, *,
                     grid: PolicyGrid | None = None,
                     offline: OfflineDfcResult | None = None) -> RegretSummary:
    """Compute comparators on the trace's own noise and the per-agent regrets."""
    T = trace.T
    W = trace.shared_noise()
    if offline is None:
        offline = offline_optimal_dfc(W, costs, set_, sys, K, T)
    xs, us = rollout_dfc_policy(offline.params, K, sys, W, T)
    J_star = trajectory_network_cost(costs, xs, us, T)
    J_grid = None
    if grid is not None:
        _, J_grid = best_linear_in_hindsight(W, costs, grid, sys, T)
        J_star = min(J_star, J_grid)
    perJ = trace.cost_row[1:].sum(axis=0)
    regrets = perJ - J_star
    return RegretSummary(
        J_star_dfc=J_star, J_star_grid=J_grid, per_agent_J=perJ,
        regrets=regrets,
        extras={"offline_converged": offline.converged,
                "offline_iterations": offline.iterations,
                "offline_pg_norm": offline.pg_norm},
    )
