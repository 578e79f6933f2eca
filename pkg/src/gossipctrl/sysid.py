"""Distributed system identification by sign probing and gossip averaging.

Each agent injects an independent Rademacher probe on top of the stabilizing
feedback, accumulates cross-moments between later states and earlier probes,
averages the moment stacks over the network, and inverts the resulting
impulse-response structure to recover the dynamics matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    InsufficientData,
    RankDeficient,
)
from .world import NoiseSchedule, SystemParams, noise_at, step


@dataclass(frozen=True)
class ProbeTrace:
    """States and probes from the exploration phase.

    xs[t] is valid for rounds 1..T_collect (+1 holds the final observed
    state); xis[t] the probe played at round t; ws the realized noise.
    """

    T_collect: int
    m: int
    xs: np.ndarray   # (T_collect+2, m, d1)
    xis: np.ndarray  # (T_collect+1, m, d2)
    ws: np.ndarray   # (T_collect+1, d1) shared | (T_collect+1, m, d1)
    meta: dict = field(default_factory=dict)

    @property
    def independent_noise(self) -> bool:
        return self.ws.ndim == 3


@dataclass(frozen=True)
class MomentStack:
    """Cross-moment estimates for every agent: N[i, k] ~ (A-BK)^k B."""

    N: np.ndarray  # (m, q+1, d1, d2)

    def __post_init__(self):
        arr = np.asarray(self.N, dtype=float)
        if arr.ndim != 4:
            raise DimensionMismatch(f"moment stack must be 4-D, got {arr.shape}")
        object.__setattr__(self, "N", arr)

    @property
    def m(self) -> int:
        return self.N.shape[0]

    @property
    def q(self) -> int:
        return self.N.shape[1] - 1

    def agent(self, i: int) -> np.ndarray:
        return self.N[i]

    def to_dict(self) -> dict:
        return {"m": self.m, "q": self.q,
                "shape": list(self.N.shape), "N": self.N.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MomentStack":
        arr = np.asarray(d["N"], dtype=float).reshape(d["shape"])
        return cls(N=arr)


@dataclass(frozen=True)
class SysIdReport:
    """Recovered models plus measured and certified error figures."""

    A_hats: np.ndarray          # (m, d1, d1)
    B_hats: np.ndarray          # (m, d1, d2)
    q: int
    T_collect: int
    T_exchange: int
    delta: float
    eps_per_agent: np.ndarray | None  # (m,) when truth was available
    eps_max: float
    eps_cross: float
    zeta: float
    eps_theory: float

    def to_dict(self) -> dict:
        return {
            "q": self.q, "T_collect": self.T_collect,
            "T_exchange": self.T_exchange, "delta": self.delta,
            "eps_per_agent": None if self.eps_per_agent is None
            else self.eps_per_agent.tolist(),
            "eps_max": self.eps_max, "eps_cross": self.eps_cross,
            "zeta": self.zeta, "eps_theory": self.eps_theory,
            "A_hats": self.A_hats.tolist(), "B_hats": self.B_hats.tolist(),
        }


def rademacher_probes(T_collect: int, m: int, d2: int, seed: int) -> np.ndarray:
    """Seeded ±1 probes, i.i.d. per coordinate, round, and agent.

    Shape (T_collect+1, m, d2); row 0 is unused padding.
    """
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, 2, size=(T_collect + 1, m, d2))
    probes = 2.0 * draws - 1.0
    probes[0] = 0.0
    return probes


def explore_collect(sys: SystemParams, K: np.ndarray, T_collect: int, m: int,
                    seed: int, noise: NoiseSchedule | list[NoiseSchedule],
                    ) -> ProbeTrace:
    """Run the probing phase from rest and record states and probes.

    Every agent plays u = -Kx + xi with its own probe stream; the noise
    argument is one shared schedule or a per-agent list.
    """
    if T_collect < 2:
        raise ConfigError("T_collect", "need at least 2 probing rounds")
    K = np.asarray(K, dtype=float)
    shared = isinstance(noise, NoiseSchedule)
    scheds = [noise] * m if shared else list(noise)
    if len(scheds) != m:
        raise ConfigError("noise", "need one schedule or one per agent")
    d1, d2 = sys.d1, sys.d2
    xis = rademacher_probes(T_collect, m, d2, seed)
    xs = np.zeros((T_collect + 2, m, d1))
    ws = np.zeros((T_collect + 1, d1)) if shared \
        else np.zeros((T_collect + 1, m, d1))
    X = np.zeros((m, d1))
    for t in range(1, T_collect + 1):
        if shared:
            w_t = noise_at(scheds[0], t)
            ws[t] = w_t
        for i in range(m):
            w_i = w_t if shared else noise_at(scheds[i], t)
            if not shared:
                ws[t, i] = w_i
            u_i = -(K @ X[i]) + xis[t, i]
            xs[t, i] = X[i]
            X[i] = step(X[i], u_i, w_i, sys)
    xs[T_collect + 1] = X
    return ProbeTrace(
        T_collect=T_collect, m=m, xs=xs, xis=xis, ws=ws,
        meta={"seed": seed, "max_state_norm":
              float(np.linalg.norm(xs[1:], axis=2).max())},
    )


def moment_estimates(trace: ProbeTrace, q: int) -> MomentStack:
    """Empirical cross-moments N[i, k-1] = avg_t x_{i,t+k} xi_{i,t}^T, k=1..q+1."""
    L = trace.T_collect - (q + 1)
    if L < 1:
        raise InsufficientData(
            f"T_collect={trace.T_collect} leaves no samples for q={q}"
        )
    m = trace.m
    d1 = trace.xs.shape[2]
    d2 = trace.xis.shape[2]
    N = np.empty((m, q + 1, d1, d2))
    probes = trace.xis[1:1 + L]  # rounds 1..L
    for k in range(1, q + 2):
        states = trace.xs[1 + k:1 + k + L]  # x at rounds (1+k)..(L+k)
        N[:, k - 1] = np.einsum("tma,tmb->mab", states, probes) / L
    return MomentStack(N=N)


def consensus_exchange(stacks: MomentStack, P: np.ndarray,
                       T_exchange: int) -> MomentStack:
    """T_exchange synchronous gossip rounds applied to every moment slot."""
    m = stacks.m
    if P.shape != (m, m):
        raise DimensionMismatch(f"P must be ({m}, {m}), got {P.shape}")
    if T_exchange < 0:
        raise ConfigError("T_exchange", "round count must be >= 0")
    N = stacks.N.copy()
    for _ in range(T_exchange):
        N = np.tensordot(P, N, axes=(0, 0))
    return MomentStack(N=N)


def recover_system(stack_i: np.ndarray, K: np.ndarray,
                   q: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Invert one agent's moment stack into dynamics estimates.

    stack_i has shape (q+1, d1, d2) with slot k estimating (A-BK)^k B. The
    input matrix estimate is slot 0; the closed-loop matrix solves the
    shifted block equation A_cl [N_0..N_{q-1}] = [N_1..N_q] in least squares
    (orthogonal solve, same minimizer as the normal equations), and the
    open-loop matrix adds back B_hat K.
    """
    stack_i = np.asarray(stack_i, dtype=float)
    if stack_i.ndim != 3:
        raise DimensionMismatch(f"agent stack must be 3-D, got {stack_i.shape}")
    if q is None:
        q = stack_i.shape[0] - 1
    if stack_i.shape[0] != q + 1 or q < 1:
        raise DimensionMismatch(f"need q+1 >= 2 slots, got {stack_i.shape[0]}")
    d1 = stack_i.shape[1]
    C0 = np.concatenate(list(stack_i[:q]), axis=1)   # (d1, q*d2)
    C1 = np.concatenate(list(stack_i[1:]), axis=1)
    svals = np.linalg.svd(C0, compute_uv=False)
    if C0.shape[1] < d1 or svals[min(d1, len(svals)) - 1] < 1e-8:
        raise RankDeficient(
            "moment matrix numerically rank deficient; increase q or "
            "collect longer"
        )
    B_hat = stack_i[0].copy()
    # least-squares solve of C0^T X = C1^T, X = A_cl^T
    X, *_ = np.linalg.lstsq(C0.T, C1.T, rcond=None)
    A_cl_hat = X.T
    A_hat = A_cl_hat + B_hat @ np.asarray(K, dtype=float)
    return A_hat, B_hat


def noise_error_gain(kappa: float, gamma: float, W: float, d2: int) -> float:
    """Amplification from model error to per-round noise-estimate error."""
    return 24.0 * W * math.sqrt(d2) * kappa**7 / gamma**2


def estimate_error_quote(delta: float, d1: int, d2: int, q: int, m: int,
                         T_collect: int, kappa: float, gamma: float,
                         W: float) -> float:
    """Certified high-probability model-error level at failure probability delta.

    Instantiates the concentration bound for the averaged moments and the
    recovery amplification 7 sqrt(d1 q) kappa^(5/2); kappa must dominate both
    the stability and controllability constants.
    """
    L = T_collect - (q + 1)
    if L < 1 or not (0 < delta < 1):
        return float("inf")
    log_term = math.log(d1 * d2 * (q + 1) * m / delta)
    moment = (2.0 * d2 * kappa**3 * W / gamma) * math.sqrt(
        8.0 * log_term / (m * L)
    )
    return 7.0 * math.sqrt(d1 * q) * kappa**2.5 * moment


def build_report(stacks: MomentStack, K: np.ndarray, *, T_collect: int,
                 T_exchange: int, delta: float, kappa: float, gamma: float,
                 W: float, kappa_ctrl: float | None = None,
                 sys_true: SystemParams | None = None) -> SysIdReport:
    """Recover every agent's model and assemble the error report."""
    m, q = stacks.m, stacks.q
    A_hats = []
    B_hats = []
    for i in range(m):
        A_hat, B_hat = recover_system(stacks.agent(i), K, q)
        A_hats.append(A_hat)
        B_hats.append(B_hat)
    A_hats = np.stack(A_hats)
    B_hats = np.stack(B_hats)
    eps_per_agent = None
    eps_max = float("nan")
    if sys_true is not None:
        eps_per_agent = np.array([
            max(np.linalg.norm(A_hats[i] - sys_true.A, 2),
                np.linalg.norm(B_hats[i] - sys_true.B, 2))
            for i in range(m)
        ])
        eps_max = float(eps_per_agent.max())
    eps_cross = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            eps_cross = max(
                eps_cross,
                float(np.linalg.norm(A_hats[i] - A_hats[j], 2)),
                float(np.linalg.norm(B_hats[i] - B_hats[j], 2)),
            )
    d1, d2 = A_hats.shape[1], B_hats.shape[2]
    kappa_quote = kappa if kappa_ctrl is None else max(kappa, kappa_ctrl)
    return SysIdReport(
        A_hats=A_hats, B_hats=B_hats, q=q, T_collect=T_collect,
        T_exchange=T_exchange, delta=delta, eps_per_agent=eps_per_agent,
        eps_max=eps_max, eps_cross=eps_cross,
        zeta=noise_error_gain(kappa, gamma, W, d2),
        eps_theory=estimate_error_quote(delta, d1, d2, q, m, T_collect,
                                        kappa_quote, gamma, W),
    )


def default_exchange_rounds(T: int, beta: float, m: int) -> int:
    """Enough gossip rounds that consensus error decays below 1/T."""
    if m <= 1:
        return 0
    if beta <= 0.0:
        return 1
    return max(1, math.ceil(math.log(max(T, 2)) / math.log(1.0 / beta)))


def default_collect_rounds(T: int, c: float = 1.0) -> int:
    """Exploration length growing like T^(2/3)."""
    return max(2, math.ceil(c * T ** (2.0 / 3.0)))
