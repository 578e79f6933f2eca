"""Explore-then-commit control when the dynamics matrices are unknown.

Phase 1 probes the system and gossips moment statistics until every agent
holds model estimates; phase 2 runs the same distributed feedback loop as
the known-system case, except each agent recovers noise through its own
estimated model, so the buffers hold estimated disturbances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dfc import ClosedLoopCache, constraint_set_for, state_envelope_bound, \
    gradient_norm_bound
from .errors import ConfigError, DimensionMismatch, Diverged, EstimateUnusable
from .known import (
    PHASE_DFC,
    PHASE_EXCHANGE,
    PHASE_EXPLORE,
    ExperimentTrace,
    KnownRunConfig,
    _gossip_dfc_loop,
    _initial_policies,
    _policy_digest,
    _resolve_noise_schedules,
    _fill_noise,
    resolve_memory_length,
)
from .network import metropolis_weights, mixing_factor
from .stability import certify_strong_stability, closed_loop, \
    strong_controllability, synthesize_stabilizer
from .sysid import (
    SysIdReport,
    build_report,
    consensus_exchange,
    default_collect_rounds,
    default_exchange_rounds,
    explore_collect,
    moment_estimates,
    noise_error_gain,
)
from .world import SystemParams, noise_at, step


@dataclass(frozen=True)
class UnknownRunConfig(KnownRunConfig):
    """Known-run configuration plus exploration-phase knobs."""

    T_collect: int | None = None
    T_exchange: int | None = None
    q: int | None = None
    delta: float = 0.1
    collect_scale: float = 1.0
    oracle_estimates: bool = False

    def __post_init__(self):
        super().__post_init__()
        if not (0.0 < self.delta < 1.0):
            raise ConfigError("delta", "failure probability must be in (0, 1)")
        if self.q is not None and self.q < 1:
            raise ConfigError("q", "controllability index must be >= 1")
        if self.T_collect is not None and self.T_collect < 2:
            raise ConfigError("T_collect", "need at least 2 probing rounds")
        if self.T_exchange is not None and self.T_exchange < 0:
            raise ConfigError("T_exchange", "round count must be >= 0")


def estimate_noise(x_next: np.ndarray, x: np.ndarray, u: np.ndarray,
                   A_hat: np.ndarray, B_hat: np.ndarray) -> np.ndarray:
    """Residual disturbance through an estimated model."""
    if A_hat.shape[0] != x_next.shape[0] or A_hat.shape[1] != x.shape[0] \
            or B_hat.shape != (x_next.shape[0], u.shape[0]):
        raise DimensionMismatch("estimate shapes inconsistent with vectors")
    return x_next - A_hat @ x - B_hat @ u


def infer_controllability_index(A_cl: np.ndarray, B: np.ndarray) -> int:
    """Smallest horizon at which the reachability blocks span the state space."""
    d1 = A_cl.shape[0]
    blocks = []
    P = np.eye(d1)
    for q in range(1, d1 + 1):
        blocks.append(P @ B)
        C = np.concatenate(blocks, axis=1)
        if C.shape[1] >= d1:
            svals = np.linalg.svd(C, compute_uv=False)
            if svals[d1 - 1] > 1e-8:
                return q
        P = A_cl @ P
    raise ConfigError("q", "system not controllable within the state dimension")


def _oracle_report(sys: SystemParams, m: int, kappa: float, gamma: float,
                   W: float, q: int) -> SysIdReport:
    return SysIdReport(
        A_hats=np.broadcast_to(sys.A, (m,) + sys.A.shape).copy(),
        B_hats=np.broadcast_to(sys.B, (m,) + sys.B.shape).copy(),
        q=q, T_collect=0, T_exchange=0, delta=0.0,
        eps_per_agent=np.zeros(m), eps_max=0.0, eps_cross=0.0,
        zeta=noise_error_gain(kappa, gamma, W, sys.d2),
        eps_theory=0.0,
    )


def run_unknown(cfg: UnknownRunConfig) -> tuple[ExperimentTrace, SysIdReport]:
    """Probe, identify, then run the committed distributed feedback loop."""
    sys = cfg.sys
    m = cfg.topology.m
    K = cfg.K if cfg.K is not None else synthesize_stabilizer(sys)
    K = np.asarray(K, dtype=float)
    cert = certify_strong_stability(K, sys)
    H = cfg.H if cfg.H is not None else resolve_memory_length(cfg.T, cert.gamma)
    eta = cfg.eta if cfg.eta is not None else cfg.eta0 / math.sqrt(cfg.T)
    set_ = constraint_set_for(cert, H, cfg.set_scale)
    P = metropolis_weights(cfg.topology)
    beta = mixing_factor(P)
    A_cl = closed_loop(K, sys)
    q = cfg.q if cfg.q is not None else infer_controllability_index(A_cl, sys.B)

    kappa_b = max(1.0, float(np.linalg.norm(sys.B, 2)))
    D = state_envelope_bound(cfg.noise.W, cert.kappa, cert.gamma, H, kappa_b,
                             set_.scale)
    G = gradient_norm_bound(getattr(cfg.costs, "grad_scale", np.nan), D,
                            sys.d1, sys.d2, H, cert.kappa, cert.gamma,
                            kappa_b, cfg.noise.W) if np.isfinite(D) else np.inf

    trace = ExperimentTrace.allocate(cfg.T, m, sys.d1, sys.d2, H,
                                     cfg.independent_noise, cfg.record_policies)
    scheds = _resolve_noise_schedules(cfg.noise, m, cfg.independent_noise)
    _fill_noise(trace, scheds, 1, cfg.T)

    if cfg.oracle_estimates:
        T0 = 0
        T_collect = 0
        T_exchange = 0
        report = _oracle_report(sys, m, cert.kappa, cert.gamma, cfg.noise.W, q)
        models = [sys] * m
        X = np.zeros((m, sys.d1))
    else:
        T_collect = cfg.T_collect if cfg.T_collect is not None else \
            default_collect_rounds(cfg.T, cfg.collect_scale)
        T_exchange = cfg.T_exchange if cfg.T_exchange is not None else \
            default_exchange_rounds(cfg.T, beta, m)
        T0 = T_collect + T_exchange
        if T0 >= cfg.T:
            raise ConfigError(
                "T", f"T_collect+T_exchange={T0} leaves no committed rounds"
            )

        probe_noise = scheds[0] if not cfg.independent_noise else scheds
        ptrace = explore_collect(sys, K, T_collect, m, cfg.seed, probe_noise)
        zero_digest = _policy_digest(np.zeros((m, H, sys.d2, sys.d1)))
        targets_cache = {}
        for t in range(1, T_collect + 1):
            trace.phase[t] = PHASE_EXPLORE
            trace.digest[t] = zero_digest
            targets = cfg.costs.targets_all(t)
            for i in range(m):
                x_i = ptrace.xs[t, i]
                u_i = -(K @ x_i) + ptrace.xis[t, i]
                w_i = ptrace.ws[t, i] if ptrace.independent_noise \
                    else ptrace.ws[t]
                trace.x[t, i] = x_i
                trace.u[t, i] = u_i
                trace.x_norm[t, i] = np.linalg.norm(x_i)
                trace.u_norm[t, i] = np.linalg.norm(u_i)
                trace.noise_err[t, i] = np.linalg.norm(w_i)  # buffer holds 0
                trace.cost_row[t, i] = cfg.costs.network_cost(t, x_i, u_i,
                                                              targets=targets)
        del targets_cache

        stacks = moment_estimates(ptrace, q)
        stacks = consensus_exchange(stacks, P, T_exchange)

        # the network keeps running on pure feedback while estimates mix
        X = ptrace.xs[T_collect + 1].copy()
        for t in range(T_collect + 1, T0 + 1):
            trace.phase[t] = PHASE_EXCHANGE
            trace.digest[t] = zero_digest
            targets = cfg.costs.targets_all(t)
            w_t = trace.w[t]
            for i in range(m):
                x_i = X[i].copy()
                u_i = -(K @ x_i)
                w_i = w_t[i] if cfg.independent_noise else w_t
                X[i] = step(x_i, u_i, w_i, sys)
                trace.x[t, i] = x_i
                trace.u[t, i] = u_i
                trace.x_norm[t, i] = np.linalg.norm(x_i)
                trace.u_norm[t, i] = np.linalg.norm(u_i)
                trace.noise_err[t, i] = np.linalg.norm(w_i)
                trace.cost_row[t, i] = cfg.costs.network_cost(t, x_i, u_i,
                                                              targets=targets)
        if not np.all(np.isfinite(X)):
            raise Diverged("non-finite state during identification phase")

        ctrl = strong_controllability(A_cl, sys.B, q)
        report = build_report(
            stacks, K, T_collect=T_collect, T_exchange=T_exchange,
            delta=cfg.delta, kappa=cert.kappa, gamma=cert.gamma,
            W=cfg.noise.W, kappa_ctrl=ctrl.kappa_ctrl, sys_true=sys,
        )
        margin = cert.gamma / (2.0 * cert.kappa**3)
        if report.eps_max >= margin:
            raise EstimateUnusable(
                f"model error {report.eps_max:.4g} at or beyond the "
                f"stability margin {margin:.4g}"
            )
        models = [
            SystemParams.from_matrices(report.A_hats[i], report.B_hats[i])
            for i in range(m)
        ]

    Mstack = _initial_policies(cfg, set_, m, H, sys.d1, sys.d2)
    NH = np.zeros((m, 2 * H + 1, sys.d1))
    if cfg.oracle_estimates:
        shared_cache = ClosedLoopCache(sys, K)
        caches = [shared_cache] * m
    else:
        caches = [ClosedLoopCache(models[i], K) for i in range(m)]
    grad_method = "analytic" if getattr(cfg.costs, "is_quadratic", False) else "fd"

    _gossip_dfc_loop(
        sys_true=sys, models=models, K=K, P=P, costs=cfg.costs, set_=set_,
        eta=eta, t_start=T0 + 1, t_end=cfg.T, X=X, Mstack=Mstack, NH=NH,
        trace=trace, caches=caches, div_limit=1e3 * D, grad_method=grad_method,
    )

    trace.meta = {
        "mode": "unknown",
        "m": m, "T": cfg.T, "H": H, "eta": eta, "seed": cfg.seed,
        "kappa": cert.kappa, "gamma": cert.gamma, "kappa_b": kappa_b,
        "beta": beta, "set_scale": set_.scale,
        "state_envelope": D, "gradient_bound": G,
        "K": K, "topology": cfg.topology.to_dict(),
        "independent_noise": cfg.independent_noise,
        "noise_kind": cfg.noise.kind, "noise_W": cfg.noise.W,
        "T_collect": T_collect, "T_exchange": T_exchange, "T0": T0,
        "q": q, "delta": cfg.delta,
        "eps_max": report.eps_max, "zeta": report.zeta,
        "oracle_estimates": cfg.oracle_estimates,
    }
    return trace, report
