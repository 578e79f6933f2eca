"""Distributed disturbance-feedback control loop for a known system.

Each round every agent acts from its policy and noise buffer, observes the
next state, recovers the disturbance, exchanges policies with neighbors, and
takes a projected gradient step on its local surrogate cost. The same engine
drives the committed phase of the unknown-system run, with per-agent system
models and estimated-noise buffers swapped in.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dfc import (
    ClosedLoopCache,
    DfcParams,
    DfcSet,
    constraint_set_for,
    dfc_action,
    grad_surrogate_cost,
    gradient_norm_bound,
    project_to_set,
    state_envelope_bound,
)
from .errors import ConfigError, DimensionMismatch, Diverged
from .network import Topology, metropolis_weights, mixing_factor
from .stability import (
    StabilityCertificate,
    certify_strong_stability,
    synthesize_stabilizer,
)
from .world import NoiseSchedule, SystemParams, noise_at, recover_noise, step

PHASE_DFC = 0
PHASE_EXPLORE = 1
PHASE_EXCHANGE = 2
PHASE_NAMES = {PHASE_DFC: "dfc", PHASE_EXPLORE: "explore", PHASE_EXCHANGE: "exchange"}


@dataclass(frozen=True)
class KnownRunConfig:
    """Configuration for the known-system run."""

    sys: SystemParams
    topology: Topology
    costs: object
    noise: NoiseSchedule
    T: int
    K: np.ndarray | None = None
    H: int | None = None
    eta: float | None = None
    eta0: float = 1.0
    seed: int = 0
    init: str = "zeros"  # "zeros" | "random": one seeded feasible start shared by all
    set_scale: float | None = None
    independent_noise: bool = False
    record_policies: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T", "horizon must be >= 1")
        if self.H is not None and self.H < 1:
            raise ConfigError("H", "memory length must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta", "step size must be > 0")
        if self.init not in ("zeros", "random"):
            raise ConfigError("init", f"unknown init mode {self.init!r}")
        if self.topology.m != self.costs.m:
            raise ConfigError("topology", "agent count differs from cost stream")
        if self.noise.d1 != self.sys.d1:
            raise ConfigError("noise", "noise dimension differs from state dimension")


@dataclass
class ExperimentTrace:
    """Per-round, per-agent record of a distributed run.

    Round index t runs 1..T; row 0 of every time-indexed array is unused
    padding so that array[t] is round t. States are kept through x[T+1],
    the final observed state.
    """

    T: int
    m: int
    d1: int
    d2: int
    x: np.ndarray          # (T+2, m, d1)
    u: np.ndarray          # (T+1, m, d2)
    w: np.ndarray          # (T+1, d1) shared | (T+1, m, d1) independent
    w_hat: np.ndarray      # (T+1, m, d1) recovered/estimated noises
    x_norm: np.ndarray     # (T+1, m)
    u_norm: np.ndarray     # (T+1, m)
    cost_row: np.ndarray   # (T+1, m): global cost at agent i's (x, u)
    noise_err: np.ndarray  # (T+1, m)
    consensus: np.ndarray  # (T+1,)
    phase: np.ndarray      # (T+1,) int8
    digest: np.ndarray     # (T+1,) uint64 policy-stack hash
    M_final: np.ndarray    # (m, H, d2, d1)
    meta: dict = field(default_factory=dict)
    M_hist: np.ndarray | None = None  # (T+1, m, H, d2, d1) when recorded

    @property
    def independent_noise(self) -> bool:
        return self.w.ndim == 3

    @classmethod
    def allocate(cls, T: int, m: int, d1: int, d2: int, H: int,
                 independent: bool, record_policies: bool) -> "ExperimentTrace":
        wshape = (T + 1, m, d1) if independent else (T + 1, d1)
        return cls(
            T=T, m=m, d1=d1, d2=d2,
            x=np.zeros((T + 2, m, d1)),
            u=np.zeros((T + 1, m, d2)),
            w=np.zeros(wshape),
            w_hat=np.zeros((T + 1, m, d1)),
            x_norm=np.zeros((T + 1, m)),
            u_norm=np.zeros((T + 1, m)),
            cost_row=np.zeros((T + 1, m)),
            noise_err=np.zeros((T + 1, m)),
            consensus=np.zeros(T + 1),
            phase=np.zeros(T + 1, dtype=np.int8),
            digest=np.zeros(T + 1, dtype=np.uint64),
            M_final=np.zeros((m, H, d2, d1)),
            M_hist=np.zeros((T + 1, m, H, d2, d1)) if record_policies else None,
        )

    def shared_noise(self) -> np.ndarray:
        """The common disturbance sequence, shape (T+1, d1); w[t] is round t."""
        if self.independent_noise:
            raise ConfigError("noise", "run used independent per-agent noise")
        return self.w

    def noise_at_agent(self, t: int, i: int) -> np.ndarray:
        return self.w[t, i] if self.independent_noise else self.w[t]


def _policy_digest(Mstack: np.ndarray) -> np.uint64:
    h = hashlib.blake2b(Mstack.tobytes(), digest_size=8)
    return np.uint64(int.from_bytes(h.digest(), "little"))


def gossip_step(iterates, P: np.ndarray, grads, eta: float) -> list[DfcParams]:
    """One synchronous mix-then-descend update, before projection.

    Agent i's result is sum_j [P]_{ji} M_j - eta * grad_i. Non-neighbors
    contribute nothing because their weight is exactly zero.
    """
    m = len(iterates)
    if P.shape != (m, m):
        raise DimensionMismatch(f"P must be ({m}, {m}), got {P.shape}")
    if len(grads) != m:
        raise DimensionMismatch("one gradient per agent required")
    Mstack = np.stack([it.blocks for it in iterates])
    Gstack = np.stack([np.asarray(g, dtype=float) for g in grads])
    if Gstack.shape != Mstack.shape:
        raise DimensionMismatch(
            f"gradient stack {Gstack.shape} vs iterate stack {Mstack.shape}"
        )
    mixed = np.tensordot(P, Mstack, axes=(0, 0))
    return [DfcParams(blocks=mixed[i] - eta * Gstack[i]) for i in range(m)]


def _noise_rows(trace: ExperimentTrace, t: int) -> tuple[np.ndarray, bool]:
    """Round-t disturbance: (d1,) shared or (m, d1) per-agent."""
    return trace.w[t], trace.independent_noise


def _gossip_dfc_loop(*, sys_true: SystemParams, models: list[SystemParams],
                     K: np.ndarray, P: np.ndarray, costs, set_: DfcSet,
                     eta: float, t_start: int, t_end: int, X: np.ndarray,
                     Mstack: np.ndarray, NH: np.ndarray,
                     trace: ExperimentTrace, caches: list[ClosedLoopCache],
                     div_limit: float, grad_method: str) -> None:
    """Rounds t_start..t_end of the act/observe/recover/gossip/project loop.

    X (m, d1) holds current states, Mstack (m, H, d2, d1) current policies,
    NH (m, 2H+1, d1) newest-first noise buffers; all are updated in place.
    """
    m = X.shape[0]
    X_new = np.empty_like(X)
    what_rows = np.empty((m, trace.d1))
    for t in range(t_start, t_end + 1):
        Mbar = Mstack.mean(axis=0)
        trace.consensus[t] = float(
            np.sqrt(((Mstack - Mbar) ** 2).sum(axis=(1, 2, 3))).max()
        )
        trace.digest[t] = _policy_digest(Mstack)
        trace.phase[t] = PHASE_DFC
        if trace.M_hist is not None:
            trace.M_hist[t] = Mstack
        w_t, independent = _noise_rows(trace, t)
        targets = costs.targets_all(t)
        for i in range(m):
            x_i = X[i]
            u_i = dfc_action(K, x_i, DfcParams(blocks=Mstack[i]), NH[i])
            w_i = w_t[i] if independent else w_t
            x_next = step(x_i, u_i, w_i, sys_true)
            w_hat = recover_noise(x_next, x_i, u_i, models[i])
            X_new[i] = x_next
            what_rows[i] = w_hat
            trace.x[t, i] = x_i
            trace.u[t, i] = u_i
            trace.w_hat[t, i] = w_hat
            trace.x_norm[t, i] = np.linalg.norm(x_i)
            trace.u_norm[t, i] = np.linalg.norm(u_i)
            trace.noise_err[t, i] = np.linalg.norm(w_hat - w_i)
            trace.cost_row[t, i] = costs.network_cost(t, x_i, u_i,
                                                      targets=targets)
        NH[:, 1:] = NH[:, :-1]
        NH[:, 0] = what_rows
        grads = [
            grad_surrogate_cost(costs, i, t, DfcParams(blocks=Mstack[i]),
                                models[i], K, NH[i], cache=caches[i],
                                method=grad_method)
            for i in range(m)
        ]
        pre = gossip_step([DfcParams(blocks=Mstack[i]) for i in range(m)],
                          P, grads, eta)
        for i in range(m):
            Mstack[i] = project_to_set(pre[i], set_).blocks
        X[:] = X_new
        norms = np.linalg.norm(X, axis=1)
        if not np.all(np.isfinite(norms)):
            raise Diverged(f"non-finite state at round {t}")
        if np.isfinite(div_limit) and norms.max() > div_limit:
            raise Diverged(
                f"state norm {norms.max():.3e} exceeded {div_limit:.3e} "
                f"at round {t}"
            )
    trace.x[t_end + 1] = X
    trace.M_final[:] = Mstack


def _resolve_noise_schedules(noise: NoiseSchedule, m: int,
                             independent: bool) -> list[NoiseSchedule]:
    if not independent:
        return [noise] * m
    return [replace(noise, seed=noise.seed + 1000 * (i + 1)) for i in range(m)]


def _fill_noise(trace: ExperimentTrace, scheds: list[NoiseSchedule],
                t_start: int, t_end: int) -> None:
    if trace.independent_noise:
        for i, s in enumerate(scheds):
            for t in range(t_start, t_end + 1):
                trace.w[t, i] = noise_at(s, t)
    else:
        for t in range(t_start, t_end + 1):
            trace.w[t] = noise_at(scheds[0], t)


def _initial_policies(cfg: KnownRunConfig, set_: DfcSet, m: int, H: int,
                      d1: int, d2: int) -> np.ndarray:
    if cfg.init == "zeros":
        return np.zeros((m, H, d2, d1))
    rng = np.random.default_rng(cfg.seed)
    raw = DfcParams(blocks=rng.standard_normal((H, d2, d1)))
    one = project_to_set(raw, set_).blocks
    return np.broadcast_to(one, (m, H, d2, d1)).copy()


def resolve_memory_length(T: int, gamma: float) -> int:
    """Default policy memory: grows like 2 log T / gamma, at least 1."""
    return max(1, math.ceil(2.0 * math.log(max(T, 2)) / gamma))


def run_known(cfg: KnownRunConfig) -> ExperimentTrace:
    """Execute the full known-system distributed loop and return its trace."""
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

    trace = ExperimentTrace.allocate(cfg.T, m, sys.d1, sys.d2, H,
                                     cfg.independent_noise, cfg.record_policies)
    scheds = _resolve_noise_schedules(cfg.noise, m, cfg.independent_noise)
    _fill_noise(trace, scheds, 1, cfg.T)

    kappa_b = max(1.0, float(np.linalg.norm(sys.B, 2)))
    D = state_envelope_bound(cfg.noise.W, cert.kappa, cert.gamma, H, kappa_b,
                             set_.scale)
    G = gradient_norm_bound(getattr(cfg.costs, "grad_scale", np.nan), D,
                            sys.d1, sys.d2, H, cert.kappa, cert.gamma,
                            kappa_b, cfg.noise.W) if np.isfinite(D) else np.inf

    X = np.zeros((m, sys.d1))
    Mstack = _initial_policies(cfg, set_, m, H, sys.d1, sys.d2)
    NH = np.zeros((m, 2 * H + 1, sys.d1))
    cache = ClosedLoopCache(sys, K)
    caches = [cache] * m
    grad_method = "analytic" if getattr(cfg.costs, "is_quadratic", False) else "fd"

    _gossip_dfc_loop(
        sys_true=sys, models=[sys] * m, K=K, P=P, costs=cfg.costs, set_=set_,
        eta=eta, t_start=1, t_end=cfg.T, X=X, Mstack=Mstack, NH=NH,
        trace=trace, caches=caches, div_limit=1e3 * D, grad_method=grad_method,
    )

    trace.meta = {
        "mode": "known",
        "m": m, "T": cfg.T, "H": H, "eta": eta, "seed": cfg.seed,
        "kappa": cert.kappa, "gamma": cert.gamma, "kappa_b": kappa_b,
        "beta": beta, "set_scale": set_.scale,
        "state_envelope": D, "gradient_bound": G,
        "K": K, "topology": cfg.topology.to_dict(),
        "independent_noise": cfg.independent_noise,
        "noise_kind": cfg.noise.kind, "noise_W": cfg.noise.W,
    }
    return trace
