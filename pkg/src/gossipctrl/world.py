"""Multi-agent linear world: dynamics, bounded noise schedules, cost streams.

Every agent shares the same pair (A, B) and, by default, the same bounded
disturbance sequence w_t (zero for t <= 0). Costs are per-agent time-varying
quadratics tracking slowly moving targets, so local costs are genuinely
heterogeneous and averaging between agents matters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

_NOISE_KINDS = ("sinusoid", "sign_alternating", "uniform_bounded", "constant")


@dataclass(frozen=True)
class SystemParams:
    """Dynamics pair (A, B) with a certified bound on both spectral norms."""

    A: np.ndarray
    B: np.ndarray
    kappa_sys: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B rows must match A, got {B.shape} vs {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        norm = max(np.linalg.norm(A, 2), np.linalg.norm(B, 2))
        if norm > self.kappa_sys + 1e-10:
            raise ValueError(
                f"kappa_sys={self.kappa_sys} below max(||A||,||B||)={norm:.6g}"
            )

    @property
    def d1(self) -> int:
        return self.A.shape[0]

    @property
    def d2(self) -> int:
        return self.B.shape[1]

    @classmethod
    def from_matrices(cls, A, B) -> "SystemParams":
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        kappa = max(np.linalg.norm(A, 2), np.linalg.norm(B, 2), 1.0)
        return cls(A=A, B=B, kappa_sys=float(kappa))


def step(x: np.ndarray, u: np.ndarray, w: np.ndarray, sys: SystemParams) -> np.ndarray:
    """One round of the dynamics: A x + B u + w."""
    if x.shape != (sys.d1,) or u.shape != (sys.d2,) or w.shape != (sys.d1,):
        raise DimensionMismatch(
            f"step expects x:({sys.d1},) u:({sys.d2},) w:({sys.d1},), "
            f"got {x.shape}, {u.shape}, {w.shape}"
        )
    return sys.A @ x + sys.B @ u + w


def recover_noise(x_next: np.ndarray, x: np.ndarray, u: np.ndarray,
                  sys: SystemParams) -> np.ndarray:
    """Algebraic inverse of step: the disturbance that produced x_next."""
    if x_next.shape != (sys.d1,) or x.shape != (sys.d1,) or u.shape != (sys.d2,):
        raise DimensionMismatch("recover_noise shape mismatch")
    return x_next - sys.A @ x - sys.B @ u


@dataclass(frozen=True)
class NoiseSchedule:
    """Deterministic bounded disturbance stream: ||w_t|| <= W, w_t = 0 for t <= 0.

    Each (seed, t) pair maps to the same vector forever; uniform_bounded uses
    a counter-based generator keyed by the round index so random queries are
    O(1) with no stream replay.
    """

    kind: str
    W: float
    d1: int
    seed: int = 0
    # derived, filled in __post_init__
    _omegas: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _phases: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _direction: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.W < 0:
            raise ValueError("W must be >= 0")
        rng = np.random.default_rng(self.seed)
        # Frequencies drawn from a continuum are incommensurate with 2*pi
        # almost surely, which is what makes the sinusoid "adversarial":
        # the phase never settles into a short cycle.
        omegas = rng.uniform(0.3, 2.6, self.d1)
        phases = rng.uniform(0.0, 2.0 * np.pi, self.d1)
        v = rng.normal(size=self.d1)
        direction = v / np.linalg.norm(v) * (1.0 - 1e-13)
        object.__setattr__(self, "_omegas", omegas)
        object.__setattr__(self, "_phases", phases)
        object.__setattr__(self, "_direction", direction)

    @property
    def omegas(self) -> np.ndarray:
        return self._omegas

    @property
    def phases(self) -> np.ndarray:
        return self._phases


def _uniform_at(sched: NoiseSchedule, t: int) -> np.ndarray:
    bitgen = np.random.Philox(key=sched.seed, counter=[0, 0, 0, t])
    gen = np.random.Generator(bitgen)
    amp = sched.W / np.sqrt(sched.d1)
    return gen.uniform(-amp, amp, sched.d1)


def noise_at(sched: NoiseSchedule, t: int) -> np.ndarray:
    """Disturbance at round t (any integer); zero vector for t <= 0."""
    if t <= 0 or sched.W == 0.0:
        return np.zeros(sched.d1)
    if sched.kind == "sinusoid":
        amp = sched.W / np.sqrt(sched.d1)
        return amp * np.sin(sched._omegas * t + sched._phases)
    if sched.kind == "sign_alternating":
        return sched.W * ((-1.0) ** t) * sched._direction
    if sched.kind == "constant":
        return sched.W * sched._direction
    return _uniform_at(sched, t)


def noise_block(sched: NoiseSchedule, t0: int, t1: int) -> np.ndarray:
    """Stacked noises for rounds t0..t1-1; row k is noise_at(t0 + k)."""
    n = t1 - t0
    if n <= 0:
        return np.zeros((0, sched.d1))
    ts = np.arange(t0, t1)
    out = np.zeros((n, sched.d1))
    live = ts > 0
    if sched.W == 0.0 or not live.any():
        return out
    if sched.kind == "sinusoid":
        amp = sched.W / np.sqrt(sched.d1)
        out[live] = amp * np.sin(
            np.outer(ts[live], sched._omegas) + sched._phases
        )
    elif sched.kind == "sign_alternating":
        signs = (-1.0) ** ts[live]
        out[live] = sched.W * np.outer(signs, sched._direction)
    elif sched.kind == "constant":
        out[live] = sched.W * sched._direction
    else:
        for k, t in enumerate(ts):
            if t > 0:
                out[k] = _uniform_at(sched, int(t))
    return out


def rollout_linear_policy(K: np.ndarray, sys: SystemParams, noise, T: int):
    """Trajectory {(x_t, u_t)} for t = 1..T under u = -Kx, starting at x_1 = 0.

    `noise` is a NoiseSchedule or an array whose row t-1 is w_t.
    """
    if K.shape != (sys.d2, sys.d1):
        raise DimensionMismatch(f"K must be ({sys.d2},{sys.d1}), got {K.shape}")
    if isinstance(noise, NoiseSchedule):
        w = noise_block(noise, 1, T + 1)
    else:
        w = np.asarray(noise, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
    xs = np.zeros((T, sys.d1))
    us = np.zeros((T, sys.d2))
    x = np.zeros(sys.d1)
    for t in range(1, T + 1):
        u = -K @ x
        xs[t - 1] = x
        us[t - 1] = u
        if t < T:
            wt = w[t - 1] if t - 1 < len(w) else np.zeros(sys.d1)
            x = step(x, u, wt, sys)
    return xs, us


class NoiseBuffer:
    """Fixed-depth ring of past disturbances, newest first, zero-padded.

    view(n)[k] is the k-th most recent pushed vector (k=0 newest); slots
    never written read as zero.
    """

    def __init__(self, depth: int, d1: int):
        self.depth = depth
        self.d1 = d1
        self._buf = np.zeros((depth, d1))
        self._head = -1  # index of newest entry
        self.count = 0

    def push(self, w: np.ndarray) -> None:
        self._head = (self._head + 1) % self.depth
        self._buf[self._head] = w
        self.count = min(self.count + 1, self.depth)

    def view(self, n: int) -> np.ndarray:
        out = np.zeros((n, self.d1))
        k = min(n, self.count)
        if k > 0:
            idx = (self._head - np.arange(k)) % self.depth
            out[:k] = self._buf[idx]
        return out


@dataclass
class AgentState:
    """One agent's mutable loop state: current x and its disturbance memory."""

    x: np.ndarray
    noise_history: NoiseBuffer


@dataclass(frozen=True)
class QuadraticTrackingCosts:
    """Per-agent quadratic tracking costs c_{i,t}(x, u) = (x-g)'Q(x-g) + u'Ru.

    kind "quadratic_tracking" keeps each agent's target fixed; kind
    "quadratic_drift" rotates targets at angular speed nu per round. With
    phase_split the m agents' targets are spread around the circle, which is
    what makes the local costs heterogeneous.
    """

    kind: str
    m: int
    d1: int
    d2: int
    Q: np.ndarray
    R: np.ndarray
    rho: float = 1.0       # target amplitude
    nu: float = 0.0        # target angular speed (rounds^-1)
    seed: int = 0
    phase_split: bool = True
    _theta: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("quadratic_tracking", "quadratic_drift"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if Q.shape != (self.d1, self.d1) or R.shape != (self.d2, self.d2):
            raise DimensionMismatch("Q/R shape mismatch with d1/d2")
        # Symmetry and PSD are contract, not runtime checks on every call.
        if not np.allclose(Q, Q.T, atol=1e-12) or not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("Q and R must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 or np.linalg.eigvalsh(R).min() < -1e-12:
            raise ValueError("Q and R must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        rng = np.random.default_rng(self.seed)
        phi0 = rng.uniform(0.0, 2.0 * np.pi)
        if self.phase_split:
            theta = phi0 + 2.0 * np.pi * np.arange(self.m) / max(self.m, 1)
        else:
            theta = np.full(self.m, phi0)
        object.__setattr__(self, "_theta", theta)

    @property
    def is_quadratic(self) -> bool:
        return True

    @property
    def grad_scale(self) -> float:
        """Gc such that ||grad c_{i,t}(x,u)|| <= Gc * D for ||x||,||u|| <= D, D >= 1."""
        qn = np.linalg.norm(self.Q, 2)
        rn = np.linalg.norm(self.R, 2)
        return 2.0 * float(np.hypot(qn * (1.0 + self.rho), rn))

    def Q_at(self, t: int) -> np.ndarray:
        return self.Q

    def R_at(self, t: int) -> np.ndarray:
        return self.R

    def target(self, i: int, t: int) -> np.ndarray:
        nu = self.nu if self.kind == "quadratic_drift" else 0.0
        c = np.arange(self.d1)
        return (self.rho / np.sqrt(self.d1)) * np.cos(
            nu * t + self._theta[i] + 2.0 * np.pi * c / self.d1
        )

    def targets_all(self, t: int) -> np.ndarray:
        """All agents' targets at round t, shape (m, d1)."""
        nu = self.nu if self.kind == "quadratic_drift" else 0.0
        c = np.arange(self.d1)
        phase = nu * t + self._theta[:, None] + 2.0 * np.pi * c[None, :] / self.d1
        return (self.rho / np.sqrt(self.d1)) * np.cos(phase)

    def mean_target_block(self, t0: int, t1: int) -> np.ndarray:
        """Mean over agents of g_{i,t} for t = t0..t1-1, shape (t1-t0, d1)."""
        ts = np.arange(t0, t1)
        nu = self.nu if self.kind == "quadratic_drift" else 0.0
        c = np.arange(self.d1)
        # mean over i of cos(nu t + theta_i + off_c)
        phases = nu * ts[:, None, None] + self._theta[None, :, None] \
            + 2.0 * np.pi * c[None, None, :] / self.d1
        return (self.rho / np.sqrt(self.d1)) * np.cos(phases).mean(axis=1)

    def cost(self, i: int, t: int, x: np.ndarray, u: np.ndarray) -> float:
        dx = x - self.target(i, t)
        return float(dx @ self.Q @ dx + u @ self.R @ u)

    def network_cost(self, t: int, x: np.ndarray, u: np.ndarray,
                     targets: np.ndarray | None = None) -> float:
        """Sum over agents of c_{i,t} evaluated at the same (x, u) pair."""
        if targets is None:
            targets = self.targets_all(t)
        dx = x[None, :] - targets
        return float(np.einsum("ia,ab,ib->", dx, self.Q, dx) + self.m * (u @ self.R @ u))

    def grad_x(self, i: int, t: int, x: np.ndarray) -> np.ndarray:
        return 2.0 * (self.Q @ (x - self.target(i, t)))

    def grad_u(self, i: int, t: int, u: np.ndarray) -> np.ndarray:
        return 2.0 * (self.R @ u)
