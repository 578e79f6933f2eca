"""Disturbance-feedback control: policies linear in past noises.

A policy is a stack of matrices M^[0..H-1]; the action is
u = -Kx + sum_k M^[k-1] w_{t-k}, so the action (and hence the whole
trajectory) is affine in M, which makes the online problem convex. The
surrogate state/action pair (y, v) replays only the last 2H+1 noises
through the most recent H+1 policies, turning the problem into online
convex optimization with bounded memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    NotInSet,
    NumericalFailure,
    UnsupportedCost,
)
from .stability import StabilityCertificate, certify_strong_stability, closed_loop
from .world import SystemParams


@dataclass(frozen=True)
class DfcParams:
    """Ordered stack of feedback blocks, shape (H, d2, d1)."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 3:
            raise DimensionMismatch(f"blocks must be (H, d2, d1), got {b.shape}")
        object.__setattr__(self, "blocks", b)

    @property
    def H(self) -> int:
        return self.blocks.shape[0]

    @property
    def d2(self) -> int:
        return self.blocks.shape[1]

    @property
    def d1(self) -> int:
        return self.blocks.shape[2]

    @classmethod
    def zeros(cls, H: int, d2: int, d1: int) -> "DfcParams":
        return cls(blocks=np.zeros((H, d2, d1)))

    def flat(self) -> np.ndarray:
        return self.blocks.ravel()

    @classmethod
    def from_flat(cls, v: np.ndarray, H: int, d2: int, d1: int) -> "DfcParams":
        return cls(blocks=np.asarray(v, dtype=float).reshape(H, d2, d1))

    def to_dict(self) -> dict:
        return {"H": self.H, "d2": self.d2, "d1": self.d1,
                "blocks": self.blocks.reshape(self.H, -1).tolist()}


@dataclass(frozen=True)
class DfcSet:
    """Spectral-norm constraint set: block i bounded by scale*(1-gamma)^i."""

    scale: float
    gamma: float
    H: int

    def __post_init__(self):
        if self.scale <= 0 or not (0.0 < self.gamma <= 1.0):
            raise ValueError("need scale > 0 and gamma in (0, 1]")

    def radius(self, i: int) -> float:
        return self.scale * (1.0 - self.gamma) ** i

    def radii(self) -> np.ndarray:
        return self.scale * (1.0 - self.gamma) ** np.arange(self.H)

    def contains(self, params: DfcParams, tol: float = 1e-9) -> bool:
        if params.H != self.H:
            return False
        svals = np.linalg.svd(params.blocks, compute_uv=False)
        return bool(np.all(svals[:, 0] <= self.radii() + tol))


def constraint_set_for(cert: StabilityCertificate, H: int,
                       scale: float | None = None) -> DfcSet:
    """The default constraint set: scale 2*kappa^3 with the certificate's gamma."""
    if scale is None:
        scale = 2.0 * cert.kappa**3
    return DfcSet(scale=scale, gamma=cert.gamma, H=H)


class ClosedLoopCache:
    """Powers of the closed loop A - BK, grown lazily and reused across calls.

    Holds stacked arrays pow(n) = [(A-BK)^0 .. (A-BK)^n] and
    powB(n) = [(A-BK)^j B], keyed by the (A, B, K) bytes so stale caches
    are impossible to use silently.
    """

    def __init__(self, sys: SystemParams, K: np.ndarray):
        self.sys = sys
        self.K = np.asarray(K, dtype=float)
        self.Acl = closed_loop(self.K, sys)
        self.key = (sys.A.tobytes(), sys.B.tobytes(), self.K.tobytes())
        self._pow = [np.eye(sys.d1)]

    def matches(self, sys: SystemParams, K: np.ndarray) -> bool:
        return self.key == (sys.A.tobytes(), sys.B.tobytes(),
                            np.asarray(K, dtype=float).tobytes())

    def _grow(self, n: int) -> None:
        while len(self._pow) <= n:
            self._pow.append(self.Acl @ self._pow[-1])

    def power(self, i: int) -> np.ndarray:
        self._grow(i)
        return self._pow[i]

    def pow_stack(self, n: int) -> np.ndarray:
        """Stack [(A-BK)^0 .. (A-BK)^n], shape (n+1, d1, d1)."""
        self._grow(n)
        return np.stack(self._pow[: n + 1])

    def powB_stack(self, n: int) -> np.ndarray:
        """Stack [(A-BK)^j B for j = 0..n], shape (n+1, d1, d2)."""
        return self.pow_stack(n) @ self.sys.B


def _resolve_cache(cache, sys: SystemParams, K: np.ndarray) -> ClosedLoopCache:
    if cache is not None:
        if not cache.matches(sys, K):
            raise ValueError("closed-loop cache built for different (A, B, K)")
        return cache
    return ClosedLoopCache(sys, K)


def dfc_action(K: np.ndarray, x: np.ndarray, M: DfcParams,
               noise_hist: np.ndarray) -> np.ndarray:
    """u = -Kx + sum_{k=1..H} M^[k-1] w_{t-k}; noise_hist[k] is w_{t-k-1}."""
    H = M.H
    if noise_hist.shape[0] < H or noise_hist.shape[1] != M.d1:
        raise DimensionMismatch(
            f"noise_hist must be at least ({H}, {M.d1}), got {noise_hist.shape}"
        )
    if K.shape != (M.d2, x.shape[0]):
        raise DimensionMismatch("K shape inconsistent with M and x")
    return -(K @ x) + np.einsum("kba,ka->b", M.blocks, noise_hist[:H])


def transfer_matrix(K: np.ndarray, h: int, i: int, M_window, A: np.ndarray,
                    B: np.ndarray, cache: ClosedLoopCache | None = None) -> np.ndarray:
    """Linear map from w_{t-i} to the state after the policy window M_{t-h..t}.

    M_window is ordered oldest first: M_window[k] is the policy at round
    t-h+k, so M_window[h-j] is M_{t-j}. The map is
    (A-BK)^i 1{i<=h} + sum_{j=0..h} (A-BK)^j B M_{t-j}^[i-j-1] 1{1<=i-j<=H}.
    """
    if len(M_window) != h + 1:
        raise DimensionMismatch(f"window must hold h+1={h + 1} policies")
    H = M_window[-1].H
    if not (0 <= i <= H + h):
        raise IndexOutOfRange(f"i={i} outside [0, H+h={H + h}]")
    sys = SystemParams.from_matrices(A, B)
    cache = _resolve_cache(cache, sys, K)
    d1 = sys.d1
    Psi = cache.power(i).copy() if i <= h else np.zeros((d1, d1))
    powB = cache.powB_stack(min(h, i - 1) if i >= 1 else 0)
    for j in range(0, h + 1):
        r = i - j
        if 1 <= r <= H:
            Psi += powB[j] @ M_window[h - j].blocks[r - 1]
    return Psi


def _window_is_invariant(M_window) -> bool:
    first = M_window[0]
    return all(mw is first for mw in M_window) or all(
        np.array_equal(mw.blocks, first.blocks) for mw in M_window
    )


def surrogate_state(M_window, A: np.ndarray, B: np.ndarray, K: np.ndarray,
                    noise_hist: np.ndarray,
                    cache: ClosedLoopCache | None = None) -> np.ndarray:
    """y_{t+1} = sum_{i=0..2H} Psi_{t,i}(M_{t-H:t}) w_{t-i}.

    noise_hist is newest first with noise_hist[0] = w_t and must cover
    2H+1 entries (zero-padded by the caller where history is short).
    """
    H = M_window[-1].H
    if len(M_window) != H + 1:
        raise DimensionMismatch(f"window must hold H+1={H + 1} policies")
    if noise_hist.shape[0] < 2 * H + 1:
        raise DimensionMismatch(
            f"need at least 2H+1={2 * H + 1} noises, got {noise_hist.shape[0]}"
        )
    sys = SystemParams.from_matrices(A, B) if not isinstance(A, SystemParams) else A
    cache = _resolve_cache(cache, sys, K)
    nh = noise_hist[: 2 * H + 1]
    pow_stack = cache.pow_stack(H)
    powB = cache.powB_stack(H)
    # direct propagation of the last H+1 noises
    y = np.einsum("iab,ib->a", pow_stack, nh[: H + 1])
    if _window_is_invariant(M_window):
        blocks = M_window[0].blocks
        # z[j] = sum_r M^[r-1] w_{t-j-r}; windows nh[j+1 : j+H+1], with the
        # window axis appended last: segs[j, a, r] = nh[1+j+r, a]
        segs = sliding_window_view(nh, H, axis=0)[1: H + 2]  # (H+1, d1, H)
        z = np.einsum("rba,jar->jb", blocks, segs)
    else:
        z = np.empty((H + 1, sys.d2))
        for j in range(H + 1):
            z[j] = np.einsum("rba,ra->b", M_window[H - j].blocks,
                             nh[j + 1: j + H + 1])
    return y + np.einsum("jab,jb->a", powB, z)


def surrogate_action(y: np.ndarray, K: np.ndarray, M_next: DfcParams,
                     noise_hist: np.ndarray) -> np.ndarray:
    """v_{t+1} = -K y_{t+1} + sum_{i=1..H} M_next^[i-1] w_{t+1-i}.

    M_next is the policy acting at round t+1; noise_hist is the same
    newest-first buffer passed to surrogate_state (noise_hist[0] = w_t).
    """
    H = M_next.H
    if noise_hist.shape[0] < H:
        raise DimensionMismatch("noise history shorter than H")
    return -(K @ y) + np.einsum("kba,ka->b", M_next.blocks, noise_hist[:H])


def surrogate_cost(cost, i: int, t: int, M_window, sys: SystemParams,
                   K: np.ndarray, noise_hist: np.ndarray,
                   M_next: DfcParams | None = None,
                   cache: ClosedLoopCache | None = None) -> float:
    """c_{i,t} evaluated at the surrogate pair (y, v)."""
    y = surrogate_state(M_window, sys.A, sys.B, K, noise_hist, cache=cache)
    if M_next is None:
        M_next = M_window[-1]
    v = surrogate_action(y, K, M_next, noise_hist)
    return cost.cost(i, t, y, v)


def _invariant_surrogate_pair(blocks: np.ndarray, K: np.ndarray, nh: np.ndarray,
                              cache: ClosedLoopCache) -> tuple[np.ndarray, np.ndarray]:
    """(y, v) at a time-invariant policy, one fused fast path."""
    H = blocks.shape[0]
    pow_stack = cache.pow_stack(H)
    powB = cache.powB_stack(H)
    segs = sliding_window_view(nh, H, axis=0)[1: H + 2]
    z = np.einsum("rba,jar->jb", blocks, segs)
    y = np.einsum("iab,ib->a", pow_stack, nh[: H + 1]) \
        + np.einsum("jab,jb->a", powB, z)
    v = -(K @ y) + np.einsum("kba,ka->b", blocks, nh[:H])
    return y, v


def grad_surrogate_cost(cost, i: int, t: int, M: DfcParams, sys: SystemParams,
                        K: np.ndarray, noise_hist: np.ndarray,
                        cache: ClosedLoopCache | None = None,
                        method: str = "analytic") -> np.ndarray:
    """Gradient of c_{i,t}(y, v) in M at the time-invariant point.

    All window slots (including the action's) are held at M. The analytic
    path uses the chain rule through the affine maps y(M), v(M); the
    finite-difference path is central differences with a scale-aware step.
    """
    H = M.H
    if noise_hist.shape[0] < 2 * H + 1:
        raise DimensionMismatch(
            f"need at least 2H+1={2 * H + 1} noises, got {noise_hist.shape[0]}"
        )
    if method == "fd":
        return _grad_fd(cost, i, t, M, sys, K, noise_hist, cache)
    if method != "analytic":
        raise ValueError(f"unknown gradient method {method!r}")
    if not getattr(cost, "is_quadratic", False):
        raise UnsupportedCost(
            "analytic gradient implemented for quadratic costs only; "
            "pass method='fd'"
        )
    cache = _resolve_cache(cache, sys, K)
    nh = noise_hist[: 2 * H + 1]
    y, v = _invariant_surrogate_pair(M.blocks, K, nh, cache)
    gy = cost.grad_x(i, t, y)
    gv = cost.grad_u(i, t, v)
    s = gy - K.T @ gv
    powB = cache.powB_stack(H)
    P = np.einsum("jab,a->jb", powB, s)  # P[j] = B'(Acl')^j s
    # wins[r, a, j] = w_{t-(1+r+j)}_a for r = 0..H-1
    wins = sliding_window_view(nh, H + 1, axis=0)[1: H + 1]
    term1 = np.einsum("jb,raj->rba", P, wins)
    term2 = np.einsum("b,ra->rba", gv, nh[:H])
    return term1 + term2


def _grad_fd(cost, i: int, t: int, M: DfcParams, sys: SystemParams,
             K: np.ndarray, noise_hist: np.ndarray,
             cache: ClosedLoopCache | None) -> np.ndarray:
    cache = _resolve_cache(cache, sys, K)
    step = 1e-6 * (1.0 + np.linalg.norm(M.blocks.ravel()))
    grad = np.zeros_like(M.blocks)
    base = M.blocks

    def f(blocks: np.ndarray) -> float:
        params = DfcParams(blocks=blocks)
        window = [params] * (params.H + 1)
        return surrogate_cost(cost, i, t, window, sys, K, noise_hist,
                              M_next=params, cache=cache)

    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        hi = base.copy()
        lo = base.copy()
        hi[idx] += step
        lo[idx] -= step
        grad[idx] = (f(hi) - f(lo)) / (2.0 * step)
    return grad


def project_to_set(M: DfcParams, set_: DfcSet) -> DfcParams:
    """Per-block Frobenius-nearest point of the spectral ball: clip singular values.

    Blocks already inside their radius are passed through bitwise unchanged.
    """
    if M.H != set_.H:
        raise DimensionMismatch(f"params H={M.H} vs set H={set_.H}")
    radii = set_.radii()
    out = M.blocks.copy()
    fro = np.linalg.norm(M.blocks, axis=(1, 2))
    # Frobenius dominates spectral norm, so anything under the radius in
    # Frobenius needs no SVD at all.
    maybe = np.nonzero(fro > radii)[0]
    if maybe.size:
        try:
            U, svals, Vt = np.linalg.svd(M.blocks[maybe], full_matrices=False)
        except np.linalg.LinAlgError as e:
            raise NumericalFailure(f"SVD failed during projection: {e}") from e
        for pos, idx in enumerate(maybe):
            r = radii[idx]
            if svals[pos, 0] <= r:
                continue
            clipped = np.minimum(svals[pos], r)
            out[idx] = (U[pos] * clipped) @ Vt[pos]
    return DfcParams(blocks=out)


def comparator_params(K: np.ndarray, K_star: np.ndarray, A: np.ndarray,
                      B: np.ndarray, H: int,
                      set_: DfcSet | None = None) -> DfcParams:
    """The time-invariant policy whose transfer matrices replay u = -K* x.

    Blocks are (K - K*)(A - B K*)^i. When no constraint set is supplied one
    is derived from the certificates of K and K* (scale 2 kappa^3 with the
    smaller gamma); membership failure raises NotInSet, which signals
    mismatched kappa/gamma configuration.
    """
    sys = SystemParams.from_matrices(A, B)
    if set_ is None:
        cert = certify_strong_stability(K, sys)
        cert_star = certify_strong_stability(K_star, sys)
        kappa = max(cert.kappa, cert_star.kappa)
        gamma = min(cert.gamma, cert_star.gamma)
        set_ = DfcSet(scale=2.0 * kappa**3, gamma=gamma, H=H)
    Acl_star = A - B @ K_star
    diff = K - K_star
    blocks = np.empty((H, K.shape[0], K.shape[1]))
    P = np.eye(A.shape[0])
    for i in range(H):
        blocks[i] = diff @ P
        P = Acl_star @ P
    params = DfcParams(blocks=blocks)
    if not set_.contains(params, tol=1e-9):
        raise NotInSet(
            "comparator blocks exceed the constraint radii; kappa/gamma of "
            "the set do not cover this (K, K*) pair"
        )
    return params


# ---------------------------------------------------------------------------
# Certified envelopes used as running diagnostics (never by the learner).

def transfer_norm_bound(i: int, h: int, H: int, kappa: float, gamma: float,
                        kappa_b: float, scale: float) -> float:
    """Certified upper bound on ||Psi_{t,i}|| for policies inside the set."""
    first = kappa**2 * (1.0 - gamma) ** i if i <= h else 0.0
    second = H * kappa_b * kappa**2 * scale * (1.0 - gamma) ** (i - 1) if i >= 1 \
        else H * kappa_b * kappa**2 * scale
    return first + second


def state_envelope_bound(W: float, kappa: float, gamma: float, H: int,
                         kappa_b: float, scale: float,
                         gamma_set: float | None = None) -> float:
    """Uniform bound D on ||x||, ||y||, ||u||, ||v|| along any in-set run."""
    if gamma_set is None:
        gamma_set = gamma
    shrink = 1.0 - kappa**2 * (1.0 - gamma) ** (H + 1)
    if shrink <= 0:
        return np.inf  # envelope vacuous for this (kappa, gamma, H)
    main = W * (kappa**2 + H * kappa_b * kappa**2 * scale) / (gamma * shrink)
    return main + W * scale / gamma_set


def surrogate_gap_bound(D: float, kappa: float, gamma: float, H: int,
                        action: bool = False) -> float:
    """Certified gap between true and surrogate state (or action)."""
    power = 3 if action else 2
    return kappa**power * (1.0 - gamma) ** (H + 1) * D


def gradient_norm_bound(grad_scale: float, D: float, d1: int, d2: int,
                        H: int, kappa: float, gamma: float, kappa_b: float,
                        W: float) -> float:
    """Certified bound G on the Frobenius norm of the surrogate-cost gradient."""
    d = max(d1, d2)
    return grad_scale * D * np.sqrt(d) * d * np.sqrt(H) * (
        kappa**3 * kappa_b * W / gamma + W
    )
