"""Quantified stability certificates and stabilizer synthesis.

A certificate for K is a similarity A - BK = H L H^{-1} with L a contraction:
||L|| <= 1 - gamma, ||H||, ||H^{-1}||, ||K|| <= kappa. The construction
diagonalizes the closed loop, realifies complex-conjugate pairs into 2x2
rotation blocks, and balances H so ||H|| = ||H^{-1}|| = sqrt(cond).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    IllConditioned,
    MarginExhausted,
    NotStabilizable,
    NotStable,
    RankDeficient,
)
from .world import SystemParams


@dataclass(frozen=True)
class StabilityCertificate:
    kappa: float
    gamma: float
    H_mat: np.ndarray
    L_mat: np.ndarray
    K: np.ndarray
    method: str = "eig"

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "gamma": self.gamma,
            "H_mat": self.H_mat.tolist(),
            "L_mat": self.L_mat.tolist(),
            "K": self.K.tolist(),
            "method": self.method,
        }


@dataclass(frozen=True)
class ControllabilityReport:
    q: int
    C_q: np.ndarray
    sigma_min: float
    kappa_ctrl: float


def closed_loop(K: np.ndarray, sys: SystemParams) -> np.ndarray:
    """The closed-loop matrix A - B K; single source of the sign convention."""
    return sys.A - sys.B @ K


def _realify_eig(Acl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real similarity (H, L) with Acl = H L H^-1, L block-diagonal.

    Real eigenvalues give 1x1 blocks; conjugate pairs a +- bi give
    [[a, b], [-b, a]] with columns [Re v, Im v], so each block's spectral
    norm is the eigenvalue modulus.
    """
    lam, V = np.linalg.eig(Acl)
    n = Acl.shape[0]
    H = np.zeros((n, n))
    L = np.zeros((n, n))
    used = np.zeros(n, dtype=bool)
    col = 0
    for j in range(n):
        if used[j]:
            continue
        lj, vj = lam[j], V[:, j]
        if abs(lj.imag) < 1e-12:
            used[j] = True
            w = vj.real
            nrm = np.linalg.norm(w)
            if nrm < 1e-300:
                raise IllConditioned("degenerate eigenvector column")
            H[:, col] = w / nrm
            L[col, col] = lj.real
            col += 1
        else:
            # find the conjugate partner among unused columns
            cands = [k for k in range(n) if not used[k] and k != j]
            k = min(cands, key=lambda k: abs(lam[k] - np.conj(lj)))
            used[j] = used[k] = True
            a, b = lj.real, lj.imag
            # one shared scale for both columns: diag(1/s, 1/s) commutes with
            # the rotation block, so the similarity stays exact
            s = max(np.linalg.norm(vj.real), np.linalg.norm(vj.imag))
            if s < 1e-300:
                raise IllConditioned("degenerate eigenvector pair")
            H[:, col] = vj.real / s
            H[:, col + 1] = vj.imag / s
            L[col:col + 2, col:col + 2] = np.array([[a, b], [-b, a]])
            col += 2
    # balance: H <- c H equalizes ||H|| and ||H^-1|| at sqrt(cond)
    Hinv = np.linalg.inv(H)
    c = np.sqrt(np.linalg.norm(Hinv, 2) / np.linalg.norm(H, 2))
    H = H * c
    return H, L


def certify_strong_stability(K: np.ndarray, sys: SystemParams) -> StabilityCertificate:
    """Build and verify a (kappa, gamma) certificate for u = -Kx.

    Raises NotStable when the spectral radius is >= 1 and IllConditioned
    when neither the eigenbasis nor the Schur fallback yields a reliable
    similarity.
    """
    Acl = closed_loop(K, sys)
    rho = float(np.max(np.abs(np.linalg.eigvals(Acl))))
    if rho >= 1.0:
        raise NotStable(f"spectral radius {rho:.6g} >= 1")

    H = L = None
    method = "eig"
    try:
        H, L = _realify_eig(Acl)
        cond = np.linalg.norm(H, 2) * np.linalg.norm(np.linalg.inv(H), 2)
        recon = np.linalg.norm(Acl - H @ L @ np.linalg.inv(H), 2)
        if cond > 1e8 or recon > 1e-8:
            H = None
    except (IllConditioned, np.linalg.LinAlgError):
        H = None

    if H is None:
        # Schur fallback: orthogonal similarity, so kappa cost is only ||K||,
        # but the contraction factor weakens to 1 - ||T||.
        T, Z = scipy.linalg.schur(Acl, output="real")
        tn = float(np.linalg.norm(T, 2))
        if tn >= 1.0:
            raise IllConditioned(
                f"eigenbasis unusable and Schur factor has norm {tn:.6g} >= 1"
            )
        H, L, method = Z, T, "schur"

    Hinv = np.linalg.inv(H)
    Lnorm = float(np.linalg.norm(L, 2))
    gamma = 1.0 - rho if method == "eig" else 1.0 - Lnorm
    kappa = float(max(np.linalg.norm(K, 2), np.linalg.norm(H, 2),
                      np.linalg.norm(Hinv, 2)))
    cert = StabilityCertificate(kappa=kappa, gamma=float(gamma), H_mat=H,
                                L_mat=L, K=np.asarray(K, dtype=float),
                                method=method)
    _verify(cert, Acl)
    return cert


def _verify(cert: StabilityCertificate, Acl: np.ndarray) -> None:
    Hinv = np.linalg.inv(cert.H_mat)
    checks = [
        (np.linalg.norm(cert.K, 2), cert.kappa, "||K|| <= kappa"),
        (np.linalg.norm(cert.H_mat, 2), cert.kappa, "||H|| <= kappa"),
        (np.linalg.norm(Hinv, 2), cert.kappa, "||H^-1|| <= kappa"),
        (np.linalg.norm(cert.L_mat, 2), 1.0 - cert.gamma, "||L|| <= 1-gamma"),
    ]
    for lhs, rhs, name in checks:
        if lhs > rhs + 1e-9:
            raise IllConditioned(f"certificate check failed: {name} "
                                 f"({lhs:.12g} > {rhs:.12g})")
    recon = np.linalg.norm(Acl - cert.H_mat @ cert.L_mat @ Hinv, 2)
    if recon > 1e-8:
        raise IllConditioned(f"similarity reconstruction error {recon:.3e} > 1e-8")
    if not (0.0 < cert.gamma <= 1.0):
        raise IllConditioned(f"gamma {cert.gamma} outside (0, 1]")


def strong_controllability(A_cl: np.ndarray, B: np.ndarray, q: int) -> ControllabilityReport:
    """Stacked reachability matrix [B, A_cl B, ..., A_cl^{q-1} B] and its conditioning."""
    if q < 1:
        raise ValueError("q must be >= 1")
    blocks = []
    P = np.eye(A_cl.shape[0])
    for _ in range(q):
        blocks.append(P @ B)
        P = A_cl @ P
    C_q = np.hstack(blocks)
    d1 = A_cl.shape[0]
    if C_q.shape[1] < d1:
        sigma_min = 0.0  # fewer columns than rows: cannot be full row rank
    else:
        svals = np.linalg.svd(C_q, compute_uv=False)  # length d1, descending
        sigma_min = float(svals[-1])
    if sigma_min < 1e-10:
        raise RankDeficient(
            f"C_q rank deficient (sigma_min={sigma_min:.3e}); increase q or fix B"
        )
    kappa_ctrl = 1.0 / sigma_min**2  # = ||(C_q C_q')^-1||
    return ControllabilityReport(q=q, C_q=C_q, sigma_min=sigma_min,
                                 kappa_ctrl=float(kappa_ctrl))


def synthesize_stabilizer(sys: SystemParams, Q: np.ndarray | None = None,
                          R: np.ndarray | None = None,
                          max_iter: int = 10_000) -> np.ndarray:
    """Stabilizing K from the discrete Riccati fixed-point iteration.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P = Q until the
    update falls below 1e-10, then K = (R + B'PB)^-1 B'PA.
    """
    A, B = sys.A, sys.B
    d1 = sys.d1
    Q = np.eye(d1) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(sys.d2) if R is None else np.asarray(R, dtype=float)
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = R + BtP @ B
        Knew = np.linalg.solve(G, BtP @ A)
        Pnew = Q + A.T @ P @ A - A.T @ P @ B @ Knew
        Pnew = (Pnew + Pnew.T) / 2.0
        delta = np.max(np.abs(Pnew - P))
        P = Pnew
        if not np.isfinite(P).all() or np.trace(P) > 1e12:
            raise NotStabilizable("Riccati iteration diverged")
        if delta < 1e-10:
            return Knew
    raise NotStabilizable(f"Riccati iteration did not converge in {max_iter} steps")


def perturbation_margin(cert: StabilityCertificate, eps: float) -> tuple[float, float]:
    """Degraded (kappa, gamma) valid for any system within eps of the certified one."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    budget = cert.gamma / (2.0 * cert.kappa**3)
    if eps >= budget:
        raise MarginExhausted(
            f"eps={eps:.6g} >= gamma/(2 kappa^3)={budget:.6g}"
        )
    return cert.kappa, cert.gamma - 2.0 * cert.kappa**3 * eps
