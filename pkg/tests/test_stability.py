"""Stability certificates, controllability reports, and controller synthesis."""

import numpy as np
import pytest
import scipy.linalg

from gossipctrl import (
    MarginExhausted,
    NotStabilizable,
    NotStable,
    RankDeficient,
    SystemParams,
    certify_strong_stability,
    closed_loop,
    perturbation_margin,
    strong_controllability,
    synthesize_stabilizer,
)


def _certificate_is_sound(cert, A_cl, tol=1e-8):
    assert np.linalg.norm(cert.H_mat, 2) <= cert.kappa + 1e-9
    assert np.linalg.norm(np.linalg.inv(cert.H_mat), 2) <= cert.kappa + 1e-9
    assert np.linalg.norm(cert.L_mat, 2) <= 1.0 - cert.gamma + 1e-9
    recon = cert.H_mat @ cert.L_mat @ np.linalg.inv(cert.H_mat)
    assert np.linalg.norm(A_cl - recon, 2) <= tol


def test_certify_diagonal_world():
    sys = SystemParams.from_matrices(0.5 * np.eye(2), np.eye(2))
    cert = certify_strong_stability(np.zeros((2, 2)), sys)
    assert cert.gamma == pytest.approx(0.5, abs=1e-12)
    assert cert.kappa == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(cert.L_mat, 0.5 * np.eye(2), atol=1e-12)


def test_certify_scalar_arithmetic():
    sys = SystemParams.from_matrices(np.array([[1.2]]), np.array([[1.0]]))
    cert = certify_strong_stability(np.array([[0.5]]), sys)
    assert cert.gamma == pytest.approx(0.3, abs=1e-12)


def test_certify_reconstructs_closed_loop():
    rng = np.random.default_rng(0)
    for _ in range(25):
        d = 4
        # Random stable closed loop: scale a random matrix under its radius.
        M = rng.normal(size=(d, d))
        M *= rng.uniform(0.3, 0.95) / max(abs(np.linalg.eigvals(M)))
        B = rng.normal(size=(d, 2))
        sys = SystemParams.from_matrices(M, B)
        cert = certify_strong_stability(np.zeros((2, d)), sys)
        _certificate_is_sound(cert, M)


def test_certify_rejects_unstable():
    sys = SystemParams.from_matrices(1.01 * np.eye(2), np.eye(2))
    with pytest.raises(NotStable):
        certify_strong_stability(np.zeros((2, 2)), sys)


def test_certify_complex_pair_realified():
    # Rotation scaled by 0.8: complex eigenvalues, realified certificate.
    th = 0.7
    A = 0.8 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    sys = SystemParams.from_matrices(A, np.eye(2))
    cert = certify_strong_stability(np.zeros((2, 2)), sys)
    assert cert.gamma == pytest.approx(0.2, abs=1e-10)
    _certificate_is_sound(cert, A)
    assert np.isrealobj(cert.H_mat) and np.isrealobj(cert.L_mat)


def test_controllability_identity_case():
    report = strong_controllability(np.zeros((2, 2)), np.eye(2), 1)
    assert report.sigma_min == pytest.approx(1.0)
    assert report.kappa_ctrl == pytest.approx(1.0)
    assert np.array_equal(report.C_q, np.eye(2))


def test_controllability_zero_input_rank_deficient():
    with pytest.raises(RankDeficient):
        strong_controllability(0.5 * np.eye(2), np.zeros((2, 2)), 2)


def test_controllability_scalar_hand_computation():
    # a=0.5, b=2, q=2: C_q = [2, 1], C C^T = 5, kappa_ctrl = 0.2.
    report = strong_controllability(np.array([[0.5]]), np.array([[2.0]]), 2)
    assert np.allclose(report.C_q, [[2.0, 1.0]])
    assert report.kappa_ctrl == pytest.approx(0.2, abs=1e-12)


def test_controllability_gramian_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d1, d2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        A = rng.normal(size=(d1, d1)) * 0.5
        B = rng.normal(size=(d1, d2))
        q = d1 + 1
        try:
            report = strong_controllability(A, B, q)
        except RankDeficient:
            continue
        G = report.C_q @ report.C_q.T
        assert np.allclose(G, G.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(G) >= -1e-12)
        # kappa_ctrl = 1/sigma_min(G) and sigma_min(G) = sigma_min(C_q)^2.
        assert report.kappa_ctrl * report.sigma_min**2 == pytest.approx(
            1.0, rel=1e-9)


def test_synthesize_dead_beat_world():
    sys = SystemParams.from_matrices(np.zeros((2, 2)), np.eye(2))
    K = synthesize_stabilizer(sys)
    cert = certify_strong_stability(K, sys)
    assert np.allclose(K, 0.0, atol=1e-12)
    assert cert.gamma == pytest.approx(1.0, abs=1e-12)


def test_synthesize_scalar_unstable_plant():
    sys = SystemParams.from_matrices(np.array([[2.0]]), np.array([[1.0]]))
    K = synthesize_stabilizer(sys)
    assert abs(2.0 - K[0, 0]) < 1.0
    certify_strong_stability(K, sys)  # must not raise


def test_synthesize_matches_riccati_oracle():
    # Independent oracle: scipy's DARE solver gives the same gain.
    rng = np.random.default_rng(2)
    for _ in range(10):
        d1, d2 = 3, 2
        A = rng.normal(size=(d1, d1)) * 0.6
        B = rng.normal(size=(d1, d2))
        sys = SystemParams.from_matrices(A, B)
        K = synthesize_stabilizer(sys)
        P = scipy.linalg.solve_discrete_are(A, B, np.eye(d1), np.eye(d2))
        K_oracle = np.linalg.solve(np.eye(d2) + B.T @ P @ B, B.T @ P @ A)
        assert np.allclose(K, K_oracle, atol=1e-8)


def test_synthesize_uncontrollable_unstable_raises():
    A = np.diag([2.0, 0.5])
    B = np.array([[0.0], [1.0]])  # unstable mode unreachable
    sys = SystemParams.from_matrices(A, B)
    with pytest.raises(NotStabilizable):
        synthesize_stabilizer(sys)


def test_perturbation_margin_zero_eps():
    sys = SystemParams.from_matrices(0.5 * np.eye(2), np.eye(2))
    cert = certify_strong_stability(np.zeros((2, 2)), sys)
    kappa, gamma = perturbation_margin(cert, 0.0)
    assert gamma == cert.gamma and kappa == cert.kappa


def test_perturbation_margin_formula():
    sys = SystemParams.from_matrices(0.5 * np.eye(2), np.eye(2))
    cert = certify_strong_stability(np.zeros((2, 2)), sys)
    assert cert.kappa == pytest.approx(1.0, abs=1e-9)
    _, gamma_new = perturbation_margin(cert, 0.1)
    assert gamma_new == pytest.approx(cert.gamma - 2 * cert.kappa**3 * 0.1,
                                      abs=1e-9)


def test_perturbation_margin_boundary_exhausted():
    sys = SystemParams.from_matrices(0.5 * np.eye(2), np.eye(2))
    cert = certify_strong_stability(np.zeros((2, 2)), sys)
    eps = cert.gamma / (2 * cert.kappa**3)
    with pytest.raises(MarginExhausted):
        perturbation_margin(cert, eps)


def test_certificate_soundness_hundred_systems():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        d1 = int(rng.integers(1, 5))
        d2 = int(rng.integers(1, 4))
        A = rng.normal(size=(d1, d1)) * 0.5
        B = rng.normal(size=(d1, d2))
        sys = SystemParams.from_matrices(A, B)
        try:
            K = synthesize_stabilizer(sys)
        except NotStabilizable:
            continue
        cert = certify_strong_stability(K, sys)
        _certificate_is_sound(cert, closed_loop(K, sys))
        assert np.linalg.norm(K, 2) <= cert.kappa + 1e-9
        checked += 1


def test_perturbed_system_keeps_degraded_margin():
    # K still certifies on a nearby system, with gamma degraded by at
    # most 2 kappa^3 eps.
    rng = np.random.default_rng(4)
    sys = SystemParams.from_matrices(
        np.array([[0.6, 0.1], [0.0, 0.5]]), np.eye(2))
    K = synthesize_stabilizer(sys)
    cert = certify_strong_stability(K, sys)
    eps = 0.2 * cert.gamma / (2 * cert.kappa**3)
    for _ in range(20):
        dA = rng.normal(size=(2, 2))
        dA *= eps / np.linalg.norm(dA, 2)
        dB = rng.normal(size=(2, 2))
        dB *= eps / np.linalg.norm(dB, 2)
        sys2 = SystemParams.from_matrices(sys.A + dA, sys.B + dB)
        cert2 = certify_strong_stability(K, sys2)
        # Perturbing (A, B) by eps moves the closed loop by at most
        # eps(1 + ||K||) <= 2 kappa^3 eps worth of certified margin.
        assert cert2.gamma >= cert.gamma - 2 * cert.kappa**3 * eps * (
            1 + np.linalg.norm(K, 2)) - 1e-6
