"""End-to-end acceptance battery: one test per headline claim.

Every test here computes its quantity from scratch, checks it at a pinned
tolerance, and records a PASS/FAIL verdict line (replayed as a terminal
summary section by conftest) before asserting — so one run shows the
verdict for every claim at once, with the measured numbers inline.

The heavy shared artifacts are session fixtures computed once and reused:
the known-dynamics ring sweep (A4), its complete-graph twin (A5), and the
unknown-dynamics sweep (A7, A8). The offline comparator cost for a given
(horizon, seed) depends only on the realized disturbances, never on the
communication graph, so the ring sweep's comparator is shared with the
complete-graph sweep; successive comparator solves within a seed warm-start
from the previous horizon's solution (zero-padded to the longer memory,
which stays inside the constraint set because the added blocks are zero).
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from gossipctrl import (
    BoundViolated,
    ClosedLoopCache,
    DfcParams,
    DfcSet,
    GossipCtrlError,
    KnownRunConfig,
    NoiseSchedule,
    QuadraticTrackingCosts,
    SystemParams,
    UnknownRunConfig,
    build_report,
    build_topology,
    certify_strong_stability,
    comparator_params,
    consensus_exchange,
    constraint_set_for,
    dfc_action,
    explore_collect,
    grad_surrogate_cost,
    individual_regret,
    infer_controllability_index,
    metropolis_weights,
    moment_estimates,
    noise_at,
    offline_optimal_dfc,
    project_to_set,
    recover_system,
    regret_slope,
    rollout_dfc_policy,
    run_known,
    run_unknown,
    step,
    surrogate_state,
    synthesize_stabilizer,
    trajectory_network_cost,
    transfer_matrix,
    verify_mixing_bound,
)
from conftest import record_acceptance
from reference import centralized_reference_loop

# Shared sweep layout: five agents on the well-conditioned rotation world,
# drifting quadratic tracking costs, unit-amplitude sinusoidal disturbances,
# step size 1/sqrt(T) and auto-resolved memory length.
SWEEP_M = 5
KNOWN_TS = (2000, 4000, 8000, 16000)
UNKNOWN_TS = (8000, 16000, 32000, 64000)
SEEDS = (0, 1, 2)
KEEP = (32000, 0)  # the (T, seed) unknown run retained for A7 and A10


def _check(tag: str, claim: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {tag} {claim}: {detail}"
    record_acceptance(line)
    assert ok, line


def _sweep_costs(seed: int, m: int = SWEEP_M) -> QuadraticTrackingCosts:
    return QuadraticTrackingCosts(
        kind="quadratic_tracking", m=m, d1=2, d2=2,
        Q=np.eye(2), R=np.eye(2), rho=0.8, seed=seed)


def _sweep_noise(seed: int) -> NoiseSchedule:
    return NoiseSchedule(kind="sinusoid", W=1.0, d1=2, seed=seed)


def _pad_policy(M: DfcParams, H: int) -> DfcParams:
    if M.H >= H:
        return M
    blocks = np.zeros((H, M.d2, M.d1))
    blocks[: M.H] = M.blocks
    return DfcParams(blocks=blocks)


def _offline_star(trace, costs, sys, K, cert, M0):
    """Comparator cost for one run: best fixed in-set policy in hindsight."""
    T = trace.meta["T"]
    H = trace.meta["H"]
    set_ = constraint_set_for(cert, H)
    noise = trace.shared_noise()
    warm = _pad_policy(M0, H) if M0 is not None else None
    res = offline_optimal_dfc(noise, costs, set_, sys, K, T, M0=warm)
    xs, us = rollout_dfc_policy(res.params, K, sys, noise, T)
    return trajectory_network_cost(costs, xs, us, T), res.params


@pytest.fixture(scope="session")
def known_sweep(mild_world):
    sys, K, cert = mild_world
    out = {"worst": {}, "total": {}, "J": {}}
    t0 = time.perf_counter()
    for seed in SEEDS:
        M0 = None
        for T in KNOWN_TS:
            cfg = KnownRunConfig(
                sys=sys, topology=build_topology("ring", SWEEP_M),
                costs=_sweep_costs(seed), noise=_sweep_noise(seed),
                T=T, K=K, seed=seed)
            trace = run_known(cfg)
            J, M0 = _offline_star(trace, cfg.costs, sys, K, cert, M0)
            regs = [individual_regret(trace, j, J) for j in range(SWEEP_M)]
            out["J"][(T, seed)] = J
            out["worst"][(T, seed)] = max(regs)
            out["total"][(T, seed)] = sum(regs)
    out["elapsed"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def complete_sweep(mild_world, known_sweep):
    sys, K, cert = mild_world
    total = {}
    t0 = time.perf_counter()
    for seed in SEEDS:
        for T in KNOWN_TS:
            cfg = KnownRunConfig(
                sys=sys, topology=build_topology("complete", SWEEP_M),
                costs=_sweep_costs(seed), noise=_sweep_noise(seed),
                T=T, K=K, seed=seed)
            trace = run_known(cfg)
            J = known_sweep["J"][(T, seed)]
            total[(T, seed)] = sum(
                individual_regret(trace, j, J) for j in range(SWEEP_M))
    return {"total": total, "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def unknown_sweep(mild_world):
    sys, K, cert = mild_world
    out = {"worst": {}, "kept": None}
    t0 = time.perf_counter()
    for seed in SEEDS:
        M0 = None
        for T in UNKNOWN_TS:
            cfg = UnknownRunConfig(
                sys=sys, topology=build_topology("ring", SWEEP_M),
                costs=_sweep_costs(seed), noise=_sweep_noise(seed),
                T=T, K=K, seed=seed)
            trace, report = run_unknown(cfg)
            J, M0 = _offline_star(trace, cfg.costs, sys, K, cert, M0)
            regs = [individual_regret(trace, j, J) for j in range(SWEEP_M)]
            out["worst"][(T, seed)] = max(regs)
            if (T, seed) == KEEP:
                out["kept"] = (trace, report)
    out["elapsed"] = time.perf_counter() - t0
    return out


# ---------------------------------------------------------------------------
# A1 — the comparator policy's disturbance-transfer maps reproduce the
# target controller's closed loop exactly, step for step.

def test_a1_comparator_policy_replays_target_loop():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    Hc = 8
    worst = 0.0
    checked = 0
    while checked < 50:
        d1 = int(rng.integers(1, 5))
        d2 = int(rng.integers(1, 4))
        A = rng.normal(size=(d1, d1))
        radius = max(abs(np.linalg.eigvals(A)))
        if radius > 1e-9:
            A *= float(rng.uniform(0.2, 0.9)) / radius
        B = rng.normal(size=(d1, d2))
        sys = SystemParams.from_matrices(A, B)
        try:
            K = synthesize_stabilizer(sys)
            certify_strong_stability(K, sys)
        except GossipCtrlError:
            continue
        K_star = None
        for scale in (0.3, 0.1, 0.03, 0.0):
            cand = K + scale * rng.normal(size=K.shape)
            try:
                certify_strong_stability(cand, sys)
            except GossipCtrlError:
                continue
            K_star = cand
            break
        if K_star is None:
            continue
        # An effectively unconstrained set: membership never interferes
        # with the pure transfer-map identity being checked here.
        set_ = DfcSet(scale=1e9, gamma=1e-9, H=Hc)
        M_star = comparator_params(K, K_star, A, B, Hc, set_=set_)
        window = [M_star] * (Hc + 1)
        cache = ClosedLoopCache(sys, K)
        A_star = A - B @ K_star
        for i in range(Hc + 1):
            psi = transfer_matrix(K, Hc, i, window, A, B, cache=cache)
            target = np.linalg.matrix_power(A_star, i)
            worst = max(worst, float(np.linalg.norm(psi - target, 2)))
        checked += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 5.0
    _check("A1", "comparator policy replays the target closed loop",
           ok, f"max deviation {worst:.2e} (tol 1e-09) over 50 systems, "
               f"lags 0..{Hc}; {dt:.1f}s < 5s")


# ---------------------------------------------------------------------------
# A2 — the truncation error of the memory-H surrogate state decays
# geometrically in H at the certified contraction rate.

def test_a2_prediction_gap_decays_geometrically(slow_world):
    sys, K, cert = slow_world
    t0 = time.perf_counter()
    T = 400
    noise = NoiseSchedule(kind="sinusoid", W=1.0, d1=2, seed=3)
    Wrows = np.stack([noise_at(noise, t) for t in range(T + 1)])
    Hs = (2, 4, 6, 8, 10, 12)
    rng = np.random.default_rng(7)
    gaps = []
    for H in Hs:
        set_ = constraint_set_for(cert, H)
        M = project_to_set(
            DfcParams(blocks=0.3 * rng.standard_normal((H, 2, 2))), set_)
        # True trajectory via a plain local recursion (independent of the
        # engine), with the fixed policy M playing against the recorded
        # disturbances; the surrogate prediction comes from the library.
        x = np.zeros(2)
        hist = np.zeros((2 * H + 2, 2))
        gap = 0.0
        for t in range(1, T + 1):
            w = Wrows[t]
            nh = np.vstack([w[None, :], hist[:-1]])
            hist = nh
            u = -K @ x + sum(M.blocks[k] @ nh[k + 1] for k in range(H))
            x_next = sys.A @ x + sys.B @ u + w
            if t >= 2 * H + 1:
                y = surrogate_state([M] * (H + 1), sys.A, sys.B, K, nh)
                gap = max(gap, float(np.linalg.norm(x_next - y)))
            x = x_next
        gaps.append(gap)
    design = np.vstack([np.asarray(Hs, float), np.ones(len(Hs))]).T
    slope = float(np.linalg.lstsq(design, np.log(gaps), rcond=None)[0][0])
    target = math.log(1.0 - cert.gamma)
    rel = abs(slope - target) / abs(target)
    dt = time.perf_counter() - t0
    ok = rel <= 0.20 and dt < 30.0
    _check("A2", "prediction gap decays geometrically in the memory length",
           ok, f"fitted slope {slope:.3f} vs log(1-gamma) {target:.3f}, "
               f"rel dev {rel:.1%} <= 20%; {dt:.1f}s < 30s")


# ---------------------------------------------------------------------------
# A3 — the closed-form gradient of the surrogate round cost agrees with
# central finite differences across random configurations.

def test_a3_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(20):
        d1 = int(rng.integers(1, 5))
        d2 = int(rng.integers(1, 4))
        H = int(rng.integers(1, 6))
        A = rng.normal(size=(d1, d1)) * 0.4
        B = rng.normal(size=(d1, d2))
        sys = SystemParams.from_matrices(A, B)
        K = rng.normal(size=(d2, d1)) * 0.15
        costs = QuadraticTrackingCosts(
            kind="quadratic_tracking", m=1, d1=d1, d2=d2,
            Q=np.eye(d1), R=np.eye(d2), rho=0.6,
            seed=int(rng.integers(1000)))
        M = DfcParams(blocks=rng.normal(size=(H, d2, d1)) * 0.3)
        nh = rng.normal(size=(2 * H + 1, d1))
        t = int(rng.integers(1, 60))
        ga = grad_surrogate_cost(costs, 0, t, M, sys, K, nh)
        gf = grad_surrogate_cost(costs, 0, t, M, sys, K, nh, method="fd")
        rel = np.max(np.abs(ga - gf)) / max(np.max(np.abs(gf)), 1e-12)
        worst = max(worst, float(rel))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 10.0
    _check("A3", "analytic gradient matches finite differences",
           ok, f"max relative error {worst:.2e} (tol 1e-05) over 20 "
               f"configurations; {dt:.1f}s < 10s")


# ---------------------------------------------------------------------------
# A4 — with known dynamics, worst-agent regret against the best fixed
# in-set policy grows sublinearly, near sqrt(T).

def test_a4_known_dynamics_regret_slope(known_sweep):
    meds = [(T, float(np.median([known_sweep["worst"][(T, s)] for s in SEEDS])))
            for T in KNOWN_TS]
    slope, _, r2 = regret_slope(meds)
    dt = known_sweep["elapsed"]
    ok = 0.40 <= slope <= 0.68 and r2 >= 0.95 and dt < 600.0
    pts = ", ".join(f"T={T}: {r:.0f}" for T, r in meds)
    _check("A4", "known-dynamics regret grows sublinearly",
           ok, f"log-log slope {slope:.3f} in [0.40, 0.68], r2 {r2:.4f} "
               f">= 0.95, medians of 3 seeds ({pts}); {dt:.0f}s < 600s")


# ---------------------------------------------------------------------------
# A5 — a denser communication graph never hurts: complete-graph total
# regret is at most ring total regret at every horizon.

def test_a5_denser_network_never_hurts(known_sweep, complete_sweep):
    rows = []
    ok = True
    for T in KNOWN_TS:
        ring = float(np.median([known_sweep["total"][(T, s)] for s in SEEDS]))
        comp = float(np.median([complete_sweep["total"][(T, s)] for s in SEEDS]))
        ok = ok and comp <= ring
        rows.append(f"T={T}: {comp:.0f} <= {ring:.0f}")
    _check("A5", "denser network never hurts total regret",
           ok, f"complete vs ring medians of 3 seeds ({'; '.join(rows)}); "
               f"twin sweep {complete_sweep['elapsed']:.0f}s")


# ---------------------------------------------------------------------------
# A6 — the identification error of the gossiped moment estimates decays
# like one over the square root of the probing budget, and more agents
# pooling their probes beat fewer agents at the same per-agent budget.
# Each agent sees its own disturbance stream (that independence is what
# makes pooling average anything); the gossip graph is the ring with the
# pipeline's default number of exchange rounds, so per-agent estimates
# stay distinct and "median error" is the median of that population.

def test_a6_estimation_error_rate(mild_world):
    from gossipctrl import mixing_factor
    from gossipctrl.sysid import default_exchange_rounds

    sys, K, cert = mild_world
    t0 = time.perf_counter()
    q = infer_controllability_index(sys.A - sys.B @ K, sys.B)

    def agent_errors(m: int, Tc: int, seed: int) -> list[float]:
        topo = build_topology("ring", m)
        P = metropolis_weights(topo)
        rounds = default_exchange_rounds(Tc, mixing_factor(P), m)
        noises = [NoiseSchedule(kind="sinusoid", W=1.0, d1=2,
                                seed=1000 * seed + j) for j in range(m)]
        trace = explore_collect(sys, K, Tc, m, seed, noises)
        stacks = moment_estimates(trace, q)
        stacks = consensus_exchange(stacks, P, rounds)
        report = build_report(
            stacks, K, T_collect=Tc, T_exchange=rounds, delta=0.1,
            kappa=cert.kappa, gamma=cert.gamma, W=1.0, sys_true=sys)
        return [float(e) for e in report.eps_per_agent]

    tcs = (2000, 4000, 8000, 16000)
    meds = []
    for Tc in tcs:
        pool = [e for s in SEEDS for e in agent_errors(4, Tc, s)]
        meds.append((Tc, float(np.median(pool))))
    slope = regret_slope(meds)[0]
    few = float(np.median([e for s in SEEDS for e in agent_errors(2, 8000, s)]))
    many = float(np.median([e for s in SEEDS for e in agent_errors(8, 8000, s)]))
    dt = time.perf_counter() - t0
    ok = -0.65 <= slope <= -0.35 and many < few and dt < 300.0
    pts = ", ".join(f"{Tc}: {e:.4f}" for Tc, e in meds)
    _check("A6", "identification error decays at the pooled-data rate",
           ok, f"log-log slope {slope:.3f} in [-0.65, -0.35] over probing "
               f"budgets ({pts}); 8 agents {many:.4f} < 2 agents {few:.4f} "
               f"at budget 8000; {dt:.0f}s < 300s")


# ---------------------------------------------------------------------------
# A7 — on a full unknown-dynamics run whose measured model error satisfies
# the certified-margin precondition, every committed-round disturbance
# residual stays within the quoted multiple of that error.

def test_a7_committed_noise_error_within_quote(mild_world, unknown_sweep):
    sys, K, cert = mild_world
    trace, report = unknown_sweep["kept"]
    eps = float(trace.meta["eps_max"])
    precondition = cert.gamma**2 / (12.0 * cert.kappa**7)
    zeta = 24.0 * 1.0 * math.sqrt(sys.d2) * cert.kappa**7 / cert.gamma**2
    T0 = trace.meta["T0"]
    committed = trace.noise_err[T0 + 1:, :]
    worst = float(committed.max())
    bound = zeta * eps
    ok = eps <= precondition and worst <= bound
    _check("A7", "committed-phase residuals stay within the quoted bound",
           ok, f"measured model error {eps:.4f} <= precondition "
               f"{precondition:.4f}; max residual {worst:.4f} <= "
               f"zeta*eps {bound:.4f} (zeta {zeta:.1f}) over "
               f"{committed.shape[0]} rounds x {committed.shape[1]} agents")


# ---------------------------------------------------------------------------
# A8 — with unknown dynamics (explore, identify, then commit), worst-agent
# regret still grows sublinearly, at the slower two-thirds-power rate; at
# minimum the exploration premium over the known-dynamics slope shows up.

def test_a8_unknown_dynamics_regret_slope(known_sweep, unknown_sweep):
    meds = [(T, float(np.median([unknown_sweep["worst"][(T, s)]
                                 for s in SEEDS]))) for T in UNKNOWN_TS]
    slope_u, _, r2 = regret_slope(meds)
    meds_k = [(T, float(np.median([known_sweep["worst"][(T, s)]
                                   for s in SEEDS]))) for T in KNOWN_TS]
    slope_k = regret_slope(meds_k)[0]
    dt = unknown_sweep["elapsed"]
    in_band = 0.55 <= slope_u <= 0.80
    premium = slope_u - slope_k
    ok = (in_band or premium >= 0.08) and dt < 1800.0
    pts = ", ".join(f"T={T}: {r:.0f}" for T, r in meds)
    _check("A8", "unknown-dynamics regret grows at the exploration rate",
           ok, f"log-log slope {slope_u:.3f} (band [0.55, 0.80] "
               f"{'met' if in_band else 'missed'}, r2 {r2:.4f}), premium "
               f"over known slope {slope_k:.3f} is {premium:+.3f}; "
               f"medians ({pts}); {dt:.0f}s < 1800s")


# ---------------------------------------------------------------------------
# A9 — the three reduction identities: the multi-agent engine at m=1 equals
# an independently written single-agent loop bit for bit; the unknown-mode
# engine with oracle estimates equals the known-mode engine bit for bit;
# exact moments invert to the true dynamics.

def test_a9_reductions_match_references(mild_world):
    sys, K, cert = mild_world
    t0 = time.perf_counter()

    T, H, eta = 200, 5, 0.04
    cfg = KnownRunConfig(
        sys=sys, topology=build_topology("complete", 1),
        costs=_sweep_costs(11, m=1), noise=_sweep_noise(11),
        T=T, K=K, H=H, eta=eta)
    trace = run_known(cfg)
    set_ = constraint_set_for(cert, H)
    xs, us, cost_rows, M = centralized_reference_loop(
        sys, K, cfg.costs, trace.shared_noise(), T, H, eta, set_)
    single = (np.array_equal(trace.x[1:, 0, :], xs[1:])
              and np.array_equal(trace.u[1:, 0, :], us[1:])
              and np.array_equal(trace.cost_row[1:, 0], cost_rows[1:])
              and np.array_equal(trace.M_final[0], M.blocks))

    base = dict(
        sys=sys, topology=build_topology("ring", 3),
        costs=_sweep_costs(4, m=3), noise=_sweep_noise(4),
        T=150, K=K, H=4, eta=0.05, seed=4)
    known = run_known(KnownRunConfig(**base))
    utrace, ureport = run_unknown(
        UnknownRunConfig(oracle_estimates=True, **base))
    oracle = (ureport.eps_max == 0.0
              and np.array_equal(utrace.x, known.x)
              and np.array_equal(utrace.u, known.u)
              and np.array_equal(utrace.M_final, known.M_final)
              and np.array_equal(utrace.digest, known.digest))

    q = 3
    A_cl = sys.A - sys.B @ K
    stack = np.stack([np.linalg.matrix_power(A_cl, k) @ sys.B
                      for k in range(q + 1)])
    A_hat, B_hat = recover_system(stack, K, q=q)
    inv_dev = max(float(np.max(np.abs(A_hat - sys.A))),
                  float(np.max(np.abs(B_hat - sys.B))))
    inversion = inv_dev <= 1e-10

    dt = time.perf_counter() - t0
    ok = single and oracle and inversion
    _check("A9", "reduction identities hold",
           ok, f"single-agent bitwise {single}; oracle-estimate bitwise "
               f"{oracle}; exact-moment inversion dev {inv_dev:.1e} "
               f"(tol 1e-10); {dt:.1f}s")


# ---------------------------------------------------------------------------
# A10 — the invariant suites hold with zero violations: projection
# (membership, idempotence, nonexpansiveness), gossip mixing decay to
# k=50, stability certificates on 100 random systems, and the committed
# phase of an unknown-dynamics run replaying exactly as an online run on
# the estimated world.

def test_a10_invariant_suites(mild_world):
    sys, K, cert = mild_world
    t0 = time.perf_counter()
    violations: list[str] = []
    checks = 0

    rng = np.random.default_rng(1010)
    for _ in range(60):
        d1 = int(rng.integers(1, 4))
        d2 = int(rng.integers(1, 4))
        H = int(rng.integers(1, 7))
        set_ = DfcSet(scale=float(rng.uniform(0.3, 3.0)),
                      gamma=float(rng.uniform(0.05, 0.95)), H=H)
        raw_a = DfcParams(blocks=rng.normal(size=(H, d2, d1))
                          * float(rng.uniform(0.1, 3.0)))
        raw_b = DfcParams(blocks=rng.normal(size=(H, d2, d1))
                          * float(rng.uniform(0.1, 3.0)))
        pa = project_to_set(raw_a, set_)
        pb = project_to_set(raw_b, set_)
        checks += 3
        if not set_.contains(pa):
            violations.append("projection membership")
        if np.max(np.abs(project_to_set(pa, set_).blocks - pa.blocks)) > 1e-12:
            violations.append("projection idempotence")
        if (np.linalg.norm((pa.blocks - pb.blocks).ravel())
                > np.linalg.norm((raw_a.blocks - raw_b.blocks).ravel())
                + 1e-12):
            violations.append("projection nonexpansiveness")

    for kind, m in (("ring", 5), ("ring", 8), ("complete", 6),
                    ("grid", 6), ("erdos_renyi", 7)):
        topo = build_topology(kind, m, seed=2,
                              p=0.7 if kind == "erdos_renyi" else None)
        checks += 1
        try:
            verify_mixing_bound(metropolis_weights(topo), k_max=50)
        except BoundViolated:
            violations.append(f"mixing {kind}-{m}")

    rng2 = np.random.default_rng(2020)
    done = 0
    while done < 100:
        d1 = int(rng2.integers(1, 5))
        d2 = int(rng2.integers(1, 4))
        A = rng2.normal(size=(d1, d1)) * 0.5
        B = rng2.normal(size=(d1, d2))
        sysr = SystemParams.from_matrices(A, B)
        try:
            Kr = synthesize_stabilizer(sysr)
        except GossipCtrlError:
            continue
        certr = certify_strong_stability(Kr, sysr)
        A_cl = sysr.A - sysr.B @ Kr
        checks += 1
        power = np.eye(d1)
        sound = np.linalg.norm(Kr, 2) <= certr.kappa + 1e-9
        for k in range(1, 51):
            power = power @ A_cl
            envelope = certr.kappa**2 * (1.0 - certr.gamma) ** k
            if np.linalg.norm(power, 2) > envelope + 1e-9:
                sound = False
                break
        if not sound:
            violations.append("certificate envelope")
        done += 1

    # Committed phase replay on the estimated world: from the commit round
    # on, the run must be indistinguishable from an online run whose true
    # dynamics ARE the estimates, driven by the logged residuals.
    cfg = UnknownRunConfig(
        sys=sys, topology=build_topology("complete", 1),
        costs=_sweep_costs(6, m=1), noise=_sweep_noise(6),
        T=800, K=K, H=4, eta=0.05, T_collect=100, T_exchange=0, seed=6)
    trace, report = run_unknown(cfg)
    T0 = trace.meta["T0"]
    H = trace.meta["H"]
    eta = trace.meta["eta"]
    sys_hat = SystemParams.from_matrices(report.A_hats[0], report.B_hats[0])
    set_ = constraint_set_for(cert, H)
    M = DfcParams.zeros(H, sys.d2, sys.d1)
    hist = np.zeros((2 * H + 1, sys.d1))
    x = trace.x[T0 + 1, 0].copy()
    dev = 0.0
    for t in range(T0 + 1, cfg.T + 1):
        dev = max(dev, float(np.max(np.abs(x - trace.x[t, 0]))))
        u = dfc_action(K, x, M, hist)
        dev = max(dev, float(np.max(np.abs(u - trace.u[t, 0]))))
        w_res = trace.w_hat[t, 0]
        x = step(x, u, w_res, sys_hat)
        hist = np.vstack([w_res[None, :], hist[:-1]])
        g = grad_surrogate_cost(cfg.costs, 0, t, M, sys_hat, K, hist)
        M = project_to_set(DfcParams(blocks=M.blocks - eta * g), set_)
    dev = max(dev, float(np.max(np.abs(x - trace.x[cfg.T + 1, 0]))))
    dev = max(dev, float(np.max(np.abs(M.blocks - trace.M_final[0]))))
    checks += 1
    if dev > 1e-12:
        violations.append("equivalent world")

    dt = time.perf_counter() - t0
    ok = not violations
    _check("A10", "invariant suites hold with zero violations",
           ok, f"{checks} checks (projection x180, mixing x5, "
               f"certificates x100, equivalent-world dev {dev:.1e} "
               f"tol 1e-12); violations: {violations or 'none'}; {dt:.1f}s")
