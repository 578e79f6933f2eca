"""Experiment orchestration: config files in, reproducible artifacts out.

A single TOML file describes the world, the network, and the run; this
module materializes every default, executes the requested mode, and writes
trace.csv / summary.json (and slopes.csv for sweeps, sysid_report.json for
unknown modes). The resolved config is echoed into summary.json so any run
can be replayed byte-identically from its own summary.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10: same parser, published as tomli
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dfc import constraint_set_for
from .errors import ConfigError, GossipCtrlError, VersionMismatch
from .known import ExperimentTrace, KnownRunConfig, PHASE_NAMES, run_known
from .network import Topology, build_topology, metropolis_weights, mixing_factor
from .regret import (
    OfflineDfcResult,
    individual_regret,
    linear_policy_grid,
    offline_optimal_dfc,
    best_linear_in_hindsight,
    regret_slope,
    rollout_dfc_policy,
    trajectory_network_cost,
)
from .stability import certify_strong_stability, synthesize_stabilizer
from .sysid import SysIdReport
from .unknown import UnknownRunConfig, run_unknown
from .world import NoiseSchedule, QuadraticTrackingCosts, SystemParams

SCHEMA_VERSION = 1

_MODES = ("known", "unknown", "sysid_only", "sweep")


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}.{key}" if where else key, "missing field")
    return table[key]


def _matrix(value, name: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(name, f"not a numeric matrix: {e}") from e
    if arr.ndim != 2:
        raise ConfigError(name, "must be a 2-D matrix")
    return arr


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"file not found: {p}")
    try:
        with open(p, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config", f"parse error: {e}") from e


@dataclass
class ResolvedConfig:
    """Every field materialized; serializes back to a replayable dict."""

    mode: str
    seed: int
    repetitions: int
    out: str | None
    sys: SystemParams
    K: np.ndarray | None
    topology: Topology
    costs: QuadraticTrackingCosts
    noise: NoiseSchedule
    T: int
    eta: float | str
    eta0: float
    H: int | str
    init: str
    set_scale: float | str
    independent_noise: bool
    # unknown-mode extras
    T_collect: int | str | None = None
    T_exchange: int | str | None = None
    q: int | str | None = None
    delta: float = 0.1
    collect_scale: float = 1.0
    # sweep extras
    sweep_T_values: list = field(default_factory=list)
    sweep_mode: str = "known"
    comparator: str = "offline_dfc"

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode, "seed": self.seed,
            "repetitions": self.repetitions,
            "system": {"A": self.sys.A.tolist(), "B": self.sys.B.tolist()},
            "topology": self.topology.to_dict(),
            "costs": {
                "kind": self.costs.kind, "Q": self.costs.Q.tolist(),
                "R": self.costs.R.tolist(), "rho": self.costs.rho,
                "nu": self.costs.nu, "seed": self.costs.seed,
                "phase_split": self.costs.phase_split,
            },
            "noise": {"kind": self.noise.kind, "W": self.noise.W,
                      "seed": self.noise.seed},
            "run": {"T": self.T, "eta": self.eta, "eta0": self.eta0,
                    "H": self.H, "init": self.init,
                    "set_scale": self.set_scale,
                    "independent_noise": self.independent_noise},
        }
        if self.K is not None:
            d["system"]["K"] = self.K.tolist()
        if self.mode in ("unknown", "sysid_only") or \
                (self.mode == "sweep" and self.sweep_mode == "unknown"):
            d["unknown"] = {"T_collect": self.T_collect,
                            "T_exchange": self.T_exchange, "q": self.q,
                            "delta": self.delta,
                            "collect_scale": self.collect_scale}
        if self.mode == "sweep":
            d["sweep"] = {"T_values": list(self.sweep_T_values),
                          "mode": self.sweep_mode,
                          "comparator": self.comparator}
        return d


def resolve_config(raw: dict, *, seed_override: int | None = None,
                   mode_override: str | None = None) -> ResolvedConfig:
    """Validate the raw mapping and materialize defaults."""
    mode = mode_override or _require(raw, "mode", "")
    if mode not in _MODES:
        raise ConfigError("mode", f"must be one of {_MODES}, got {mode!r}")
    seed = seed_override if seed_override is not None \
        else int(raw.get("seed", 0))
    repetitions = int(raw.get("repetitions", 1))
    if repetitions < 1:
        raise ConfigError("repetitions", "must be >= 1")

    system = _require(raw, "system", "")
    A = _matrix(_require(system, "A", "system"), "system.A")
    B = _matrix(_require(system, "B", "system"), "system.B")
    try:
        sys = SystemParams.from_matrices(A, B)
    except GossipCtrlError as e:
        raise ConfigError("system", str(e)) from e
    K = None
    if "K" in system:
        K = _matrix(system["K"], "system.K")

    topo_t = _require(raw, "topology", "")
    kind = _require(topo_t, "kind", "topology")
    m = int(_require(topo_t, "m", "topology"))
    try:
        topology = build_topology(kind, m, seed=int(topo_t.get("seed", 0)),
                                  p=topo_t.get("p"))
    except (GossipCtrlError, ValueError) as e:
        raise ConfigError("topology", str(e)) from e

    cost_t = _require(raw, "costs", "")
    ckind = cost_t.get("kind", "quadratic_tracking")
    Q = _matrix(cost_t.get("Q", np.eye(sys.d1).tolist()), "costs.Q")
    R = _matrix(cost_t.get("R", np.eye(sys.d2).tolist()), "costs.R")
    try:
        costs = QuadraticTrackingCosts(
            kind=ckind, m=m, d1=sys.d1, d2=sys.d2, Q=Q, R=R,
            rho=float(cost_t.get("rho", 1.0)),
            nu=float(cost_t.get("nu", 0.0)),
            seed=int(cost_t.get("seed", 0)),
            phase_split=bool(cost_t.get("phase_split", True)),
        )
    except (GossipCtrlError, ValueError) as e:
        raise ConfigError("costs", str(e)) from e

    noise_t = _require(raw, "noise", "")
    try:
        noise = NoiseSchedule(
            kind=_require(noise_t, "kind", "noise"),
            W=float(noise_t.get("W", 1.0)), d1=sys.d1,
            seed=int(noise_t.get("seed", 0)),
        )
    except (GossipCtrlError, ValueError) as e:
        raise ConfigError("noise", str(e)) from e

    run_t = _require(raw, "run", "")
    if mode == "sweep":
        # Horizons come from sweep.T_values; run.T is optional filler.
        T = int(run_t.get("T", 0))
    else:
        T = int(_require(run_t, "T", "run"))
        if T < 1:
            raise ConfigError("run.T", "horizon must be >= 1")
    eta = _require(run_t, "eta", "run")
    if eta != "auto":
        eta = float(eta)
        if not eta > 0:
            raise ConfigError("run.eta", "must be > 0 or 'auto'")
    H = run_t.get("H", "auto")
    if H != "auto":
        H = int(H)
        if H < 1:
            raise ConfigError("run.H", "must be >= 1 or 'auto'")
    set_scale = run_t.get("set_scale", "auto")
    if set_scale != "auto":
        set_scale = float(set_scale)

    cfg = ResolvedConfig(
        mode=mode, seed=seed, repetitions=repetitions,
        out=raw.get("out"), sys=sys, K=K, topology=topology, costs=costs,
        noise=noise, T=T, eta=eta, eta0=float(run_t.get("eta0", 1.0)),
        H=H, init=str(run_t.get("init", "zeros")), set_scale=set_scale,
        independent_noise=bool(run_t.get("independent_noise", False)),
    )

    needs_unknown = mode in ("unknown", "sysid_only") or \
        (mode == "sweep" and raw.get("sweep", {}).get("mode") == "unknown")
    if needs_unknown:
        unk = _require(raw, "unknown", "")
        cfg.T_collect = _require(unk, "T_collect", "unknown")
        cfg.T_exchange = _require(unk, "T_exchange", "unknown")
        cfg.q = _require(unk, "q", "unknown")
        for name in ("T_collect", "T_exchange", "q"):
            v = getattr(cfg, name)
            if v != "auto":
                setattr(cfg, name, int(v))
        cfg.delta = float(unk.get("delta", 0.1))
        cfg.collect_scale = float(unk.get("collect_scale", 1.0))

    if mode == "sweep":
        sw = _require(raw, "sweep", "")
        cfg.sweep_T_values = [int(v) for v in _require(sw, "T_values", "sweep")]
        if len(cfg.sweep_T_values) < 1:
            raise ConfigError("sweep.T_values", "must be non-empty")
        cfg.sweep_mode = sw.get("mode", "known")
        if cfg.sweep_mode not in ("known", "unknown"):
            raise ConfigError("sweep.mode", "must be known or unknown")
        cfg.comparator = sw.get("comparator", "offline_dfc")
        if cfg.comparator not in ("offline_dfc", "grid"):
            raise ConfigError("sweep.comparator",
                              "must be offline_dfc or grid")
    return cfg


def _json_sanitize(obj):
    """Recursively convert numpy scalars/arrays to plain Python values."""
    if isinstance(obj, dict):
        return {k: _json_sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_sanitize(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def config_hash(cfg_or_dict) -> str:
    d = cfg_or_dict.to_dict() if isinstance(cfg_or_dict, ResolvedConfig) \
        else cfg_or_dict
    blob = json.dumps(_json_sanitize(d), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _maybe(v, auto=None):
    return auto if v == "auto" else v


def _known_cfg(cfg: ResolvedConfig, T: int, seed: int) -> KnownRunConfig:
    return KnownRunConfig(
        sys=cfg.sys, topology=cfg.topology, costs=cfg.costs,
        noise=cfg.noise, T=T, K=cfg.K, H=_maybe(cfg.H),
        eta=_maybe(cfg.eta), eta0=cfg.eta0, seed=seed, init=cfg.init,
        set_scale=_maybe(cfg.set_scale),
        independent_noise=cfg.independent_noise,
    )


def _unknown_cfg(cfg: ResolvedConfig, T: int, seed: int) -> UnknownRunConfig:
    return UnknownRunConfig(
        sys=cfg.sys, topology=cfg.topology, costs=cfg.costs,
        noise=cfg.noise, T=T, K=cfg.K, H=_maybe(cfg.H),
        eta=_maybe(cfg.eta), eta0=cfg.eta0, seed=seed, init=cfg.init,
        set_scale=_maybe(cfg.set_scale),
        independent_noise=cfg.independent_noise,
        T_collect=_maybe(cfg.T_collect), T_exchange=_maybe(cfg.T_exchange),
        q=_maybe(cfg.q), delta=cfg.delta, collect_scale=cfg.collect_scale,
    )


def _reseeded(cfg: ResolvedConfig, rep: int) -> tuple[ResolvedConfig, int]:
    """Repetition r runs with seed+r threaded through every seeded piece."""
    seed = cfg.seed + rep
    if rep == 0:
        return cfg, seed
    noise = dataclasses.replace(cfg.noise, seed=cfg.noise.seed + rep)
    costs = dataclasses.replace(cfg.costs, seed=cfg.costs.seed + rep)
    out = dataclasses.replace(cfg, noise=noise, costs=costs)
    return out, seed


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trace_csv(path, entries) -> str:
    """entries: iterable of (run_id, ExperimentTrace). Returns sha256 hex."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["run_id", "t", "agent", "phase", "cost", "state_norm",
                     "action_norm", "noise_err", "consensus_dist"])
        for run_id, trace in entries:
            for t in range(1, trace.T + 1):
                phase = PHASE_NAMES[int(trace.phase[t])]
                cons = _fmt(trace.consensus[t])
                for i in range(trace.m):
                    wr.writerow([
                        run_id, t, i, phase,
                        _fmt(trace.cost_row[t, i]),
                        _fmt(trace.x_norm[t, i]),
                        _fmt(trace.u_norm[t, i]),
                        _fmt(trace.noise_err[t, i]),
                        cons,
                    ])
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunArtifacts:
    out_dir: Path
    summary: dict
    exit_code: int = 0


def _trace_summary(run_id: str, trace: ExperimentTrace, seed: int) -> dict:
    return {
        "run_id": run_id, "seed": seed, "T": trace.T, "m": trace.m,
        "mode": trace.meta.get("mode"),
        "H": trace.meta.get("H"), "eta": trace.meta.get("eta"),
        "kappa": trace.meta.get("kappa"), "gamma": trace.meta.get("gamma"),
        "beta": trace.meta.get("beta"),
        "total_cost_per_agent": trace.cost_row[1:].sum(axis=0).tolist(),
        "final_consensus": float(trace.consensus[trace.T]),
        "max_state_norm": float(trace.x_norm.max()),
        "state_envelope": trace.meta.get("state_envelope"),
    }


def _offline_star(trace: ExperimentTrace, cfg: ResolvedConfig) -> tuple[float, dict]:
    """Offline-DFC comparator value on the trace's own noise realization."""
    sys = cfg.sys
    K = trace.meta["K"]
    cert = certify_strong_stability(K, sys)
    H = trace.meta["H"]
    set_ = constraint_set_for(cert, H,
                              None if cfg.set_scale == "auto" else cfg.set_scale)
    W = trace.shared_noise()
    res = offline_optimal_dfc(W, cfg.costs, set_, sys, K, trace.T)
    xs, us = rollout_dfc_policy(res.params, K, sys, W, trace.T)
    J_star = trajectory_network_cost(cfg.costs, xs, us, trace.T)
    info = {"converged": res.converged, "iterations": res.iterations,
            "pg_norm": res.pg_norm, "surrogate_objective": res.objective}
    return J_star, info


def _grid_star(trace: ExperimentTrace, cfg: ResolvedConfig) -> tuple[float, dict]:
    grid = linear_policy_grid(cfg.sys)
    W = trace.shared_noise()
    K_star, J_star = best_linear_in_hindsight(W, cfg.costs, grid, cfg.sys,
                                              trace.T)
    return J_star, {"grid_size": len(grid), "K_star": K_star.tolist()}


def run_experiment(cfg: ResolvedConfig, out_dir, *, quiet: bool = False) -> RunArtifacts:
    """Execute the resolved config and write all artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"schema_version": SCHEMA_VERSION, "runs": []}
    entries = []
    slope_rows = []
    report_dict = None
    # Concrete values the run materialized for "auto" fields; patched into
    # the echoed config so a replay resolves to exactly the same run.
    run_patch: dict = {}
    unknown_patch: dict = {}

    def note(msg: str):
        if not quiet:
            print(msg)

    if cfg.mode == "known":
        for rep in range(cfg.repetitions):
            rcfg, seed = _reseeded(cfg, rep)
            run_id = f"known-T{cfg.T}-s{seed}"
            note(f"run {run_id}")
            trace = run_known(_known_cfg(rcfg, cfg.T, seed))
            entries.append((run_id, trace))
            summary["runs"].append(_trace_summary(run_id, trace, seed))
            if not run_patch:
                run_patch = {k: trace.meta[k]
                             for k in ("eta", "H", "set_scale")}
    elif cfg.mode == "unknown":
        for rep in range(cfg.repetitions):
            rcfg, seed = _reseeded(cfg, rep)
            run_id = f"unknown-T{cfg.T}-s{seed}"
            note(f"run {run_id}")
            trace, report = run_unknown(_unknown_cfg(rcfg, cfg.T, seed))
            entries.append((run_id, trace))
            row = _trace_summary(run_id, trace, seed)
            row["eps_max"] = report.eps_max
            row["zeta"] = report.zeta
            row["T0"] = trace.meta["T0"]
            summary["runs"].append(row)
            if report_dict is None:
                report_dict = report.to_dict()
            if not run_patch:
                run_patch = {k: trace.meta[k]
                             for k in ("eta", "H", "set_scale")}
                unknown_patch = {k: trace.meta[k]
                                 for k in ("T_collect", "T_exchange", "q")}
    elif cfg.mode == "sysid_only":
        from .sysid import (consensus_exchange, default_collect_rounds,
                            default_exchange_rounds, explore_collect,
                            moment_estimates, build_report)
        from .stability import closed_loop, strong_controllability
        from .unknown import infer_controllability_index
        sys = cfg.sys
        K = cfg.K if cfg.K is not None else synthesize_stabilizer(sys)
        cert = certify_strong_stability(K, sys)
        P = metropolis_weights(cfg.topology)
        beta = mixing_factor(P)
        A_cl = closed_loop(K, sys)
        q = cfg.q if cfg.q != "auto" else \
            infer_controllability_index(A_cl, sys.B)
        T_collect = cfg.T_collect if cfg.T_collect != "auto" else \
            default_collect_rounds(cfg.T, cfg.collect_scale)
        T_exchange = cfg.T_exchange if cfg.T_exchange != "auto" else \
            default_exchange_rounds(cfg.T, beta, cfg.topology.m)
        unknown_patch = {"T_collect": T_collect, "T_exchange": T_exchange,
                         "q": q}
        for rep in range(cfg.repetitions):
            rcfg, seed = _reseeded(cfg, rep)
            run_id = f"sysid-Tc{T_collect}-s{seed}"
            note(f"run {run_id}")
            ptrace = explore_collect(sys, K, T_collect, cfg.topology.m,
                                     seed, rcfg.noise)
            stacks = consensus_exchange(moment_estimates(ptrace, q), P,
                                        T_exchange)
            ctrl = strong_controllability(A_cl, sys.B, q)
            report = build_report(
                stacks, K, T_collect=T_collect, T_exchange=T_exchange,
                delta=cfg.delta, kappa=cert.kappa, gamma=cert.gamma,
                W=cfg.noise.W, kappa_ctrl=ctrl.kappa_ctrl, sys_true=sys)
            row = {"run_id": run_id, "seed": seed, "T_collect": T_collect,
                   "T_exchange": T_exchange, "q": q,
                   "eps_max": report.eps_max, "eps_cross": report.eps_cross,
                   "eps_theory": report.eps_theory,
                   "max_state_norm": ptrace.meta["max_state_norm"]}
            summary["runs"].append(row)
            if report_dict is None:
                report_dict = report.to_dict()
    elif cfg.mode == "sweep":
        floored = False
        points = []
        for T in cfg.sweep_T_values:
            per_seed = []
            for rep in range(cfg.repetitions):
                rcfg, seed = _reseeded(cfg, rep)
                run_id = f"{cfg.sweep_mode}-T{T}-s{seed}"
                note(f"run {run_id}")
                if cfg.sweep_mode == "known":
                    trace = run_known(_known_cfg(rcfg, T, seed))
                else:
                    trace, _rep = run_unknown(_unknown_cfg(rcfg, T, seed))
                entries.append((run_id, trace))
                summary["runs"].append(_trace_summary(run_id, trace, seed))
                if cfg.comparator == "offline_dfc":
                    J_star, cmp_info = _offline_star(trace, rcfg)
                else:
                    J_star, cmp_info = _grid_star(trace, rcfg)
                regs = [individual_regret(trace, j, J_star)
                        for j in range(trace.m)]
                worst = max(regs)
                per_seed.append(worst)
                slope_rows.append({
                    "run_id": run_id, "T": T, "seed": seed,
                    "regret": worst, "J_star": J_star,
                    "comparator": cfg.comparator, **{
                        f"regret_agent_{j}": regs[j] for j in range(trace.m)
                    },
                })
            med = float(np.median(per_seed))
            if med <= 0.0:
                floored = True
                med = max(med, 1e-6)
            points.append((T, med))
        slope = intercept = r2 = None
        if len(points) >= 3:
            slope, intercept, r2 = regret_slope(points)
        summary["sweep"] = {
            "points": [[int(T), float(r)] for T, r in points],
            "slope": slope, "intercept": intercept, "r2": r2,
            "floored": floored, "comparator": cfg.comparator,
            "mode": cfg.sweep_mode,
        }
        if floored:
            summary["sweep"]["warning"] = \
                "non-positive regret floored at 1e-06 before fitting"
        with open(out / "slopes.csv", "w", newline="") as f:
            if slope_rows:
                cols = list(slope_rows[0].keys())
                wr = csv.DictWriter(f, fieldnames=cols)
                wr.writeheader()
                for row in slope_rows:
                    wr.writerow({k: (_fmt(v) if isinstance(v, float) else v)
                                 for k, v in row.items()})

    echo = cfg.to_dict()
    echo["run"].update(run_patch)
    if unknown_patch:
        echo.setdefault("unknown", {}).update(unknown_patch)
    summary["config"] = echo
    summary["config_hash"] = config_hash(echo)

    if entries:
        sha = write_trace_csv(out / "trace.csv", entries)
        summary["trace_sha256"] = sha
    if report_dict is not None:
        report_dict = _json_sanitize(report_dict)
        with open(out / "sysid_report.json", "w") as f:
            json.dump(report_dict, f, indent=1)
        summary["sysid_sha256"] = hashlib.sha256(
            (out / "sysid_report.json").read_bytes()).hexdigest()
        summary["sysid_report"] = {
            k: report_dict[k] for k in
            ("q", "T_collect", "T_exchange", "delta", "eps_max",
             "eps_cross", "zeta", "eps_theory")
        }
    summary = _json_sanitize(summary)
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=1)
    return RunArtifacts(out_dir=out, summary=summary, exit_code=0)


def run(config_path, out_dir=None, *, seed_override=None, mode_override=None,
        quiet=False) -> RunArtifacts:
    """Load, resolve, execute: the one-call entry used by the CLI."""
    raw = load_config(config_path)
    cfg = resolve_config(raw, seed_override=seed_override,
                         mode_override=mode_override)
    out = out_dir or cfg.out
    if out is None:
        raise ConfigError("out", "no output directory given (config or --out)")
    return run_experiment(cfg, out, quiet=quiet)


@dataclass
class ReplayResult:
    ok: bool
    out_dir: Path
    stored_sha: str | None
    new_sha: str | None
    message: str


def replay(summary_path, out_dir, *, quiet: bool = False) -> ReplayResult:
    """Re-run from a summary's echoed config; verify the trace checksum."""
    p = Path(summary_path)
    if not p.exists():
        raise ConfigError("summary", f"file not found: {p}")
    with open(p) as f:
        stored = json.load(f)
    if stored.get("schema_version") != SCHEMA_VERSION:
        raise VersionMismatch(
            f"artifact schema {stored.get('schema_version')} != "
            f"{SCHEMA_VERSION}"
        )
    cfg = resolve_config(stored["config"])
    arts = run_experiment(cfg, out_dir, quiet=quiet)
    stored_sha = stored.get("trace_sha256", stored.get("sysid_sha256"))
    new_sha = arts.summary.get("trace_sha256",
                               arts.summary.get("sysid_sha256"))
    if stored_sha is None and new_sha is None:
        return ReplayResult(True, arts.out_dir, None, None,
                            "no checksummed artifact in this mode")
    ok = stored_sha == new_sha
    msg = "byte-identical replay" if ok else \
        "trace checksum mismatch: artifacts differ from the stored run"
    return ReplayResult(ok, arts.out_dir, stored_sha, new_sha, msg)
