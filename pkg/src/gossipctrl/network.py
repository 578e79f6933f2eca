"""Gossip topologies and their Metropolis averaging matrices.

A topology is an undirected connected graph over m agents. Averaging uses
Metropolis weights, which are symmetric and doubly stochastic by
construction, so repeated application contracts toward the uniform average
at a rate set by the second-largest singular value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolated, NotConnected

_KINDS = ("complete", "ring", "path", "grid", "erdos_renyi")


@dataclass(frozen=True)
class Topology:
    """Undirected graph over agents 0..m-1; edges stored as sorted pairs."""

    kind: str
    m: int
    edges: tuple[tuple[int, int], ...]
    seed: int = 0
    p: float | None = None

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "m": self.m,
            "edges": [list(e) for e in self.edges],
            "seed": self.seed,
            "p": self.p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(
            kind=d["kind"],
            m=int(d["m"]),
            edges=tuple(tuple(e) for e in d["edges"]),
            seed=int(d.get("seed", 0)),
            p=d.get("p"),
        )


def _normalize(edges) -> tuple[tuple[int, int], ...]:
    uniq = {(min(a, b), max(a, b)) for a, b in edges if a != b}
    return tuple(sorted(uniq))


def _is_connected(m: int, edges) -> bool:
    # Union-find; the test suite cross-checks with an independent BFS.
    parent = list(range(m))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(m)}) == 1


def _grid_shape(m: int) -> tuple[int, int]:
    # Largest divisor of m not exceeding sqrt(m); primes degenerate to 1 x m.
    rows = 1
    r = 1
    while r * r <= m:
        if m % r == 0:
            rows = r
        r += 1
    return rows, m // rows


def build_topology(kind: str, m: int, seed: int = 0, p: float | None = None) -> Topology:
    """Construct a connected topology of the given kind.

    erdos_renyi draws edges i.i.d. with probability p (default 0.5) and
    resamples up to 1000 times for connectivity before raising NotConnected.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown topology kind {kind!r}; expected one of {_KINDS}")
    if m < 1:
        raise ValueError("m must be >= 1")

    if kind == "complete":
        edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    elif kind == "ring":
        if m == 1:
            edges = []
        elif m == 2:
            edges = [(0, 1)]
        else:
            edges = [(i, (i + 1) % m) for i in range(m)]
    elif kind == "path":
        edges = [(i, i + 1) for i in range(m - 1)]
    elif kind == "grid":
        rows, cols = _grid_shape(m)
        edges = []
        for r in range(rows):
            for c in range(cols):
                node = r * cols + c
                if c + 1 < cols:
                    edges.append((node, node + 1))
                if r + 1 < rows:
                    edges.append((node, node + cols))
    else:  # erdos_renyi
        if p is None:
            p = 0.5
        rng = np.random.default_rng(seed)
        edges = None
        for _ in range(1000):
            cand = [
                (i, j)
                for i in range(m)
                for j in range(i + 1, m)
                if rng.random() < p
            ]
            if _is_connected(m, cand):
                edges = cand
                break
        if edges is None:
            raise NotConnected(
                f"erdos_renyi(m={m}, p={p}) not connected after 1000 draws"
            )

    topo = Topology(kind=kind, m=m, edges=_normalize(edges), seed=seed,
                    p=p if kind == "erdos_renyi" else None)
    if not _is_connected(m, topo.edges):
        raise NotConnected(f"{kind}(m={m}) is not connected")
    return topo


def metropolis_weights(topology: Topology) -> np.ndarray:
    """Symmetric doubly stochastic averaging matrix.

    Off-diagonal weight on edge (i, j) is 1 / (1 + max(deg_i, deg_j));
    the diagonal absorbs the remainder so every row sums to one.
    """
    m = topology.m
    deg = topology.degrees()
    P = np.zeros((m, m))
    for a, b in topology.edges:
        w = 1.0 / (1.0 + max(deg[a], deg[b]))
        P[a, b] = w
        P[b, a] = w
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return P


def mixing_factor(P: np.ndarray) -> float:
    """Second-largest singular value of an averaging matrix (0 for m = 1)."""
    m = P.shape[0]
    if m == 1:
        return 0.0
    s = np.linalg.svd(P, compute_uv=False)
    return float(s[1])


@dataclass
class MixingReport:
    """Per-power deviation from uniform averaging against the certified decay."""

    k_max: int
    beta: float
    lhs_max: np.ndarray = field(repr=False)  # worst column deviation at each power
    rhs: np.ndarray = field(repr=False)      # sqrt(m) * beta^k

    @property
    def worst_ratio(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.rhs > 0, self.lhs_max / self.rhs, 0.0)
        return float(np.max(r)) if len(r) else 0.0


def verify_mixing_bound(P: np.ndarray, k_max: int = 50) -> MixingReport:
    """Check sum_j |[P^k]_{ji} - 1/m| <= sqrt(m) beta^k for k = 1..k_max.

    Raises BoundViolated at the first failing (k, i) pair.
    """
    m = P.shape[0]
    beta = mixing_factor(P)
    Pk = np.eye(m)
    lhs_max = np.zeros(k_max)
    rhs = np.zeros(k_max)
    for k in range(1, k_max + 1):
        Pk = Pk @ P
        dev = np.abs(Pk - 1.0 / m).sum(axis=0)  # dev[i] = sum_j |[P^k]_{ji} - 1/m|
        bound = np.sqrt(m) * beta**k
        lhs_max[k - 1] = dev.max()
        rhs[k - 1] = bound
        if dev.max() > bound + 1e-10:
            i = int(np.argmax(dev))
            raise BoundViolated(k, i, float(dev[i]), float(bound), what="mixing decay")
    return MixingReport(k_max=k_max, beta=beta, lhs_max=lhs_max, rhs=rhs)
