"""Influence networks: construction, validation, synthesis and file I/O.

An edge ``(w, v)`` means agent ``v`` influences agent ``w`` (``w`` listens
to ``v``), so row ``w`` of the influence matrix holds the weights ``w``
assigns to its sources.
"""
from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, NetworkError

ROW_SUM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class InfluenceNetwork:
    """Immutable container for the social influence structure.

    Attributes
    ----------
    adjacency : frozenset of (listener, source) index pairs
    influence_matrix : (n, n) row-stochastic array ``P``
    susceptibility : (n,) diagonal of ``Lambda``
    inherent_bias : (n,) persistent bias ``u_o``
    persistence_weight : (n,) mixing weight ``rho`` between memory and
        instantaneous incentives
    credibility : optional (n,) credibilities the matrix was built from
    """

    adjacency: frozenset
    influence_matrix: np.ndarray
    susceptibility: np.ndarray
    inherent_bias: np.ndarray
    persistence_weight: np.ndarray
    credibility: np.ndarray | None = None

    def __post_init__(self):
        for name in ("influence_matrix", "susceptibility", "inherent_bias",
                     "persistence_weight", "credibility"):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.array(value, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "adjacency", frozenset(
            (int(w), int(v)) for w, v in self.adjacency))
        n = self.influence_matrix.shape[0]
        if self.influence_matrix.shape != (n, n):
            raise NetworkError("influence matrix must be square")
        for name in ("susceptibility", "inherent_bias", "persistence_weight"):
            if getattr(self, name).shape != (n,):
                raise NetworkError(f"{name} must have shape ({n},)")

    @property
    def n_agents(self) -> int:
        return self.influence_matrix.shape[0]

    @property
    def lam(self) -> np.ndarray:
        """Susceptibility matrix ``Lambda`` as a dense diagonal array."""
        return np.diag(self.susceptibility)

    @property
    def lambda_p(self) -> np.ndarray:
        """Peer-influence operator ``Lambda @ P``."""
        return self.susceptibility[:, None] * self.influence_matrix

    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self.n_agents, self.n_agents), dtype=bool)
        for w, v in self.adjacency:
            A[w, v] = True
        return A

    def with_persistence(self, rho) -> "InfluenceNetwork":
        """Copy with ``rho`` replaced (scalar broadcast or per-agent)."""
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (self.n_agents,))
        return replace(self, persistence_weight=rho.copy())


@dataclass(frozen=True, eq=False)
class CredibilityProfile:
    reliability: np.ndarray
    prejudice_penalty_count: np.ndarray
    credibility: np.ndarray

    def __post_init__(self):
        if np.any(self.credibility <= 0):
            raise NetworkError("credibility must be strictly positive")


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "network valid"
        return "network invalid:\n" + "\n".join(f"  - {v}" for v in self.violations)


def _edge_matrix(adjacency: Iterable[tuple[int, int]], n: int) -> np.ndarray:
    A = np.zeros((n, n), dtype=bool)
    for w, v in adjacency:
        if not (0 <= w < n and 0 <= v < n):
            raise NetworkError(f"edge ({w}, {v}) references an agent outside 0..{n - 1}")
        A[w, v] = True
    return A


def build_influence_matrix(adjacency: Iterable[tuple[int, int]], credibility) -> np.ndarray:
    """Mask credibility columns by the adjacency pattern and row-normalize.

    Entry ``(w, v)`` is ``c_v / sum_{u in N(w)} c_u`` when ``w`` listens to
    ``v`` and zero otherwise.
    """
    c = np.asarray(credibility, dtype=float)
    if c.ndim != 1:
        raise NetworkError("credibility must be a vector")
    if np.any(~np.isfinite(c)) or np.any(c <= 0):
        bad = np.flatnonzero(~(c > 0)).tolist()
        raise NetworkError(f"credibility must be strictly positive (agents {bad})")
    n = c.shape[0]
    mask = _edge_matrix(adjacency, n)
    W = np.where(mask, c[None, :], 0.0)
    totals = W.sum(axis=1)
    isolated = np.flatnonzero(totals == 0)
    if isolated.size:
        raise NetworkError(
            f"agent {int(isolated[0])} listens to nobody (isolated listeners: {isolated.tolist()})")
    return W / totals[:, None]


def _reaches_receptive(adjacency: np.ndarray, susceptibility: np.ndarray) -> np.ndarray:
    # reverse BFS from {v : lambda_v < 1}
    n = adjacency.shape[0]
    ok = susceptibility < 1.0
    queue = deque(np.flatnonzero(ok).tolist())
    listeners = [np.flatnonzero(adjacency[:, v]) for v in range(n)]
    while queue:
        v = queue.popleft()
        for w in listeners[v]:
            if not ok[w]:
                ok[w] = True
                queue.append(w)
    return ok


def validate_network(net: InfluenceNetwork) -> ValidationReport:
    """Check every structural invariant and report all violations."""
    report = ValidationReport()
    P = np.asarray(net.influence_matrix)
    n = net.n_agents
    try:
        A = _edge_matrix(net.adjacency, n)
    except NetworkError as exc:
        report.violations.append(str(exc))
        return report

    if np.any(~np.isfinite(P)) or P.min(initial=0.0) < 0:
        report.violations.append("row-stochasticity: influence matrix has negative or non-finite entries")
    row_err = np.abs(P.sum(axis=1) - 1.0)
    bad_rows = np.flatnonzero(row_err > ROW_SUM_TOL)
    if bad_rows.size:
        report.violations.append(
            f"row-stochasticity: rows {bad_rows.tolist()} do not sum to 1 "
            f"(max deviation {row_err.max():.3g})")
    off_edge = np.argwhere((P > 0) & ~A)
    if off_edge.size:
        report.violations.append(
            f"support: positive weights outside the edge set at {[tuple(e) for e in off_edge[:5].tolist()]}")
    missing = np.argwhere(A & ~(P > 0))
    if missing.size:
        report.violations.append(
            f"support: edges with zero weight at {[tuple(e) for e in missing[:5].tolist()]}")

    for name in ("susceptibility", "inherent_bias", "persistence_weight"):
        values = getattr(net, name)
        out = np.flatnonzero((values < 0) | (values > 1) | ~np.isfinite(values))
        if out.size:
            report.violations.append(f"range: {name} outside [0, 1] for agents {out.tolist()}")

    reach = _reaches_receptive(A, np.asarray(net.susceptibility))
    if not reach.all():
        report.violations.append(
            "reachability: no path to an agent with susceptibility < 1 from agents "
            f"{np.flatnonzero(~reach).tolist()}")
    return report


def spectral_radius(M, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0,
                    block: int = 4) -> float:
    """Largest eigenvalue magnitude of ``M`` by block power iteration.

    A small orthonormal block is pushed through ``M`` and re-orthonormalized
    each sweep; the Ritz values of the projected block give the estimate.
    The block (rather than a single vector) lets dominant pairs such as
    ``+-r`` or complex conjugates converge instead of oscillating.

    Raises
    ------
    ConvergenceError
        If the estimate has not settled to ``tol`` after ``max_iter`` sweeps.
        The exception carries the last estimate.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral_radius expects a square matrix")
    n = M.shape[0]
    if n == 0 or not np.any(M):
        return 0.0
    p = min(n, block)
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    previous = np.inf
    settled = 0
    estimate = 0.0
    for _ in range(max_iter):
        Z = M @ Q
        ritz = np.linalg.eigvals(Q.T @ Z)
        estimate = float(np.max(np.abs(ritz)))
        if abs(estimate - previous) <= tol * max(1.0, estimate):
            settled += 1
            if settled >= 3:
                return estimate
        else:
            settled = 0
        previous = estimate
        if not np.any(Z):
            return 0.0
        Q, _ = np.linalg.qr(Z)
    raise ConvergenceError(
        f"spectral radius did not converge in {max_iter} iterations", last_iterate=estimate)


@dataclass(frozen=True)
class GeneratorParams:
    """Parameters of the synthetic survey-like network generator.

    Agents are dropped uniformly in the unit square and linked (both ways)
    when closer than the radius giving edge probability ``density``.
    """

    n_agents: int = 112
    density: float = 0.08
    education_reliability: Mapping[str, float] = field(
        default_factory=lambda: {"primary": 0.4, "secondary": 0.7, "tertiary": 1.0})
    education_probabilities: Sequence[float] = (0.3, 0.5, 0.2)
    n_prejudice_groups: int = 3
    penalty_probability: float = 0.3
    penalty_factor: float = 0.5
    reluctance_beta: tuple[float, float] = (3.0, 2.0)
    lambda_range: tuple[float, float] = (0.3, 0.9)
    rho: float = 0.7
    self_loops: bool = False

    def check(self):
        if self.n_agents < 1:
            raise NetworkError("n_agents must be positive")
        if not 0 < self.density <= 1:
            raise NetworkError("density must lie in (0, 1]")
        probs = np.asarray(self.education_probabilities, dtype=float)
        if probs.shape != (len(self.education_reliability),) or np.any(probs < 0) \
                or abs(probs.sum() - 1) > 1e-9:
            raise NetworkError("education_probabilities must be a distribution over the levels")
        if any(not 0 < z <= 1 for z in self.education_reliability.values()):
            raise NetworkError("reliability values must lie in (0, 1]")
        if not 0 < self.penalty_factor < 1:
            raise NetworkError("penalty_factor must lie in (0, 1)")
        lo, hi = self.lambda_range
        if not 0 <= lo <= hi <= 1:
            raise NetworkError("lambda_range must satisfy 0 <= lo <= hi <= 1")
        if not 0 <= self.rho <= 1:
            raise NetworkError("rho must lie in [0, 1]")


def credibility_from_profile(reliability, penalty_count, penalty_factor: float) -> np.ndarray:
    return np.asarray(reliability, dtype=float) * penalty_factor ** np.asarray(penalty_count)


def generate_synthetic_network(params: GeneratorParams, seed: int
                               ) -> tuple[InfluenceNetwork, CredibilityProfile]:
    """Synthesize a network mimicking a survey-derived proximity graph.

    Pure function of ``(params, seed)``.
    """
    params.check()
    rng = np.random.default_rng(seed)
    n = params.n_agents

    pos = rng.random((n, 2))
    radius = np.sqrt(params.density / np.pi)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    A = dist <= radius
    np.fill_diagonal(A, params.self_loops)
    isolated = np.flatnonzero(~A.any(axis=1))
    if isolated.size:
        raise NetworkError(
            f"density {params.density} leaves agents isolated: {isolated.tolist()}")

    zeta_levels = np.array(list(params.education_reliability.values()), dtype=float)
    level = rng.choice(len(zeta_levels), size=n, p=np.asarray(params.education_probabilities))
    reliability = zeta_levels[level]
    penalties = rng.binomial(params.n_prejudice_groups, params.penalty_probability, size=n)
    cred = credibility_from_profile(reliability, penalties, params.penalty_factor)

    reluctance = rng.beta(*params.reluctance_beta, size=n)
    lo, hi = params.lambda_range
    lam = rng.uniform(lo, hi, size=n)

    edges = frozenset(map(tuple, np.argwhere(A).tolist()))
    P = build_influence_matrix(edges, cred)
    net = InfluenceNetwork(
        adjacency=edges,
        influence_matrix=P,
        susceptibility=lam,
        inherent_bias=1.0 - reluctance,
        persistence_weight=np.full(n, params.rho),
        credibility=cred,
    )
    report = validate_network(net)
    if not report.ok:
        raise NetworkError(str(report))
    profile = CredibilityProfile(reliability=reliability, prejudice_penalty_count=penalties,
                                 credibility=cred)
    return net, profile


# -- file format -------------------------------------------------------------

NODE_HEADER = "# nodes"
EDGE_HEADER = "# edges"
NODE_COLUMNS = ["agent_id", "lambda", "u_o", "rho", "credibility"]
EDGE_COLUMNS = ["listener_id", "source_id", "weight"]


def write_network(net: InfluenceNetwork, path) -> None:
    """Write the two-section comma-separated network file.

    Floats are written with ``repr`` so reading back is exact.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    buf.write(NODE_HEADER + "\n")
    writer.writerow(NODE_COLUMNS)
    cred = net.credibility
    for v in range(net.n_agents):
        writer.writerow([v, repr(float(net.susceptibility[v])), repr(float(net.inherent_bias[v])),
                         repr(float(net.persistence_weight[v])),
                         "" if cred is None else repr(float(cred[v]))])
    buf.write(EDGE_HEADER + "\n")
    writer.writerow(EDGE_COLUMNS)
    for w, v in sorted(net.adjacency):
        writer.writerow([w, v, repr(float(net.influence_matrix[w, v]))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_network(path) -> InfluenceNetwork:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    try:
        i_nodes = lines.index(NODE_HEADER)
        i_edges = lines.index(EDGE_HEADER)
    except ValueError:
        raise NetworkError(f"{path}: missing '{NODE_HEADER}' or '{EDGE_HEADER}' section") from None
    node_rows = list(csv.DictReader(lines[i_nodes + 1:i_edges]))
    edge_rows = list(csv.DictReader(lines[i_edges + 1:]))
    if [r["agent_id"] for r in node_rows] != [str(i) for i in range(len(node_rows))]:
        raise NetworkError(f"{path}: agent ids must be 0..n-1 in order")
    n = len(node_rows)
    lam = np.array([float(r["lambda"]) for r in node_rows])
    u_o = np.array([float(r["u_o"]) for r in node_rows])
    rho = np.array([float(r["rho"]) for r in node_rows])
    cred = None
    if node_rows and all(r["credibility"] for r in node_rows):
        cred = np.array([float(r["credibility"]) for r in node_rows])
    edges = frozenset((int(r["listener_id"]), int(r["source_id"])) for r in edge_rows)
    if edge_rows and all(r.get("weight") for r in edge_rows):
        P = np.zeros((n, n))
        for r in edge_rows:
            P[int(r["listener_id"]), int(r["source_id"])] = float(r["weight"])
    elif cred is not None:
        P = build_influence_matrix(edges, cred)
    else:
        raise NetworkError(f"{path}: need either edge weights or node credibilities")
    return InfluenceNetwork(adjacency=edges, influence_matrix=P, susceptibility=lam,
                            inherent_bias=u_o, persistence_weight=rho, credibility=cred)
