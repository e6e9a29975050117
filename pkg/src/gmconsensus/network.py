"""Sensor-network graphs and the synchronous consensus-round engine."""
from __future__ import annotations

import enum
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fusion
from .errors import ConfigError, DomainError, InfeasibleTopologyError
from .fusion import FusionWeights, TgmMessage, message_cost, metropolis_weights
from .gm import GaussianMixture, MergeScheme, RankRule, ReductionConfig, ThresholdRule, select_tgm
from .metrics import OspaConfig, ospa
from .phd import POS_IDX, GMPHDFilter, SensorKind, estimate


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Undirected sensor graph; node ``i`` has ``positions[i]`` and ``kinds[i]``."""

    positions: np.ndarray
    kinds: tuple[SensorKind, ...]
    adjacency: tuple[frozenset[int], ...]

    def __post_init__(self):
        pos = np.asarray(self.positions, float).reshape(-1, 2)
        n = pos.shape[0]
        if len(self.kinds) != n or len(self.adjacency) != n:
            raise DomainError("positions, kinds and adjacency must have one entry per node")
        adj = tuple(frozenset(int(b) for b in nb) for nb in self.adjacency)
        for a, nb in enumerate(adj):
            if a in nb:
                raise DomainError(f"self-loop at node {a}")
            for b in nb:
                if a not in adj[b]:
                    raise DomainError(f"edge {a}-{b} is not symmetric")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "kinds", tuple(SensorKind(k) for k in self.kinds))
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_edges(cls, n: int, edges, positions=None, kinds=None) -> "NetworkGraph":
        adj = [set() for _ in range(n)]
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        if positions is None:
            ang = 2 * np.pi * np.arange(n) / max(n, 1)
            positions = 500.0 * np.c_[np.cos(ang), np.sin(ang)]
        if kinds is None:
            kinds = default_kinds(n)
        return cls(np.asarray(positions, float), tuple(kinds), tuple(frozenset(s) for s in adj))

    @property
    def n(self) -> int:
        return len(self.kinds)

    def neighbors(self, a: int) -> frozenset[int]:
        return self.adjacency[a]

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a in range(self.n) for b in self.adjacency[a] if a < b)

    @property
    def diameter(self) -> int:
        return diameter(self)

    def is_connected(self) -> bool:
        return self.n == 0 or len(_bfs(self, 0)) == self.n


def default_kinds(n: int) -> tuple[SensorKind, ...]:
    """First ceil(n/2) nodes linear, the rest range-bearing."""
    k = math.ceil(n / 2)
    return tuple(SensorKind.LINEAR if i < k else SensorKind.RANGE_BEARING for i in range(n))


def _bfs(graph: NetworkGraph, src: int) -> dict[int, int]:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        a = queue.popleft()
        for b in graph.adjacency[a]:
            if b not in dist:
                dist[b] = dist[a] + 1
                queue.append(b)
    return dist


def diameter(graph: NetworkGraph) -> int:
    """Largest shortest-path hop count over all node pairs."""
    best = 0
    for a in range(graph.n):
        dist = _bfs(graph, a)
        if len(dist) != graph.n:
            raise DomainError("graph is disconnected")
        best = max(best, max(dist.values()))
    return best


def ring_network(n: int, radius: float = 500.0, kinds=None) -> NetworkGraph:
    """Nodes on a circle, each linked to its two ring neighbours."""
    edges = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)] if n == 2 else []
    ang = 2 * np.pi * np.arange(n) / n + np.pi / 4
    return NetworkGraph.from_edges(n, edges, radius * np.c_[np.cos(ang), np.sin(ang)], kinds)


def generate_network(n: int, comm_radius: float = 650.0, region=(-1000.0, 1000.0, -1000.0, 1000.0),
                     target_diameter: int | None = None, seed: int = 0,
                     max_attempts: int = 10_000) -> NetworkGraph:
    """Random geometric graph, resampled until connected (and of the requested diameter)."""
    if n < 1:
        raise DomainError("need at least one node")
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = region
    for _ in range(max_attempts):
        pos = np.c_[rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n)]
        d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
        adj = tuple(frozenset(int(j) for j in np.flatnonzero(d[i] <= comm_radius) if j != i) for i in range(n))
        graph = NetworkGraph(pos, default_kinds(n), adj)
        if not graph.is_connected():
            continue
        if target_diameter is not None and diameter(graph) != target_diameter:
            continue
        return graph
    raise InfeasibleTopologyError(
        f"no connected {n}-node graph (radius {comm_radius}, diameter {target_diameter}) "
        f"within {max_attempts} attempts"
    )


# ---------------------------------------------------------------------------
# consensus rounds


class Protocol(str, enum.Enum):
    NONE = "None"
    CCA = "CCA"
    CCF = "CCF"
    CGMM = "CGMM"
    CGMA = "CGMA"
    GCI = "GCI"


@dataclass(frozen=True)
class ConsensusParams:
    reduction: ReductionConfig = ReductionConfig()
    cgmm_scheme: MergeScheme = MergeScheme.OMR
    tgm_rule: RankRule | ThresholdRule = RankRule()
    cgma_gate: float = 5.0
    gci_w_c: float = 0.005
    gci_scheme: MergeScheme = MergeScheme.SMR
    gci_pair_gate_sq: float | None = 100.0
    gci_normalize: str = "geometric"

    def validate(self, protocol: Protocol) -> None:
        if protocol in (Protocol.CGMM, Protocol.CGMA):
            if not isinstance(self.tgm_rule, (RankRule, ThresholdRule)):
                raise ConfigError(f"{protocol.value} needs a rank or threshold T-GM rule")
        if protocol == Protocol.CGMA and not self.cgma_gate > 0:
            raise ConfigError("CGMA needs a positive gate")
        if protocol == Protocol.GCI and not self.gci_w_c >= 0:
            raise ConfigError("GCI needs a non-negative sharing threshold w_c")
        if self.gci_normalize not in ("geometric", "none"):
            raise ConfigError(f"unknown GCI normalisation {self.gci_normalize!r}")
        try:
            MergeScheme(self.cgmm_scheme)
            MergeScheme(self.gci_scheme)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class RoundReport:
    """Per-node snapshot after consensus iteration ``iteration`` of step ``step``."""

    step: int
    iteration: int
    ospa: tuple[float, ...]
    cardinality: tuple[float, ...]
    gm_size: tuple[int, ...]
    tuples: tuple[int, ...]
    beta: tuple[float, ...] = ()
    compute_seconds: tuple[float, ...] = field(default=(), compare=False)

    @property
    def network_ospa(self) -> float:
        return math.fsum(self.ospa) / len(self.ospa)

    @property
    def total_tuples(self) -> int:
        return sum(self.tuples)


def _snapshot(step, it, mixtures, truth_pos, ospa_cfg, tuples, beta, secs) -> RoundReport:
    n = len(mixtures)
    if truth_pos is None:
        ospas = (math.nan,) * n
    else:
        ospas = tuple(ospa(estimate(g).states[:, POS_IDX], truth_pos, ospa_cfg) for g in mixtures)
    return RoundReport(
        step, it, ospas,
        tuple(g.weight_sum for g in mixtures),
        tuple(len(g) for g in mixtures),
        tuple(int(x) for x in tuples),
        tuple(float(b) for b in beta),
        tuple(float(s) for s in secs),
    )


def run_consensus(graph: NetworkGraph, mixtures: Sequence[GaussianMixture], protocol: Protocol | str,
                  t_max: int, params: ConsensusParams = ConsensusParams(), *, step: int = 0,
                  truth_positions: np.ndarray | None = None, ospa_cfg: OspaConfig = OspaConfig(),
                  node_order: Sequence[int] | None = None, message_log: list | None = None,
                  ) -> tuple[list[GaussianMixture], list[RoundReport]]:
    """Run ``t_max`` synchronous consensus rounds.

    Every node builds its message from the state left by the previous round;
    all messages of a round are produced before any node fuses, so the node
    processing order (``node_order``) cannot change the outcome.  Sent
    messages are appended to ``message_log`` as ``(step, iteration, msg)``
    when a list is given.
    """
    try:
        protocol = Protocol(protocol)
    except ValueError as exc:
        raise ConfigError(f"unknown protocol {protocol!r}") from exc
    if t_max < 0:
        raise ConfigError("t_max must be >= 0")
    params.validate(protocol)
    n = graph.n
    if len(mixtures) != n:
        raise ConfigError("need one mixture per node")
    order = list(range(n)) if node_order is None else list(node_order)
    if sorted(order) != list(range(n)):
        raise ConfigError("node_order must be a permutation of the node ids")

    state = list(mixtures)
    nan = (math.nan,) * n
    reports = [_snapshot(step, 0, state, truth_positions, ospa_cfg, (0,) * n, nan, (0.0,) * n)]
    if t_max == 0 or protocol == Protocol.NONE:
        for it in range(1, t_max + 1):
            reports.append(_snapshot(step, it, state, truth_positions, ospa_cfg, (0,) * n, nan, (0.0,) * n))
        return state, reports

    weights = [metropolis_weights(graph, a) for a in range(n)]
    tables = [{a: (state[a].weight_sum, 0)} for a in range(n)]

    for it in range(1, t_max + 1):
        selections = [None] * n
        messages: list[TgmMessage] = []
        for a in range(n):
            gm = state[a]
            if protocol in (Protocol.CGMM, Protocol.CGMA):
                sel = select_tgm(gm, params.tgm_rule)
                selections[a] = sel
                msg = TgmMessage(a, sel.target_likely, gm.weight_sum)
            elif protocol == Protocol.GCI:
                msg = TgmMessage(a, fusion.gci_share(gm, params.gci_w_c))
            elif protocol == Protocol.CCA:
                msg = TgmMessage(a, GaussianMixture.empty(gm.dim), gm.weight_sum)
            else:
                msg = TgmMessage(a, GaussianMixture.empty(gm.dim), None, dict(tables[a]))
            messages.append(msg)
        if message_log is not None:
            message_log.extend((step, it, m) for m in messages)

        new_state = list(state)
        new_tables = list(tables)
        beta = [math.nan] * n
        secs = [0.0] * n
        for a in order:
            received = [messages[b] for b in sorted(graph.neighbors(a))]
            gm = state[a]
            t0 = time.perf_counter()
            if protocol == Protocol.CGMM:
                out = fusion.cgmm_step(gm, received, weights[a], params.reduction, params.cgmm_scheme)
                pooled = gm.weight_sum + math.fsum(m.components.weight_sum for m in received)
                beta[a] = out.cardinality / pooled if pooled > 0 else math.nan
                new_state[a] = out.mixture
            elif protocol == Protocol.CGMA:
                out = fusion.cgma_step(gm, selections[a].indices, received, weights[a], params.cgma_gate)
                new_state[a] = out.mixture
            elif protocol == Protocol.GCI:
                new_state[a] = fusion.gci_fuse(
                    gm, received, weights[a], params.gci_w_c, params.reduction,
                    params.gci_scheme, params.gci_pair_gate_sq, params.gci_normalize,
                )
            elif protocol == Protocol.CCA:
                W = fusion.cardinality_consensus_step(
                    gm.weight_sum, {m.origin: m.weight_sum_cardinality for m in received}, weights[a]
                )
                new_state[a] = fusion._rescale(gm, W)
            else:
                table = fusion.ccf_step(tables[a], [m.flood_table for m in received])
                new_tables[a] = table
                new_state[a] = fusion._rescale(gm, fusion.flood_mean(table))
            secs[a] = time.perf_counter() - t0
        state, tables = new_state, new_tables
        reports.append(_snapshot(step, it, state, truth_positions, ospa_cfg,
                                 [message_cost(m) for m in messages], beta, secs))
    return state, reports


# ---------------------------------------------------------------------------
# filtering + consensus over time


@dataclass
class TrackingRun:
    """Outcome of a distributed tracking run; ``reports[k]`` covers step ``k``."""

    reports: list[list[RoundReport]]
    filter_seconds: list[float]

    @property
    def final(self) -> list[RoundReport]:
        return [r[-1] for r in self.reports]


def run_tracking(graph: NetworkGraph, filters: Sequence[GMPHDFilter], scans: Sequence[Sequence[np.ndarray]],
                 protocol: Protocol | str, t_max: int, params: ConsensusParams = ConsensusParams(), *,
                 truth=None, ospa_cfg: OspaConfig = OspaConfig(), message_log: list | None = None) -> TrackingRun:
    """Filter every node's scans step by step, running consensus after each update.

    ``scans[a][k]`` is node ``a``'s measurement array at step ``k``; the fused
    posterior of step ``k`` is the prior of step ``k + 1``.
    """
    n = graph.n
    if len(filters) != n or len(scans) != n:
        raise ConfigError("need one filter and one scan list per node")
    steps = len(scans[0])
    dim = filters[0].motion.dim
    state = [GaussianMixture.empty(dim) for _ in range(n)]
    reports, filt_secs = [], []
    for k in range(steps):
        t0 = time.perf_counter()
        state = [filters[a].step(state[a], scans[a][k]) for a in range(n)]
        filt_secs.append(time.perf_counter() - t0)
        truth_pos = None if truth is None else truth.positions(k)
        state, rep = run_consensus(graph, state, protocol, t_max, params, step=k,
                                   truth_positions=truth_pos, ospa_cfg=ospa_cfg, message_log=message_log)
        reports.append(rep)
    return TrackingRun(reports, filt_secs)
