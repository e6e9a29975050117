"""Inter-sensor fusion rules and message accounting.

* Metropolis consensus weights and cardinality (weight-sum) averaging.
* CGMM: pool the received target-likely components, merge, rescale to the
  consensus cardinality.
* CGMA: Hungarian association of received components with the host's
  target-likely components, gated weighted averaging, rescale.
* GCI: geometric (exponential-product) fusion, the benchmark.
* Flooding of cardinality values (CCF).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError
from .gm import (
    GaussianMixture,
    MergeScheme,
    ReductionConfig,
    _merge_arrays,
    mahalanobis_matrix,
    reduce_mixture,
    repair_psd,
)

FORBIDDEN = 1e12


# ---------------------------------------------------------------------------
# weights and messages


@dataclass(frozen=True)
class FusionWeights:
    """Consensus weights ``omega_{l -> host}``; missing ids weigh zero."""

    host: int
    weights: Mapping[int, float]

    def __getitem__(self, sensor_id: int) -> float:
        return self.weights.get(sensor_id, 0.0)

    def __iter__(self):
        return iter(self.weights)

    @property
    def self_weight(self) -> float:
        return self[self.host]

    def total(self) -> float:
        return math.fsum(self.weights.values())


def metropolis_weights(graph, a: int) -> FusionWeights:
    """Metropolis weights at node ``a``: ``1 / (1 + max(|N_a|, |N_b|))`` per neighbour."""
    nbrs = graph.neighbors(a)
    deg_a = len(nbrs)
    w = {b: 1.0 / (1.0 + max(deg_a, len(graph.neighbors(b)))) for b in sorted(nbrs)}
    w[a] = 1.0 - math.fsum(w.values())
    return FusionWeights(a, dict(sorted(w.items())))


def metropolis_matrix(graph) -> np.ndarray:
    """Full consensus matrix with ``M[a, b] = omega_{b -> a}``."""
    n = graph.n
    M = np.zeros((n, n))
    for a in range(n):
        for b, w in metropolis_weights(graph, a).weights.items():
            M[a, b] = w
    return M


@dataclass(frozen=True, eq=False)
class TgmMessage:
    """What one node broadcasts in one round.

    ``weight_sum_cardinality`` is ``None`` when the protocol does not carry
    a cardinality scalar (GCI; CCF carries it inside ``flood_table``).
    """

    origin: int
    components: GaussianMixture
    weight_sum_cardinality: float | None = None
    flood_table: Mapping[int, tuple[float, int]] | None = None

    def __post_init__(self):
        if self.weight_sum_cardinality is not None and not self.weight_sum_cardinality >= 0:
            raise DomainError("cardinality must be >= 0")


def gc_tuples(dim: int) -> int:
    """Scalars needed for one component: weight, mean, upper-triangular covariance."""
    return 1 + dim + dim * (dim + 1) // 2


def message_cost(msg: TgmMessage) -> int:
    """Payload size in tuples (one tuple per transmitted scalar)."""
    cost = gc_tuples(msg.components.dim) * len(msg.components)
    if msg.weight_sum_cardinality is not None:
        cost += 1
    if msg.flood_table:
        cost += len(msg.flood_table)
    return cost


def pack_mixture(gm: GaussianMixture) -> bytes:
    """Canonical little-endian float64 dump: per component weight, mean, upper-triangular covariance."""
    iu = np.triu_indices(gm.dim)
    vals = []
    for w, m, P in zip(gm.weights, gm.means, gm.covs):
        vals.append(w)
        vals.extend(m.tolist())
        vals.extend(P[iu].tolist())
    return struct.pack(f"<{len(vals)}d", *vals)


def unpack_mixture(data: bytes, dim: int) -> GaussianMixture:
    k = gc_tuples(dim)
    nvals = len(data) // 8
    if nvals % k or len(data) % 8:
        raise DomainError("byte length is not a whole number of components")
    vals = np.array(struct.unpack(f"<{nvals}d", data)).reshape(-1, k)
    iu = np.triu_indices(dim)
    P = np.zeros((vals.shape[0], dim, dim))
    P[:, iu[0], iu[1]] = vals[:, 1 + dim:]
    P[:, iu[1], iu[0]] = vals[:, 1 + dim:]
    return GaussianMixture(vals[:, 0], vals[:, 1:1 + dim], P, dim)


# ---------------------------------------------------------------------------
# cardinality consensus


def cardinality_consensus_step(W_local: float, W_neighbors: Mapping[int, float], weights: FusionWeights) -> float:
    """One Metropolis averaging step of the local weight sum."""
    terms = [weights.self_weight * W_local]
    terms.extend(weights[l] * W for l, W in W_neighbors.items())
    return math.fsum(terms)


def _rescale(gm: GaussianMixture, target: float) -> GaussianMixture:
    total = gm.weight_sum
    if total <= 0:
        if target > 0:
            raise DegenerateInputError("cannot rescale a zero-weight mixture to a positive cardinality")
        return gm
    return gm.scaled(target / total)


class FusionOutput(NamedTuple):
    mixture: GaussianMixture
    cardinality: float


def _neighbor_cardinalities(received: Sequence[TgmMessage]) -> dict[int, float]:
    out = {}
    for msg in received:
        if msg.weight_sum_cardinality is None:
            raise DomainError(f"message from {msg.origin} carries no cardinality")
        out[msg.origin] = msg.weight_sum_cardinality
    return out


# ---------------------------------------------------------------------------
# CGMM


def pool_tgms(local: GaussianMixture, received: Sequence[TgmMessage]) -> GaussianMixture:
    """Local mixture followed by all received components, unscaled."""
    ordered = sorted(received, key=lambda m: m.origin)
    return GaussianMixture.concat([local] + [m.components for m in ordered], local.dim)


def cgmm_step(local: GaussianMixture, received: Sequence[TgmMessage], weights: FusionWeights,
              cfg: ReductionConfig = ReductionConfig(), scheme: MergeScheme | str = MergeScheme.OMR) -> FusionOutput:
    """Conservative GM merging.

    Received components are pooled with uniform fusing weights, the pool is
    reduced, and every weight is rescaled so the mixture sums to the
    Metropolis-averaged cardinality.
    """
    pooled = pool_tgms(local, received)
    merged = reduce_mixture(pooled, cfg, scheme)
    W_new = cardinality_consensus_step(local.weight_sum, _neighbor_cardinalities(received), weights)
    return FusionOutput(_rescale(merged, W_new), W_new)


# ---------------------------------------------------------------------------
# Hungarian assignment


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    unassigned_rows: tuple[int, ...]
    unassigned_cols: tuple[int, ...]
    cost: float = 0.0


def _lsa_rows_le_cols(C: np.ndarray) -> np.ndarray:
    """Shortest augmenting path with potentials; needs ``n <= m``. Returns column per row."""
    n, m = C.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)      # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = C[i0 - 1] - u[i0] - v[1:]
            cols = np.flatnonzero(free[1:]) + 1
            better = cur[cols - 1] < minv[cols]
            minv[cols[better]] = cur[cols - 1][better]
            way[cols[better]] = j0
            j1 = cols[np.argmin(minv[cols])]
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian(cost) -> Assignment:
    """Minimum-cost one-to-one-or-zero assignment of a rectangular cost matrix.

    Every element of the smaller side is assigned.  Entries ``>= FORBIDDEN``
    mark forbidden pairs; a pair that can only be served at such a cost is
    reported as unassigned.  Indices are 0-based.
    """
    C = np.asarray(cost, dtype=float)
    if C.size == 0:
        C = C.reshape(C.shape if C.ndim == 2 else (0, 0))
    C = np.atleast_2d(C)
    n, m = C.shape
    if n == 0 or m == 0:
        return Assignment((), tuple(range(n)), tuple(range(m)), 0.0)
    if not np.all(np.isfinite(C)):
        raise DomainError("cost matrix entries must be finite")
    forbidden = C >= FORBIDDEN
    work = C.copy()
    if forbidden.any():
        finite = C[~forbidden]
        big = 1.0 + 2.0 * min(n, m) * (np.abs(finite).max() if finite.size else 1.0)
        work[forbidden] = big
    if n <= m:
        cols = _lsa_rows_le_cols(work)
        pairs = [(i, int(cols[i])) for i in range(n)]
    else:
        rows = _lsa_rows_le_cols(work.T)
        pairs = sorted((int(rows[j]), j) for j in range(m))
    pairs = [(i, j) for i, j in pairs if not forbidden[i, j]]
    used_r = {i for i, _ in pairs}
    used_c = {j for _, j in pairs}
    total = math.fsum(C[i, j] for i, j in pairs)
    return Assignment(
        tuple(pairs),
        tuple(i for i in range(n) if i not in used_r),
        tuple(j for j in range(m) if j not in used_c),
        total,
    )


# ---------------------------------------------------------------------------
# CGMA


def cgma_fuse(local_full: GaussianMixture, local_tgm_indices: Sequence[int], received: Sequence[TgmMessage],
              weights: FusionWeights, gate: float) -> GaussianMixture:
    """Gated pairwise averaging before the cardinality rescale.

    Messages are associated in ascending origin order, each against the
    host's target-likely components.  Each group is fused once: weight is
    the omega-weighted mean weight, mean is the omega*w weighted mean, and
    covariance is the minimum-trace adjusted covariance.
    """
    if not gate > 0:
        raise DomainError("CGMA gate must be positive")
    host_idx = np.asarray(sorted(int(i) for i in local_tgm_indices), dtype=int)
    if host_idx.size == 0 or not received:
        return local_full
    host = local_full.take(host_idx)
    # group[k] collects (omega, w, m, P) for host component host_idx[k]
    groups = [[(weights.self_weight, host.weights[k], host.means[k], host.covs[k])] for k in range(len(host))]
    gate_sq = gate**2
    for msg in sorted(received, key=lambda m: m.origin):
        rx = msg.components
        if len(rx) == 0:
            continue
        cost = mahalanobis_matrix(host, rx)
        for r, c in hungarian(cost).pairs:
            if cost[r, c] <= gate_sq:
                groups[r].append((weights[msg.origin], rx.weights[c], rx.means[c], rx.covs[c]))

    w_out = local_full.weights.copy()
    m_out = local_full.means.copy()
    P_out = local_full.covs.copy()
    for k, grp in enumerate(groups):
        if len(grp) == 1:
            continue
        om = np.array([g[0] for g in grp])
        w = np.array([g[1] for g in grp])
        m = np.stack([g[2] for g in grp])
        P = np.stack([g[3] for g in grp])
        if om.sum() <= 0:
            continue
        fused_w = float(om @ w / om.sum())
        if om @ w > 0:
            _, mean, cov = _merge_arrays(om * w, m, P, MergeScheme.OMR)
        else:
            mean, cov = host.means[k], host.covs[k]
        i = host_idx[k]
        w_out[i], m_out[i], P_out[i] = fused_w, mean, cov
    return GaussianMixture._raw(w_out, m_out, P_out, local_full.dim)


def cgma_step(local_full: GaussianMixture, local_tgm_indices: Sequence[int], received: Sequence[TgmMessage],
              weights: FusionWeights, gate: float = 5.0) -> FusionOutput:
    """Conservative GM averaging followed by the cardinality rescale.

    The output always has as many components as ``local_full``.
    """
    fused = cgma_fuse(local_full, local_tgm_indices, received, weights, gate)
    W_new = cardinality_consensus_step(local_full.weight_sum, _neighbor_cardinalities(received), weights)
    return FusionOutput(_rescale(fused, W_new), W_new)


# ---------------------------------------------------------------------------
# GCI


def gm_power(gm: GaussianMixture, omega: float) -> GaussianMixture:
    """Componentwise fractional power ``(w N(x; m, P))**omega``.

    Each component is raised independently, which is exact for a single
    Gaussian and a good approximation for well separated components.
    """
    if not 0 < omega <= 1:
        raise DomainError("GCI exponent must lie in (0, 1]")
    if omega == 1.0 or len(gm) == 0:
        return gm
    d = gm.dim
    _, logdet = np.linalg.slogdet(gm.covs)
    with np.errstate(divide="ignore"):
        logw = (
            omega * np.log(gm.weights)
            + 0.5 * d * (1 - omega) * math.log(2 * math.pi)
            + 0.5 * (1 - omega) * logdet
            - 0.5 * d * math.log(omega)
        )
    return GaussianMixture._raw(np.exp(logw), gm.means, gm.covs / omega, d)


def gm_product(a: GaussianMixture, b: GaussianMixture, pair_gate_sq: float | None = None) -> GaussianMixture:
    """Closed-form product of two Gaussian mixtures (all component pairs).

    ``pair_gate_sq`` drops pairs whose squared distance under ``P_i + P_j``
    exceeds it; their weight carries a factor below ``exp(-pair_gate_sq / 2)``.
    """
    d = a.dim
    if len(a) == 0 or len(b) == 0:
        return GaussianMixture.empty(d)
    ia, ib = np.meshgrid(np.arange(len(a)), np.arange(len(b)), indexing="ij")
    ia, ib = ia.reshape(-1), ib.reshape(-1)
    Pa, Pb = a.covs[ia], b.covs[ib]
    S = Pa + Pb
    diff = b.means[ib] - a.means[ia]
    L = np.linalg.cholesky(S)
    y = np.linalg.solve(L, diff[..., None])[..., 0]
    maha = np.einsum("ni,ni->n", y, y)
    if pair_gate_sq is not None:
        keep = maha <= pair_gate_sq
        ia, ib, Pa, Pb, S, diff, L, maha = ia[keep], ib[keep], Pa[keep], Pb[keep], S[keep], diff[keep], L[keep], maha[keep]
        if ia.size == 0:
            return GaussianMixture.empty(d)
    logdet = 2 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    with np.errstate(divide="ignore"):
        logw = (
            np.log(a.weights[ia]) + np.log(b.weights[ib])
            - 0.5 * maha - 0.5 * logdet - 0.5 * d * math.log(2 * math.pi)
        )
    gain = Pa @ np.linalg.inv(S)               # P_a (P_a + P_b)^-1
    mean = a.means[ia] + np.einsum("nij,nj->ni", gain, diff)
    cov = repair_psd(gain @ Pb)
    return GaussianMixture._raw(np.exp(logw), mean, cov, d)


def gci_share(gm: GaussianMixture, w_c: float) -> GaussianMixture:
    """Components a node disseminates under GCI: weight strictly above ``w_c``."""
    return gm.take(gm.weights > w_c)


def gci_fuse(local: GaussianMixture, received: Sequence[TgmMessage], weights: FusionWeights,
             w_c: float = 0.005, cfg: ReductionConfig | None = None,
             scheme: MergeScheme | str = MergeScheme.SMR, pair_gate_sq: float | None = 100.0,
             normalize: str = "geometric") -> GaussianMixture:
    """Generalised covariance intersection of the local and received mixtures.

    Sources are folded in ascending sensor-id order: each shared mixture is
    raised to its exponent and multiplied into the running product.

    ``normalize`` fixes the normalisation constant of the product:
    ``"geometric"`` rescales the fused intensity so its weight sum is the
    omega-weighted geometric mean of the sources' weight sums;
    ``"none"`` keeps the raw product (the exact Poisson-process result,
    whose mass shrinks whenever the sources disagree).  With ``cfg`` given
    the result is reduced afterwards.
    """
    if normalize not in ("geometric", "none"):
        raise DomainError(f"unknown GCI normalisation {normalize!r}")
    if not received:
        return local
    sources = {weights.host: gci_share(local, w_c)}
    for msg in received:
        sources[msg.origin] = gci_share(msg.components, w_c)
    total = math.fsum(weights[s] for s in sources)
    if abs(total - 1.0) > 1e-9:
        raise DomainError(f"GCI exponents must sum to 1, got {total}")
    fused = None
    for sid in sorted(sources):
        om = weights[sid]
        if om == 0:
            continue
        powered = gm_power(sources[sid], om)
        fused = powered if fused is None else gm_product(fused, powered, pair_gate_sq)
    if fused is None:
        fused = GaussianMixture.empty(local.dim)
    if normalize == "geometric" and fused.weight_sum > 0:
        sums = {sid: src.weight_sum for sid, src in sources.items() if weights[sid] > 0}
        if min(sums.values()) <= 0:
            fused = GaussianMixture.empty(local.dim)
        else:
            log_card = math.fsum(weights[sid] * math.log(W) for sid, W in sums.items())
            fused = fused.scaled(math.exp(log_card) / fused.weight_sum)
    if cfg is not None:
        fused = reduce_mixture(fused, cfg, scheme)
    return fused


# ---------------------------------------------------------------------------
# CCF


FloodTable = dict  # origin id -> (W value, hop age)


def ccf_step(flood_table: Mapping[int, tuple[float, int]],
             received_tables: Sequence[Mapping[int, tuple[float, int]]]) -> dict[int, tuple[float, int]]:
    """Union of the local and received flood tables, one entry per origin.

    Received entries age by one hop; the youngest entry per origin wins.
    """
    out = dict(flood_table)
    for table in received_tables:
        for origin, (W, age) in table.items():
            cand = (W, age + 1)
            if origin not in out or cand[1] < out[origin][1]:
                out[origin] = cand
    return dict(sorted(out.items()))


def flood_mean(table: Mapping[int, tuple[float, int]]) -> float:
    return math.fsum(W for W, _ in table.values()) / len(table)
