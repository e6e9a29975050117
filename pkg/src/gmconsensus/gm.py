"""Gaussian component / Gaussian mixture algebra.

A PHD intensity is carried as a :class:`GaussianMixture`: stacked weights,
means and covariances.  Everything here is a pure function of immutable
values.  Merging comes in two flavours:

* ``SMR`` -- moment matching: the merged covariance is the weight-averaged
  spread-adjusted covariance.
* ``OMR`` -- conservative trace minimisation: the merged covariance is the
  single spread-adjusted covariance with the smallest trace.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateInputError, DomainError, NumericalDegeneracyError

SYM_ATOL = 1e-9
PSD_RTOL = 1e-9


class MergeScheme(str, enum.Enum):
    SMR = "SMR"
    OMR = "OMR"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def repair_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrise and clamp round-off negative eigenvalues.

    Works on a single ``(d, d)`` matrix or a stack ``(..., d, d)``.
    Eigenvalues below ``-1e-9 * lambda_max`` are not round-off and raise
    :class:`NumericalDegeneracyError`.
    """
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    if sym.shape[-1] == 0:
        return sym
    eig = np.linalg.eigvalsh(sym)
    lam_max = np.maximum(eig[..., -1], np.finfo(float).tiny)
    lam_min = eig[..., 0]
    if np.any(lam_min < -PSD_RTOL * lam_max):
        raise NumericalDegeneracyError(
            f"covariance not PSD: min eigenvalue {lam_min.min():.3e}"
        )
    bad = lam_min < 0
    if np.any(bad):
        if sym.ndim == 2:
            val, vec = np.linalg.eigh(sym)
            sym = (vec * np.clip(val, 0.0, None)) @ vec.T
        else:
            val, vec = np.linalg.eigh(sym[bad])
            sym = sym.copy()
            sym[bad] = np.einsum("...ij,...j,...kj->...ik", vec, np.clip(val, 0.0, None), vec)
        sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
    return sym


def _check_cov(cov: np.ndarray) -> None:
    if not np.allclose(cov, np.swapaxes(cov, -1, -2), rtol=0.0, atol=SYM_ATOL):
        raise DomainError("covariance is not symmetric")
    if cov.shape[-1] == 0:
        return
    eig = np.linalg.eigvalsh(cov)
    lam_max = np.maximum(eig[..., -1], 0.0)
    if np.any(eig[..., 0] < -PSD_RTOL * lam_max - 1e-300):
        raise DomainError("covariance is not positive semi-definite")


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """One weighted Gaussian ``w * N(x; mean, cov)``."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        w = float(self.weight)
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(mean.size, mean.size)
        if not (w >= 0.0) or not math.isfinite(w):
            raise DomainError(f"component weight must be finite and >= 0, got {w}")
        _check_cov(cov)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "cov", _readonly(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def __repr__(self):
        return f"GaussianComponent(weight={self.weight:.6g}, mean={self.mean.tolist()})"


class GaussianMixture:
    """Ordered, immutable Gaussian mixture stored as stacked arrays.

    ``weights`` has shape ``(n,)``, ``means`` ``(n, d)`` and ``covs``
    ``(n, d, d)``.  Iterating yields :class:`GaussianComponent` objects.
    """

    __slots__ = ("weights", "means", "covs", "dim", "_weight_sum")

    def __init__(self, weights, means, covs, dim: int | None = None, *, validate: bool = True):
        w = np.array(weights, dtype=float).reshape(-1)
        n = w.size
        if dim is None:
            m_arr = np.asarray(means, dtype=float)
            if n == 0 and m_arr.ndim < 2:
                raise DomainError("dimension of an empty mixture must be given")
            dim = m_arr.shape[-1]
        m = np.array(means, dtype=float).reshape(n, dim)
        P = np.array(covs, dtype=float).reshape(n, dim, dim)
        if dim < 1:
            raise DomainError("mixture dimension must be positive")
        if validate:
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise DomainError("component weights must be finite and >= 0")
            if n:
                _check_cov(P)
        self.weights = _readonly(w)
        self.means = _readonly(m)
        self.covs = _readonly(P)
        self.dim = int(dim)
        self._weight_sum = math.fsum(w.tolist())

    # construction helpers -------------------------------------------------
    @classmethod
    def empty(cls, dim: int) -> "GaussianMixture":
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)), dim, validate=False)

    @classmethod
    def from_components(cls, components: Iterable[GaussianComponent], dim: int | None = None) -> "GaussianMixture":
        comps = list(components)
        if not comps:
            if dim is None:
                raise DomainError("dimension of an empty mixture must be given")
            return cls.empty(dim)
        d = comps[0].dim
        if dim is not None and dim != d:
            raise DomainError("component dimension mismatch")
        if any(c.dim != d for c in comps):
            raise DomainError("all components must share one dimension")
        return cls(
            [c.weight for c in comps],
            np.stack([c.mean for c in comps]),
            np.stack([c.cov for c in comps]),
            d,
            validate=False,
        )

    @classmethod
    def _raw(cls, w, m, P, dim: int) -> "GaussianMixture":
        return cls(w, m, P, dim, validate=False)

    @classmethod
    def concat(cls, mixtures: Sequence["GaussianMixture"], dim: int | None = None) -> "GaussianMixture":
        mixtures = list(mixtures)
        if not mixtures:
            if dim is None:
                raise DomainError("dimension of an empty mixture must be given")
            return cls.empty(dim)
        d = mixtures[0].dim
        if any(g.dim != d for g in mixtures):
            raise DomainError("all mixtures must share one dimension")
        return cls._raw(
            np.concatenate([g.weights for g in mixtures]),
            np.concatenate([g.means for g in mixtures]),
            np.concatenate([g.covs for g in mixtures]),
            d,
        )

    # views ----------------------------------------------------------------
    def __len__(self) -> int:
        return self.weights.size

    def __getitem__(self, i: int) -> GaussianComponent:
        return GaussianComponent(self.weights[i], self.means[i], self.covs[i])

    def __iter__(self) -> Iterator[GaussianComponent]:
        for i in range(len(self)):
            yield self[i]

    @property
    def components(self) -> list[GaussianComponent]:
        return list(self)

    @property
    def weight_sum(self) -> float:
        return self._weight_sum

    def take(self, idx) -> "GaussianMixture":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        idx = idx.astype(int).reshape(-1)
        return GaussianMixture._raw(self.weights[idx], self.means[idx], self.covs[idx], self.dim)

    def with_weights(self, weights) -> "GaussianMixture":
        return GaussianMixture._raw(np.asarray(weights, float), self.means, self.covs, self.dim)

    def scaled(self, factor: float) -> "GaussianMixture":
        return self.with_weights(self.weights * factor)

    def __repr__(self):
        return f"GaussianMixture(n={len(self)}, dim={self.dim}, weight_sum={self.weight_sum:.6g})"


@dataclass(frozen=True)
class ReductionConfig:
    """Prune / merge / cap settings.

    ``merge_gate`` is in standard-deviation units: two components are merged
    when their squared Mahalanobis distance is at most ``merge_gate**2``.
    """

    prune_threshold: float = 1e-4
    merge_gate: float = 5.0
    max_components: int = 50

    def __post_init__(self):
        if not self.prune_threshold >= 0:
            raise DomainError("prune_threshold must be >= 0")
        if not self.merge_gate >= 0:
            raise DomainError("merge_gate must be >= 0")
        if int(self.max_components) < 1:
            raise DomainError("max_components must be >= 1")


@dataclass(frozen=True)
class RankRule:
    """Keep the ``count`` heaviest components; ``count=None`` uses round(W)."""

    count: int | None = None


@dataclass(frozen=True)
class ThresholdRule:
    """Keep components with weight strictly above ``w_s``."""

    w_s: float


@dataclass(frozen=True)
class TgmSelection:
    target_likely: GaussianMixture
    residual: GaussianMixture
    indices: tuple[int, ...]
    tgm_weight_sum: float


def weight_sum(gm: GaussianMixture) -> float:
    return gm.weight_sum


def _chol_solve_quad(cov: np.ndarray, diff: np.ndarray) -> np.ndarray:
    """``diff_k^T cov^{-1} diff_k`` for each row of ``diff``."""
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError("reference covariance is not invertible") from exc
    y = np.linalg.solve(L, np.atleast_2d(diff).T)
    return np.einsum("ij,ij->j", y, y)


def mahalanobis_sq(gc_a: GaussianComponent, gc_b: GaussianComponent) -> float:
    """Squared Mahalanobis-type distance between two components.

    The covariance of the heavier component is the reference; a weight tie
    goes to ``gc_a``.
    """
    if gc_a.dim != gc_b.dim:
        raise DomainError("components differ in dimension")
    ref = gc_a.cov if gc_a.weight >= gc_b.weight else gc_b.cov
    return float(_chol_solve_quad(ref, gc_a.mean - gc_b.mean)[0])


def _batched_quad(covs: np.ndarray, diffs: np.ndarray) -> np.ndarray:
    """``diffs[i, j]^T covs[i]^{-1} diffs[i, j]`` -> shape (n, m)."""
    try:
        L = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError("reference covariance is not invertible") from exc
    y = np.linalg.solve(L, np.swapaxes(diffs, -1, -2))
    return np.einsum("ikj,ikj->ij", y, y)


def mahalanobis_matrix(gm_a: GaussianMixture, gm_b: GaussianMixture) -> np.ndarray:
    """Pairwise :func:`mahalanobis_sq` between rows of ``gm_a`` and ``gm_b``."""
    n, m = len(gm_a), len(gm_b)
    if n == 0 or m == 0:
        return np.zeros((n, m))
    diff = gm_a.means[:, None, :] - gm_b.means[None, :, :]
    qa = _batched_quad(gm_a.covs, diff)
    qb = _batched_quad(gm_b.covs, np.swapaxes(diff, 0, 1)).T
    return np.where(gm_a.weights[:, None] >= gm_b.weights[None, :], qa, qb)


def _merge_arrays(w: np.ndarray, m: np.ndarray, P: np.ndarray, scheme: MergeScheme):
    total = math.fsum(w.tolist())
    if not total > 0:
        raise DegenerateInputError("cannot merge a group with zero total weight")
    mean = (w @ m) / total
    diff = mean - m
    adjusted = P + diff[:, :, None] * diff[:, None, :]
    if scheme == MergeScheme.SMR:
        cov = np.einsum("i,ijk->jk", w, adjusted) / total
    else:
        cov = adjusted[int(np.argmin(np.trace(adjusted, axis1=1, axis2=2)))]
    return total, mean, repair_psd(cov)


def adjusted_covariances(group: Sequence[GaussianComponent], centre: np.ndarray) -> np.ndarray:
    """Spread-adjusted covariances ``P_i + (c - m_i)(c - m_i)^T``."""
    m = np.stack([g.mean for g in group])
    P = np.stack([g.cov for g in group])
    diff = np.asarray(centre, float) - m
    return P + diff[:, :, None] * diff[:, None, :]


def _merge(group: Sequence[GaussianComponent], scheme: MergeScheme) -> GaussianComponent:
    group = list(group)
    if not group:
        raise DegenerateInputError("cannot merge an empty group")
    if len({g.dim for g in group}) != 1:
        raise DomainError("components differ in dimension")
    w = np.array([g.weight for g in group])
    if len(group) == 1:
        if not w[0] > 0:
            raise DegenerateInputError("cannot merge a group with zero total weight")
        return group[0]
    total, mean, cov = _merge_arrays(
        w, np.stack([g.mean for g in group]), np.stack([g.cov for g in group]), MergeScheme(scheme)
    )
    return GaussianComponent(total, mean, cov)


def smr_merge(group: Sequence[GaussianComponent]) -> GaussianComponent:
    """Moment-matching merge of a group into one component."""
    return _merge(group, MergeScheme.SMR)


def omr_merge(group: Sequence[GaussianComponent]) -> GaussianComponent:
    """Merge with the minimum-trace adjusted covariance (lowest index on ties)."""
    return _merge(group, MergeScheme.OMR)


def _top_k(weights: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest weights (ties to lower index), sorted ascending."""
    order = np.argsort(-weights, kind="stable")
    return np.sort(order[:k])


def reduce_mixture(
    gm: GaussianMixture,
    cfg: ReductionConfig = ReductionConfig(),
    scheme: MergeScheme | str = MergeScheme.OMR,
) -> GaussianMixture:
    """Prune, greedily merge and cap a mixture.

    Clusters are seeded by descending weight; a component joins the seed's
    cluster when its squared distance (seed covariance as reference) is at
    most ``cfg.merge_gate**2``.  Output clusters keep the original order of
    their seeds, so a mixture that needs no reduction comes back unchanged.
    """
    scheme = MergeScheme(scheme)
    keep = np.flatnonzero(gm.weights >= cfg.prune_threshold)
    w, m, P = gm.weights[keep], gm.means[keep], gm.covs[keep]
    n = w.size
    if n == 0:
        return GaussianMixture.empty(gm.dim)

    gate_sq = cfg.merge_gate**2
    alive = np.ones(n, dtype=bool)
    order = np.argsort(-w, kind="stable")
    seeds, merged = [], []
    for s in order:
        if not alive[s]:
            continue
        idx = np.flatnonzero(alive)
        d2 = _chol_solve_quad(P[s], m[idx] - m[s])
        members = idx[d2 <= gate_sq]
        alive[members] = False
        seeds.append(s)
        if members.size == 1:
            merged.append((w[s], m[s], P[s]))
        else:
            merged.append(_merge_arrays(w[members], m[members], P[members], scheme))

    by_seed = np.argsort(np.asarray(seeds), kind="stable")
    out_w = np.array([merged[i][0] for i in by_seed])
    out_m = np.stack([merged[i][1] for i in by_seed])
    out_P = np.stack([merged[i][2] for i in by_seed])
    if out_w.size > cfg.max_components:
        top = _top_k(out_w, int(cfg.max_components))
        out_w, out_m, out_P = out_w[top], out_m[top], out_P[top]
    return GaussianMixture._raw(out_w, out_m, out_P, gm.dim)


# the name used throughout the docs
reduce = reduce_mixture


def select_tgm(gm: GaussianMixture, rule: RankRule | ThresholdRule = RankRule()) -> TgmSelection:
    """Split a mixture into its target-likely part and the residual."""
    n = len(gm)
    if isinstance(rule, RankRule):
        if rule.count is not None:
            k = int(rule.count)
        else:
            k = int(math.floor(gm.weight_sum + 0.5))
        k = min(max(k, 0), n)
        idx = _top_k(gm.weights, k)
    elif isinstance(rule, ThresholdRule):
        idx = np.flatnonzero(gm.weights > rule.w_s)
    else:
        raise DomainError(f"unknown T-GM rule {rule!r}")
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    tgm = gm.take(mask)
    return TgmSelection(tgm, gm.take(~mask), tuple(int(i) for i in idx), tgm.weight_sum)


def gate_threshold(coverage: float, d: int) -> float:
    """Gate ``tau`` (in standard deviations) enclosing ``coverage`` probability mass.

    ``tau**2`` is the chi-square quantile with ``d`` degrees of freedom.
    """
    if not (0.0 < coverage < 1.0):
        raise DomainError(f"coverage must lie in (0, 1), got {coverage}")
    if int(d) < 1:
        raise DomainError("dimension must be a positive integer")
    return float(math.sqrt(stats.chi2.ppf(coverage, int(d))))
