"""Per-sensor GM-PHD recursion.

Prediction handles survival, spawning and birth; the update step supports a
linear position sensor (Kalman moments) and a range-bearing sensor whose
measurement moments come from the unscented transform.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, NumericalDegeneracyError
from .gm import GaussianMixture, MergeScheme, ReductionConfig, reduce_mixture, repair_psd

# state layout [p_x, v_x, p_y, v_y]
POS_IDX = (0, 2)


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class MotionModel:
    transition: np.ndarray
    noise_input: np.ndarray
    noise_cov: np.ndarray
    survival_prob: float = 0.99

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.transition, float))
        G = np.atleast_2d(np.asarray(self.noise_input, float))
        Q = np.atleast_2d(np.asarray(self.noise_cov, float))
        if not 0.0 <= self.survival_prob <= 1.0:
            raise DomainError("survival probability must lie in [0, 1]")
        if np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] < -1e-9 * max(np.abs(Q).max(), 1e-300):
            raise DomainError("process-noise covariance must be PSD")
        object.__setattr__(self, "transition", F)
        object.__setattr__(self, "noise_input", G)
        object.__setattr__(self, "noise_cov", Q)

    @property
    def dim(self) -> int:
        return self.transition.shape[0]

    @property
    def process_cov(self) -> np.ndarray:
        return self.noise_input @ self.noise_cov @ self.noise_input.T


def cv_motion(dt: float = 1.0, accel_var: float = 25.0, survival_prob: float = 0.99) -> MotionModel:
    """Nearly-constant-velocity model on ``[p_x, v_x, p_y, v_y]``."""
    F = np.array([[1, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, 0, 1]], float)
    G = np.array([[dt**2 / 2, 0], [dt, 0], [0, dt**2 / 2], [0, dt]], float)
    return MotionModel(F, G, accel_var * np.eye(2), survival_prob)


@dataclass(frozen=True, eq=False)
class BirthModel:
    """Poisson birth intensity plus a Gaussian spawn kernel.

    ``spawn_weight * N(x; u, spawn_cov)`` is spawned from every prior
    component centred at ``u``.
    """

    rates: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    spawn_weight: float = 0.0
    spawn_cov: np.ndarray | None = None

    def __post_init__(self):
        rates = np.asarray(self.rates, float).reshape(-1)
        means = np.asarray(self.means, float).reshape(rates.size, -1)
        d = means.shape[1] if rates.size else (0 if self.spawn_cov is None else np.shape(self.spawn_cov)[0])
        covs = np.asarray(self.covs, float).reshape(rates.size, d, d)
        if np.any(rates < 0) or self.spawn_weight < 0:
            raise DomainError("birth rates and spawn weight must be >= 0")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        if self.spawn_cov is not None:
            object.__setattr__(self, "spawn_cov", np.asarray(self.spawn_cov, float))

    def birth_mixture(self, dim: int) -> GaussianMixture:
        if self.rates.size == 0:
            return GaussianMixture.empty(dim)
        return GaussianMixture(self.rates, self.means, self.covs, dim)


BIRTH_MEANS = np.array(
    [[0, 0, 0, 0], [-500, 0, -500, 0], [0, 0, 500, 0], [500, 0, -500, 0]], float
)
BIRTH_COV = np.diag([400.0, 100.0, 400.0, 100.0])
SPAWN_COV = np.diag([100.0, 400.0, 100.0, 400.0])


def default_birth_model(rate: float = 0.03, spawn_weight: float = 0.05) -> BirthModel:
    """Four-point birth intensity with the spawn kernel used in the experiments."""
    return BirthModel(
        np.full(4, rate), BIRTH_MEANS, np.repeat(BIRTH_COV[None], 4, axis=0), spawn_weight, SPAWN_COV
    )


class SensorKind(str, enum.Enum):
    LINEAR = "linear"
    RANGE_BEARING = "range_bearing"


@dataclass(frozen=True)
class RectFov:
    """Axis-aligned rectangle in the position plane."""

    xmin: float = -1000.0
    xmax: float = 1000.0
    ymin: float = -1000.0
    ymax: float = 1000.0

    @property
    def volume(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def contains(self, pos: np.ndarray) -> np.ndarray:
        pos = np.atleast_2d(pos)
        return (
            (pos[:, 0] >= self.xmin) & (pos[:, 0] <= self.xmax)
            & (pos[:, 1] >= self.ymin) & (pos[:, 1] <= self.ymax)
        )


@dataclass(frozen=True)
class DiscFov:
    """Disc of ``max_range`` around the sensor; volume is taken in (range, bearing) space."""

    max_range: float = 3000.0

    @property
    def volume(self) -> float:
        return self.max_range * 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class SensorModel:
    kind: SensorKind
    obs_noise: np.ndarray
    detect_prob: float = 0.95
    clutter_rate: float = 5.0
    fov: RectFov | DiscFov = field(default_factory=RectFov)
    position: np.ndarray | None = None
    obs_matrix: np.ndarray | None = None
    # None: constant detection probability; otherwise the spread (m) of the
    # Gaussian fall-off of detection probability with distance to the sensor
    detect_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SensorKind(self.kind))
        R = np.asarray(self.obs_noise, float)
        if np.linalg.eigvalsh(0.5 * (R + R.T))[0] < -1e-12:
            raise DomainError("measurement noise covariance must be PSD")
        object.__setattr__(self, "obs_noise", R)
        if not 0.0 <= self.detect_prob <= 1.0:
            raise DomainError("detection probability must lie in [0, 1]")
        if self.clutter_rate < 0:
            raise DomainError("clutter rate must be >= 0")
        if self.kind == SensorKind.LINEAR:
            H = self.obs_matrix
            if H is None:
                H = np.array([[1, 0, 0, 0], [0, 0, 1, 0]], float)
            object.__setattr__(self, "obs_matrix", np.asarray(H, float))
        else:
            if self.position is None:
                raise DomainError("range-bearing sensors need a position")
            object.__setattr__(self, "position", np.asarray(self.position, float).reshape(2))

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_rate / self.fov.volume

    def detection_prob(self, positions: np.ndarray) -> np.ndarray:
        """Detection probability at the given ``(n, 2)`` positions."""
        positions = np.atleast_2d(np.asarray(positions, float))
        if self.detect_scale is None or self.position is None:
            return np.full(positions.shape[0], self.detect_prob)
        d2 = np.sum((positions - self.position) ** 2, axis=1)
        return self.detect_prob * np.exp(-0.5 * d2 / self.detect_scale**2)

    def observe(self, states: np.ndarray) -> np.ndarray:
        """Noise-free measurement of ``(n, d)`` states."""
        states = np.atleast_2d(np.asarray(states, float))
        if self.kind == SensorKind.LINEAR:
            return states @ self.obs_matrix.T
        return range_bearing(states, self.position)


def linear_sensor(sigma: float = 10.0, detect_prob: float = 0.95, clutter_rate: float = 5.0,
                  fov: RectFov = RectFov(), position=None) -> SensorModel:
    return SensorModel(
        SensorKind.LINEAR, sigma**2 * np.eye(2), detect_prob, clutter_rate, fov,
        position=None if position is None else np.asarray(position, float),
    )


def range_bearing_sensor(position, sigma_r: float = 10.0, sigma_theta: float = np.pi / 90,
                         detect_prob: float = 0.95, clutter_rate: float = 5.0,
                         max_range: float = 3000.0, detect_scale: float | None = 6000.0) -> SensorModel:
    return SensorModel(
        SensorKind.RANGE_BEARING, np.diag([sigma_r**2, sigma_theta**2]), detect_prob, clutter_rate,
        DiscFov(max_range), position=np.asarray(position, float), detect_scale=detect_scale,
    )


def range_bearing(states: np.ndarray, sensor_pos: np.ndarray) -> np.ndarray:
    """Range and bearing of the position part of ``states`` (last axis)."""
    dx = states[..., POS_IDX[0]] - sensor_pos[0]
    dy = states[..., POS_IDX[1]] - sensor_pos[1]
    return np.stack([np.hypot(dx, dy), np.arctan2(dy, dx)], axis=-1)


# ---------------------------------------------------------------------------
# prediction


def predict(gm: GaussianMixture, motion: MotionModel, birth: BirthModel | None = None) -> GaussianMixture:
    F = motion.transition
    d = gm.dim
    parts = []
    if len(gm):
        parts.append(GaussianMixture._raw(
            gm.weights * motion.survival_prob,
            gm.means @ F.T,
            repair_psd(F @ gm.covs @ F.T + motion.process_cov),
            d,
        ))
    if birth is not None:
        if birth.spawn_weight > 0 and len(gm):
            parts.append(GaussianMixture._raw(
                gm.weights * birth.spawn_weight, gm.means, gm.covs + birth.spawn_cov, d
            ))
        parts.append(birth.birth_mixture(d))
    return GaussianMixture.concat(parts, d)


# ---------------------------------------------------------------------------
# update


def _gaussian_update(gm: GaussianMixture, Z: np.ndarray, zhat: np.ndarray, S: np.ndarray,
                     C: np.ndarray, pd: np.ndarray, kappa: float,
                     angle_dims: Sequence[int] = ()) -> GaussianMixture:
    """Shared GM-PHD update given per-component measurement moments.

    ``zhat`` (n, p), ``S`` (n, p, p) and ``C`` (n, d, p) are the predicted
    measurement, innovation covariance and state/measurement cross covariance.
    """
    n, d = len(gm), gm.dim
    missed = GaussianMixture._raw((1.0 - pd) * gm.weights, gm.means, gm.covs, d)
    Z = np.asarray(Z, float).reshape(-1, zhat.shape[1] if n else 2)
    if n == 0 or Z.shape[0] == 0:
        return missed

    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError("innovation covariance not positive definite") from exc
    S_inv = np.linalg.inv(S)
    K = C @ S_inv                                    # (n, d, p)
    P_upd = repair_psd(gm.covs - K @ S @ np.swapaxes(K, 1, 2))

    resid = Z[:, None, :] - zhat[None, :, :]         # (M, n, p)
    for j in angle_dims:
        resid[..., j] = wrap_angle(resid[..., j])
    maha = np.einsum("mni,nij,mnj->mn", resid, S_inv, resid)
    log_det = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    p = zhat.shape[1]
    q = np.exp(-0.5 * maha - 0.5 * (log_det + p * math.log(2 * math.pi)))

    num = (pd * gm.weights)[None, :] * q               # (M, n)
    den = kappa + num.sum(axis=1, keepdims=True)
    w_upd = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    m_upd = gm.means[None, :, :] + np.einsum("nij,mnj->mni", K, resid)
    M = Z.shape[0]
    return GaussianMixture.concat([
        missed,
        GaussianMixture._raw(
            w_upd.reshape(-1), m_upd.reshape(M * n, d),
            np.broadcast_to(P_upd, (M, n, d, d)).reshape(M * n, d, d), d,
        ),
    ])


def update_linear(gm: GaussianMixture, measurements, sensor: SensorModel) -> GaussianMixture:
    """GM-PHD update for a linear-Gaussian sensor ``z = H x + v``."""
    if sensor.kind != SensorKind.LINEAR:
        raise DomainError("update_linear needs a linear sensor")
    H, R = sensor.obs_matrix, sensor.obs_noise
    zhat = gm.means @ H.T
    C = gm.covs @ H.T
    S = H @ C + R
    pd = sensor.detection_prob(gm.means[:, POS_IDX]) if len(gm) else np.zeros(0)
    return _gaussian_update(gm, measurements, zhat, S, C, pd, sensor.clutter_intensity)


@dataclass(frozen=True)
class UTParams:
    """Symmetric sigma-point set; ``kappa=None`` means ``3 - d``."""

    kappa: float | None = None

    def spread(self, d: int) -> float:
        return 3.0 - d if self.kappa is None else float(self.kappa)


def _psd_sqrt(P: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        val, vec = np.linalg.eigh(P)
        return vec * np.sqrt(np.clip(val, 0.0, None))[..., None, :]


def unscented_moments(means: np.ndarray, covs: np.ndarray, h: Callable[[np.ndarray], np.ndarray],
                      R: np.ndarray, ut: UTParams = UTParams(), angle_dims: Sequence[int] = ()):
    """Predicted measurement, innovation covariance and cross covariance.

    ``h`` maps an array of states ``(..., d)`` to measurements ``(..., p)``.
    Components of ``angle_dims`` are treated as circular.
    """
    n, d = means.shape
    kappa = ut.spread(d)
    if d + kappa <= 0:
        raise DomainError("unscented spread needs d + kappa > 0")
    root = _psd_sqrt((d + kappa) * covs)                      # (n, d, d), columns are offsets
    offsets = np.swapaxes(root, 1, 2)                          # (n, d, d) rows are offsets
    chi = np.concatenate([means[:, None, :], means[:, None, :] + offsets, means[:, None, :] - offsets], axis=1)
    wts = np.full(2 * d + 1, 1.0 / (2.0 * (d + kappa)))
    wts[0] = kappa / (d + kappa)

    z = np.asarray(h(chi), float)                              # (n, 2d+1, p)
    dz0 = z - z[:, :1, :]
    for j in angle_dims:
        dz0[..., j] = wrap_angle(dz0[..., j])
    zhat = z[:, 0, :] + np.einsum("s,nsp->np", wts, dz0)
    dz = z - zhat[:, None, :]
    for j in angle_dims:
        zhat[:, j] = wrap_angle(zhat[:, j])
        dz[..., j] = wrap_angle(dz[..., j])
    dx = chi - means[:, None, :]
    S = np.einsum("s,nsp,nsq->npq", wts, dz, dz) + R
    C = np.einsum("s,nsi,nsp->nip", wts, dx, dz)
    return zhat, 0.5 * (S + np.swapaxes(S, 1, 2)), C


def update_unscented(gm: GaussianMixture, measurements, h: Callable[[np.ndarray], np.ndarray],
                     R: np.ndarray, pd, kappa: float, ut: UTParams = UTParams(),
                     angle_dims: Sequence[int] = ()) -> GaussianMixture:
    """GM-PHD update for an arbitrary observation function via the unscented transform."""
    if len(gm) == 0:
        return gm
    pd = np.broadcast_to(np.asarray(pd, float), (len(gm),))
    zhat, S, C = unscented_moments(gm.means, gm.covs, h, np.asarray(R, float), ut, angle_dims)
    return _gaussian_update(gm, measurements, zhat, S, C, pd, kappa, angle_dims)


def update_range_bearing(gm: GaussianMixture, measurements, sensor: SensorModel,
                         ut: UTParams = UTParams()) -> GaussianMixture:
    """GM-PHD update for a range-bearing sensor; bearings live in (-pi, pi]."""
    if sensor.kind != SensorKind.RANGE_BEARING:
        raise DomainError("update_range_bearing needs a range-bearing sensor")
    if len(gm) == 0:
        return gm
    pos = gm.means[:, POS_IDX]
    if np.any(np.hypot(*(pos - sensor.position).T) < 1e-9):
        raise NumericalDegeneracyError("component mean coincides with the sensor; bearing undefined")
    pd = sensor.detection_prob(pos)
    s = sensor.position
    return update_unscented(
        gm, measurements, lambda x: range_bearing(x, s), sensor.obs_noise, pd,
        sensor.clutter_intensity, ut, angle_dims=(1,),
    )


def update(gm: GaussianMixture, measurements, sensor: SensorModel, ut: UTParams = UTParams()) -> GaussianMixture:
    if sensor.kind == SensorKind.LINEAR:
        return update_linear(gm, measurements, sensor)
    return update_range_bearing(gm, measurements, sensor, ut)


# ---------------------------------------------------------------------------
# estimation


class Estimate(NamedTuple):
    cardinality: float
    rounded: int
    states: np.ndarray


def estimate(gm: GaussianMixture, threshold: float = 0.5) -> Estimate:
    """Expected target count and extracted states.

    States are means of components heavier than ``threshold``; a mean is
    repeated ``round(w)`` times when ``w > 1.5``.  The extracted count and
    the rounded weight sum can disagree.
    """
    card = gm.weight_sum
    rounded = int(math.floor(card + 0.5))
    keep = np.flatnonzero(gm.weights > threshold)
    reps = np.where(gm.weights[keep] > 1.5, np.floor(gm.weights[keep] + 0.5), 1).astype(int)
    states = np.repeat(gm.means[keep], reps, axis=0)
    return Estimate(card, rounded, states)


@dataclass(frozen=True)
class GMPHDFilter:
    """One sensor's filter: predict, update, then local reduction."""

    motion: MotionModel
    birth: BirthModel
    sensor: SensorModel
    reduction: ReductionConfig = ReductionConfig()
    scheme: MergeScheme = MergeScheme.SMR
    ut: UTParams = UTParams()

    def step(self, gm: GaussianMixture, measurements) -> GaussianMixture:
        pred = predict(gm, self.motion, self.birth)
        post = update(pred, measurements, self.sensor, self.ut)
        return reduce_mixture(post, self.reduction, self.scheme)
