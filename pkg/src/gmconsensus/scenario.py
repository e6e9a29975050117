"""Ground truth and sensor data generation.

Two canned scenarios: ``single`` (at most one live target, no spawning) and
``multi`` (up to three concurrent targets, spawning allowed).  Each comes
as a random truth drawn from the birth/motion models and as a scripted,
noise-free truth used for regression-stable experiments.
"""
from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .phd import (
    BIRTH_MEANS,
    POS_IDX,
    BirthModel,
    DiscFov,
    MotionModel,
    RectFov,
    SensorKind,
    SensorModel,
    cv_motion,
    default_birth_model,
    linear_sensor,
    range_bearing,
    range_bearing_sensor,
    wrap_angle,
)


class Scenario(str, enum.Enum):
    SINGLE = "single"
    MULTI = "multi"


MAX_TARGETS = {Scenario.SINGLE: 1, Scenario.MULTI: 3}
LINEAR_CLUTTER = {Scenario.SINGLE: 5.0, Scenario.MULTI: 10.0}
RB_CLUTTER = 5.0


@dataclass
class Track:
    birth: int
    states: np.ndarray          # (length, 4)
    parent: int | None = None

    @property
    def death(self) -> int:
        """Last step at which the target exists."""
        return self.birth + len(self.states) - 1

    def alive(self, k: int) -> bool:
        return self.birth <= k <= self.death


@dataclass
class GroundTruth:
    steps: int
    tracks: dict[int, Track] = field(default_factory=dict)

    def live(self, k: int) -> list[int]:
        return [tid for tid, tr in self.tracks.items() if tr.alive(k)]

    def count(self, k: int) -> int:
        return len(self.live(k))

    def states(self, k: int) -> np.ndarray:
        rows = [self.tracks[t].states[k - self.tracks[t].birth] for t in self.live(k)]
        return np.array(rows).reshape(-1, 4)

    def positions(self, k: int) -> np.ndarray:
        return self.states(k)[:, POS_IDX]


def propagate_state(x: np.ndarray, motion: MotionModel, rng: np.random.Generator | None = None) -> np.ndarray:
    """One nearly-constant-velocity step; noise-free when ``rng`` is None."""
    x_next = motion.transition @ x
    if rng is not None:
        u = rng.multivariate_normal(np.zeros(motion.noise_cov.shape[0]), motion.noise_cov)
        x_next = x_next + motion.noise_input @ u
    return x_next


def simulate_truth(scenario: Scenario | str, steps: int, seed: int, motion: MotionModel | None = None,
                   birth: BirthModel | None = None, region: RectFov = RectFov()) -> GroundTruth:
    """Random truth from the birth, spawn, survival and motion models.

    Targets that leave ``region`` die.  Births are suppressed while the
    scenario's concurrent-target cap is reached; spawning only happens in
    the multi-target scenario.
    """
    scenario = Scenario(scenario)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    motion = motion or cv_motion()
    birth = birth or default_birth_model()
    rng = np.random.default_rng(seed)
    cap = MAX_TARGETS[scenario]
    chol_b = np.linalg.cholesky(birth.covs)
    chol_s = np.linalg.cholesky(birth.spawn_cov) if birth.spawn_cov is not None else None
    live: dict[int, list[np.ndarray]] = {}
    truth = GroundTruth(steps)
    next_id = 0

    def start(k, x, parent=None):
        nonlocal next_id
        truth.tracks[next_id] = Track(k, np.zeros((0, 4)), parent)
        live[next_id] = [x]
        next_id += 1

    for k in range(steps):
        for tid in list(live):
            if k == truth.tracks[tid].birth:
                continue
            x = propagate_state(live[tid][-1], motion, rng)
            if rng.random() >= motion.survival_prob or not region.contains(x[list(POS_IDX)])[0]:
                truth.tracks[tid].states = np.array(live.pop(tid))
                continue
            live[tid].append(x)
        if scenario == Scenario.MULTI and chol_s is not None:
            for tid in sorted(live):
                if len(live) < cap and truth.tracks[tid].birth < k and rng.random() < birth.spawn_weight:
                    x0 = live[tid][-1] + chol_s @ rng.standard_normal(4)
                    start(k, x0, parent=tid)
        for i in range(birth.rates.size):
            for _ in range(rng.poisson(birth.rates[i])):
                if len(live) < cap:
                    start(k, birth.means[i] + chol_b[i] @ rng.standard_normal(4))
    for tid, xs in live.items():
        truth.tracks[tid].states = np.array(xs)
    return truth


# start step, end step (inclusive) as fractions of a 100-step run, birth-mean index, velocity
_SCRIPTS = {
    Scenario.SINGLE: [
        (0, 44, 1, (10.0, 8.0)),
        (55, 99, 2, (8.0, -10.0)),
    ],
    Scenario.MULTI: [
        (0, 69, 0, (-6.0, 9.0)),
        (8, 89, 1, (8.0, 4.0)),
        (15, 59, 3, (-5.0, 10.0)),
        (62, 99, 2, (7.0, -8.0)),
    ],
}


def scripted_truth(scenario: Scenario | str, steps: int = 100, motion: MotionModel | None = None) -> GroundTruth:
    """Deterministic, noise-free truth shaped like the published scenarios.

    Targets start at birth-intensity means; timings are given for 100 steps
    and scaled to ``steps``.
    """
    scenario = Scenario(scenario)
    motion = motion or cv_motion()
    truth = GroundTruth(steps)
    scale = steps / 100.0
    for tid, (s, e, mean_idx, (vx, vy)) in enumerate(_SCRIPTS[scenario]):
        k0 = int(round(s * scale))
        k1 = min(steps - 1, int(round((e + 1) * scale)) - 1)
        if k1 < k0:
            continue
        x = BIRTH_MEANS[mean_idx].copy()
        x[1], x[3] = vx, vy
        xs = [x]
        for _ in range(k1 - k0):
            xs.append(propagate_state(xs[-1], motion))
        truth.tracks[tid] = Track(k0, np.array(xs))
    return truth


def constant_velocity_truth(x0, steps: int, motion: MotionModel | None = None) -> GroundTruth:
    """One noise-free target alive over the whole run."""
    motion = motion or cv_motion()
    xs = [np.asarray(x0, float)]
    for _ in range(steps - 1):
        xs.append(propagate_state(xs[-1], motion))
    return GroundTruth(steps, {0: Track(0, np.array(xs))})


# ---------------------------------------------------------------------------
# measurements


@dataclass
class MeasurementFrame:
    """One sensor's scans; ``scans[k]`` is an ``(m, 2)`` array without origin labels."""

    sensor_id: int
    scans: list[np.ndarray]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, z in enumerate(self.scans):
            h.update(np.int64(k).tobytes())
            h.update(np.ascontiguousarray(z, dtype="<f8").tobytes())
        return h.hexdigest()


def _noise_root(R: np.ndarray) -> np.ndarray:
    val, vec = np.linalg.eigh(0.5 * (R + R.T))
    return vec * np.sqrt(np.clip(val, 0.0, None))


def in_fov(sensor: SensorModel, positions: np.ndarray) -> np.ndarray:
    positions = np.atleast_2d(positions)
    if isinstance(sensor.fov, RectFov):
        return sensor.fov.contains(positions)
    return np.hypot(*(positions - sensor.position).T) <= sensor.fov.max_range


def sample_clutter(sensor: SensorModel, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """Poisson number (or ``count``) of points uniform on the sensor's FOV."""
    n = rng.poisson(sensor.clutter_rate) if count is None else count
    if isinstance(sensor.fov, RectFov):
        f = sensor.fov
        return np.c_[rng.uniform(f.xmin, f.xmax, n), rng.uniform(f.ymin, f.ymax, n)]
    r = rng.uniform(0.0, sensor.fov.max_range, n)
    theta = wrap_angle(rng.uniform(-np.pi, np.pi, n))
    return np.c_[r, theta]


def generate_measurements(truth: GroundTruth, sensor: SensorModel, seed, sensor_id: int = 0) -> MeasurementFrame:
    """Detections (with noise) plus clutter for every step, in shuffled order."""
    rng = np.random.default_rng(seed)
    root = _noise_root(sensor.obs_noise)
    scans = []
    for k in range(truth.steps):
        X = truth.states(k)
        pts = []
        if X.shape[0]:
            pos = X[:, POS_IDX]
            pd = sensor.detection_prob(pos)
            hit = (rng.random(X.shape[0]) < pd) & in_fov(sensor, pos)
            if hit.any():
                z = sensor.observe(X[hit])
                z = z + rng.standard_normal(z.shape) @ root.T
                if sensor.kind == SensorKind.RANGE_BEARING:
                    z[:, 1] = wrap_angle(z[:, 1])
                pts.append(z)
        pts.append(sample_clutter(sensor, rng))
        Z = np.concatenate(pts).reshape(-1, 2)
        scans.append(Z[rng.permutation(Z.shape[0])])
    return MeasurementFrame(sensor_id, scans)


def network_sensors(graph, scenario: Scenario | str, linear_clutter: float | None = None,
                    rb_clutter: float = RB_CLUTTER) -> list[SensorModel]:
    """Sensor models for every node: linear position or range-bearing."""
    scenario = Scenario(scenario)
    lin_r = LINEAR_CLUTTER[scenario] if linear_clutter is None else linear_clutter
    out = []
    for a in range(graph.n):
        if graph.kinds[a] == SensorKind.LINEAR:
            out.append(linear_sensor(clutter_rate=lin_r, position=graph.positions[a]))
        else:
            out.append(range_bearing_sensor(graph.positions[a], clutter_rate=rb_clutter))
    return out


# ---------------------------------------------------------------------------
# CSV round trip

TRUTH_HEADER = ["step", "target_id", "parent_id", "p_x", "v_x", "p_y", "v_y"]
FRAME_HEADER = ["step", "sensor_id", "z1", "z2"]


def write_truth_csv(truth: GroundTruth, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_HEADER)
        for k in range(truth.steps):
            for tid in truth.live(k):
                tr = truth.tracks[tid]
                x = tr.states[k - tr.birth]
                w.writerow([k, tid, "" if tr.parent is None else tr.parent, *map(repr, map(float, x))])


def read_truth_csv(path, steps: int | None = None) -> GroundTruth:
    rows: dict[int, list] = {}
    parents: dict[int, int | None] = {}
    last = -1
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            k, tid = int(r["step"]), int(r["target_id"])
            rows.setdefault(tid, []).append((k, [float(r[c]) for c in TRUTH_HEADER[3:]]))
            parents[tid] = int(r["parent_id"]) if r["parent_id"] else None
            last = max(last, k)
    truth = GroundTruth(steps if steps is not None else last + 1)
    for tid in sorted(rows):
        seq = sorted(rows[tid])
        truth.tracks[tid] = Track(seq[0][0], np.array([x for _, x in seq]), parents[tid])
    return truth


def write_frames_csv(frames: Mapping[int, MeasurementFrame] | Sequence[MeasurementFrame], path) -> None:
    frames = list(frames.values()) if isinstance(frames, Mapping) else list(frames)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FRAME_HEADER)
        for k in range(len(frames[0].scans) if frames else 0):
            for f in frames:
                for z in f.scans[k]:
                    w.writerow([k, f.sensor_id, repr(float(z[0])), repr(float(z[1]))])


def read_frames_csv(path, steps: int | None = None) -> dict[int, MeasurementFrame]:
    data: dict[int, dict[int, list]] = {}
    last = -1
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            k, s = int(r["step"]), int(r["sensor_id"])
            data.setdefault(s, {}).setdefault(k, []).append((float(r["z1"]), float(r["z2"])))
            last = max(last, k)
    steps = last + 1 if steps is None else steps
    return {
        s: MeasurementFrame(s, [np.array(per.get(k, []), float).reshape(-1, 2) for k in range(steps)])
        for s, per in sorted(data.items())
    }
