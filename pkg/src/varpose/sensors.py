"""Synthetic optical and inertial measurements.

Beacons are inertially fixed points seen by body-mounted conic cameras.  Each
epoch produces the body-frame beacon vectors, their means, the paired
reference/body vector matrices ``D`` and ``L^m`` (relative beacon positions
followed by inertial directions, plus a cross-product column when only two
directions are available) and, optionally, point velocities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .geometry import Pose, hat3


class PoseUnobservable(RuntimeError):
    """Fewer than two independent directions are available this epoch."""


@dataclass(frozen=True)
class World:
    beacons: dict  # index -> position in the inertial frame (m)
    inertial_directions: tuple  # unit vectors in the inertial frame

    def __post_init__(self):
        object.__setattr__(
            self, "beacons", {int(k): np.asarray(v, dtype=float) for k, v in self.beacons.items()}
        )
        dirs = tuple(np.asarray(d, dtype=float) for d in self.inertial_directions)
        for d in dirs:
            if abs(np.linalg.norm(d) - 1.0) > 1e-12:
                raise ValueError("inertial directions must be unit vectors")
        object.__setattr__(self, "inertial_directions", dirs)


def cube_world(half_size: float = 5.0) -> World:
    """Eight beacons on the vertices of a cube centred at the origin."""
    verts = [
        (sx * half_size, sy * half_size, sz * half_size)
        for sx in (-1, 1)
        for sy in (-1, 1)
        for sz in (-1, 1)
    ]
    d2 = np.array([0.1, 0.975, -0.2])
    return World(
        beacons={i + 1: v for i, v in enumerate(verts)},
        inertial_directions=(np.array([0.0, 0.0, -1.0]), d2 / np.linalg.norm(d2)),
    )


@dataclass(frozen=True)
class CameraRig:
    mounts: np.ndarray  # (k, 3) body-frame positions
    boresights: np.ndarray  # (k, 3) unit vectors
    half_angle: float

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.mounts, dtype=float))
        c = np.atleast_2d(np.asarray(self.boresights, dtype=float))
        if m.shape != c.shape or m.shape[1] != 3:
            raise ValueError("mounts and boresights must both be (k, 3)")
        if np.any(np.abs(np.linalg.norm(c, axis=1) - 1.0) > 1e-12):
            raise ValueError("boresights must be unit vectors")
        if not 0.0 < self.half_angle < np.pi / 2:
            raise ValueError("half_angle must lie in (0, pi/2)")
        object.__setattr__(self, "mounts", m)
        object.__setattr__(self, "boresights", c)


def horizontal_rig(half_angle: float, azimuth0: float = 0.0, mounts=None) -> CameraRig:
    """Three cameras in the body x-y plane, 120 degrees apart."""
    az = azimuth0 + np.deg2rad([0.0, 120.0, -120.0])
    bores = np.stack([np.cos(az), np.sin(az), np.zeros(3)], axis=1)
    if mounts is None:
        mounts = np.zeros((3, 3))
    return CameraRig(mounts, bores, half_angle)


def omni_rig(half_angle: float = np.deg2rad(60.0)) -> CameraRig:
    """Six cameras along the body axes; with a half-angle above 54.8 deg nothing is ever hidden."""
    bores = np.vstack([np.eye(3), -np.eye(3)])
    return CameraRig(np.zeros((6, 3)), bores, half_angle)


@dataclass(frozen=True)
class NoiseModel:
    bump_width: float = 0.0  # beacon position noise (m)
    direction_width: float | None = None  # inertial direction noise; defaults to bump_width
    velocity_width: float | None = None  # direct twist / gyro noise; defaults to bump_width
    seed: int = 0

    def __post_init__(self):
        for w in (self.bump_width, self.direction_width, self.velocity_width):
            if w is not None and w < 0:
                raise ValueError("noise widths must be non-negative")

    @property
    def dir_width(self) -> float:
        return self.bump_width if self.direction_width is None else self.direction_width

    @property
    def vel_width(self) -> float:
        return self.bump_width if self.velocity_width is None else self.velocity_width

    def rng(self, epoch: int, stream: int = 0) -> np.random.Generator:
        # keyed per (seed, epoch, stream): epochs can be generated in any order
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, epoch, stream])))


def sample_bump(rng: np.random.Generator, width: float, size) -> np.ndarray:
    """I.i.d. samples from the density proportional to exp(-1/(1-(x/w)^2)) on (-w, w)."""
    size = (size,) if np.isscalar(size) else tuple(size)
    if width == 0.0:
        return np.zeros(size)
    n = int(np.prod(size))
    out = np.empty(0)
    while out.size < n:
        u = rng.uniform(-1.0, 1.0, size=2 * n + 16)
        accept = rng.uniform(size=u.size) < np.exp(1.0 - 1.0 / (1.0 - u * u))
        out = np.concatenate([out, u[accept]])
    return width * out[:n].reshape(size)


def sample_bump_noise(model: NoiseModel, rng: np.random.Generator | None = None) -> np.ndarray:
    if rng is None:
        rng = model.rng(0)
    return sample_bump(rng, model.bump_width, 3)


def _seeing_camera(a: np.ndarray, rig: CameraRig) -> int | None:
    cos_half = np.cos(rig.half_angle)
    for k in range(len(rig.boresights)):
        ray = a - rig.mounts[k]
        r = np.linalg.norm(ray)
        if r > 0 and ray @ rig.boresights[k] >= cos_half * r:
            return k
    return None


def visible_beacons(pose: Pose, world: World, rig: CameraRig) -> list[int]:
    labels = sorted(world.beacons)
    P = np.array([world.beacons[j] for j in labels])
    A = (P - pose.b) @ pose.R  # rows are R^T (p_j - b)
    rays = A[:, None, :] - rig.mounts[None, :, :]
    r = np.linalg.norm(rays, axis=2)
    along = np.einsum("jkc,kc->jk", rays, rig.boresights)
    seen = np.any((r > 0) & (along >= np.cos(rig.half_angle) * r), axis=1)
    return [j for j, ok in zip(labels, seen) if ok]


@dataclass
class MeasurementSet:
    t: float
    index: list  # observed beacon labels, ascending
    a_m: np.ndarray  # (j, 3) body-frame beacon vectors
    p: np.ndarray  # (j, 3) matching inertial beacon positions
    D: np.ndarray  # (3, n)
    L_m: np.ndarray  # (3, n)
    kinds: list  # per column: 'pair' | 'inertial' | 'cross'
    pairs: list  # per column: (lam, ell) beacon labels, (k, -1) for inertial, (-1, -1) for cross
    beta_count: int
    v_m: dict = field(default_factory=dict)  # label -> point velocity (body frame)
    twist_m: np.ndarray | None = None  # direct twist measurement, if any
    gyro_m: np.ndarray | None = None  # angular-rate measurement, if any
    observable: bool = True

    @property
    def n_beacons(self) -> int:
        return len(self.index)

    @property
    def p_bar(self) -> np.ndarray | None:
        return self.p.mean(axis=0) if len(self.index) else None

    @property
    def a_bar_m(self) -> np.ndarray | None:
        return self.a_m.mean(axis=0) if len(self.index) else None

    @property
    def inertial_mask(self) -> np.ndarray:
        return np.array([k == "inertial" for k in self.kinds], dtype=bool)


def vector_matrices(
    index, a_m, p, inertial_body, inertial_ref
) -> tuple[np.ndarray, np.ndarray, list, list]:
    """Assemble (D, L^m) from beacon pairs and inertial directions.

    Raises PoseUnobservable when fewer than two directions are available.
    """
    d_cols, l_cols, kinds, pairs = [], [], [], []
    pos = {j: k for k, j in enumerate(index)}
    for lam, ell in combinations(index, 2):
        d_cols.append(p[pos[lam]] - p[pos[ell]])
        l_cols.append(a_m[pos[lam]] - a_m[pos[ell]])
        kinds.append("pair")
        pairs.append((lam, ell))
    for k, (lb, dr) in enumerate(zip(inertial_body, inertial_ref)):
        d_cols.append(np.asarray(dr, dtype=float))
        l_cols.append(np.asarray(lb, dtype=float))
        kinds.append("inertial")
        pairs.append((k, -1))
    if len(d_cols) < 2:
        raise PoseUnobservable(f"{len(d_cols)} direction(s) available, need at least two")
    if len(d_cols) == 2:
        d_cols.append(np.cross(d_cols[0], d_cols[1]))
        l_cols.append(np.cross(l_cols[0], l_cols[1]))
        kinds.append("cross")
        pairs.append((-1, -1))
    return np.array(d_cols).T, np.array(l_cols).T, kinds, pairs


def measure_epoch(
    truth,
    world: World,
    rig: CameraRig,
    noise: NoiseModel,
    epoch: int = 0,
    strict: bool = False,
) -> MeasurementSet:
    """One epoch of noisy beacon and inertial-direction measurements.

    ``truth`` is a :class:`~varpose.truth.TruthState`.  An attitude-unobservable
    epoch is flagged (``observable=False``) unless ``strict`` is set, in which
    case :class:`PoseUnobservable` propagates.
    """
    pose = truth.pose
    rng = noise.rng(epoch)
    Rt = pose.R.T
    index, a_list, p_list = [], [], []
    for j in sorted(world.beacons):
        pj = world.beacons[j]
        a = Rt @ (pj - pose.b)
        k = _seeing_camera(a, rig)
        if k is None:
            continue
        # seen through camera k: q = a - s^k, measured as q + noise + s^k
        index.append(j)
        a_list.append(a + sample_bump(rng, noise.bump_width, 3))
        p_list.append(pj)
    a_m = np.array(a_list).reshape(-1, 3)
    p = np.array(p_list).reshape(-1, 3)

    inertial_body = []
    for d in world.inertial_directions:
        lb = Rt @ d + sample_bump(rng, noise.dir_width, 3)
        inertial_body.append(lb / np.linalg.norm(lb))

    try:
        D, L_m, kinds, pairs = vector_matrices(index, a_m, p, inertial_body, world.inertial_directions)
        observable = True
    except PoseUnobservable:
        if strict:
            raise
        D, L_m, kinds, pairs = np.zeros((3, 0)), np.zeros((3, 0)), [], []
        observable = False

    xi = np.asarray(truth.twist, dtype=float)
    rng_v = noise.rng(epoch, stream=1)
    twist_m = xi + sample_bump(rng_v, noise.vel_width, 6)
    return MeasurementSet(
        t=float(truth.time),
        index=index,
        a_m=a_m,
        p=p,
        D=D,
        L_m=L_m,
        kinds=kinds,
        pairs=pairs,
        beta_count=len(world.inertial_directions),
        twist_m=twist_m,
        gyro_m=twist_m[:3].copy(),
        observable=observable,
    )


def point_velocity_exact(a, xi) -> np.ndarray:
    """Velocity of a fixed beacon seen from the body: ``a x Omega - nu``."""
    return hat3(a) @ xi[:3] - xi[3:]


def add_exact_point_velocities(epoch: MeasurementSet, truth, noise: NoiseModel, epoch_index: int = 0):
    """Exact-plus-noise point velocities (test mode)."""
    rng = noise.rng(epoch_index, stream=2)
    Rt = truth.pose.R.T
    xi = np.asarray(truth.twist, dtype=float)
    epoch.v_m = {}
    for j, pj in zip(epoch.index, epoch.p):
        a = Rt @ (pj - truth.pose.b)
        epoch.v_m[j] = point_velocity_exact(a, xi) + sample_bump(rng, noise.vel_width, 3)
    return epoch


def add_finite_difference_velocities(epochs: list, dt: float) -> list:
    """Backward differences of consecutive body-frame beacon vectors.

    A beacon gets a velocity only from its second consecutive observation.
    """
    prev = {}
    for e in epochs:
        cur = {j: e.a_m[k] for k, j in enumerate(e.index)}
        e.v_m = {j: (cur[j] - prev[j]) / dt for j in e.index if j in prev}
        prev = cur
    return epochs


def simulate_measurements(
    traj,
    world: World,
    rig: CameraRig,
    noise: NoiseModel,
    velocity_mode: str = "finite_difference",
) -> list[MeasurementSet]:
    epochs = [measure_epoch(traj.state(i), world, rig, noise, epoch=i) for i in range(len(traj))]
    if velocity_mode == "finite_difference":
        add_finite_difference_velocities(epochs, traj.dt)
    elif velocity_mode == "exact":
        for i, e in enumerate(epochs):
            add_exact_point_velocities(e, traj.state(i), noise, i)
    elif velocity_mode != "none":
        raise ValueError(f"unknown velocity_mode {velocity_mode!r}")
    return epochs


# --- measurement log -------------------------------------------------------

LOG_FIELDS = ["epoch", "t", "kind", "i", "j", "bx", "by", "bz", "rx", "ry", "rz"]


def write_measurement_log(path, epochs: list[MeasurementSet]) -> None:
    """One row per vector: beacons, vector-matrix columns, point velocities, twist."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)

        def row(n, e, kind, i, j, body, ref):
            w.writerow([n, repr(e.t), kind, i, j, *map(repr, map(float, body)), *map(repr, map(float, ref))])

        for n, e in enumerate(epochs):
            for k, j in enumerate(e.index):
                row(n, e, "beacon", j, j, e.a_m[k], e.p[k])
            for c, (kind, (i, j)) in enumerate(zip(e.kinds, e.pairs)):
                row(n, e, kind, i, j, e.L_m[:, c], e.D[:, c])
            for j, v in sorted(e.v_m.items()):
                row(n, e, "velocity", j, j, v, np.zeros(3))
            if e.twist_m is not None:
                row(n, e, "twist", -1, -1, e.twist_m[:3], e.twist_m[3:])
            if not e.observable:
                row(n, e, "unobservable", -1, -1, np.zeros(3), np.zeros(3))


def read_measurement_log(path) -> list[MeasurementSet]:
    rows_by_epoch: dict[int, list] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows_by_epoch.setdefault(int(r["epoch"]), []).append(r)
    epochs = []
    for n in sorted(rows_by_epoch):
        rows = rows_by_epoch[n]
        vec = lambda r, p: np.array([float(r[p + "x"]), float(r[p + "y"]), float(r[p + "z"])])
        index, a_m, p = [], [], []
        D, L, kinds, pairs, v_m = [], [], [], [], {}
        twist_m, observable, beta = None, True, 0
        for r in rows:
            kind, i, j = r["kind"], int(r["i"]), int(r["j"])
            if kind == "beacon":
                index.append(i)
                a_m.append(vec(r, "b"))
                p.append(vec(r, "r"))
            elif kind in ("pair", "inertial", "cross"):
                L.append(vec(r, "b"))
                D.append(vec(r, "r"))
                kinds.append(kind)
                pairs.append((i, j))
                beta += kind == "inertial"
            elif kind == "velocity":
                v_m[i] = vec(r, "b")
            elif kind == "twist":
                twist_m = np.concatenate([vec(r, "b"), vec(r, "r")])
            elif kind == "unobservable":
                observable = False
            else:
                raise ValueError(f"unknown row kind {kind!r}")
        epochs.append(
            MeasurementSet(
                t=float(rows[0]["t"]),
                index=index,
                a_m=np.array(a_m).reshape(-1, 3),
                p=np.array(p).reshape(-1, 3),
                D=np.array(D).T.reshape(3, -1),
                L_m=np.array(L).T.reshape(3, -1),
                kinds=kinds,
                pairs=pairs,
                beta_count=beta,
                v_m=v_m,
                twist_m=twist_m,
                gyro_m=None if twist_m is None else twist_m[:3].copy(),
                observable=observable,
            )
        )
    return epochs
