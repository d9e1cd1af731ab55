"""Synthetic FMCW LiDAR.

Scenes are sets of planar rectangles in the inertial frame, some of them
attached to actors moving at constant velocity.  A scan casts one ray per
cell of a uniform azimuth/elevation raster from the LiDAR pose and reports,
for every hit, the point in the LiDAR frame and its radial velocity relative
to the sensor (receding is positive).  The whole scan is taken at a single
instant.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .cloud import DopplerPointCloud
from .objectives import Calibration
from .se3 import RigidTransform, pseudo_log, rot_z

# Chord sagitta bound used when tessellating curved walls.
MAX_SAGITTA_M = 0.01


@dataclass(frozen=True)
class ScanPattern:
    n_azimuth: int = 180
    n_elevation: int = 32
    fov_azimuth_deg: float = 120.0
    fov_elevation_deg: float = 30.0
    max_range_m: float = 300.0

    def __post_init__(self):
        if self.n_azimuth < 1 or self.n_elevation < 1:
            raise ValueError("scan pattern needs at least one azimuth and one elevation")
        for fov in (self.fov_azimuth_deg, self.fov_elevation_deg):
            if not 0.0 < fov < 180.0:
                raise ValueError("field of view must lie in (0, 180) degrees")
        if not self.max_range_m > 0:
            raise ValueError("max_range_m must be positive")

    def directions(self) -> np.ndarray:
        """Unit rays in the LiDAR frame, elevation-major, cell centres."""
        az = np.radians(self.fov_azimuth_deg) * ((np.arange(self.n_azimuth) + 0.5) / self.n_azimuth - 0.5)
        el = np.radians(self.fov_elevation_deg) * ((np.arange(self.n_elevation) + 0.5) / self.n_elevation - 0.5)
        E, A = np.meshgrid(el, az, indexing="ij")
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
        return d.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class Rectangle:
    """Parallelogram ``corner + a*edge1 + b*edge2`` with ``a, b`` in ``[0, 1]``."""

    corner: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray

    def __post_init__(self):
        for name in ("corner", "edge1", "edge2"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(3))
        if np.linalg.norm(np.cross(self.edge1, self.edge2)) <= 1e-12:
            raise ValueError("rectangle edges must be linearly independent")


@dataclass(eq=False)
class Actor:
    surfaces: list[Rectangle]
    velocity: np.ndarray

    def __post_init__(self):
        self.velocity = np.array(self.velocity, dtype=float).reshape(3)


@dataclass(eq=False)
class Scene:
    static_surfaces: list[Rectangle] = field(default_factory=list)
    actors: list[Actor] = field(default_factory=list)

    def surfaces_at(self, time_s: float):
        """Flattened rectangles at ``time_s`` plus per-rectangle velocity and actor id.

        Static rectangles come first (actor id ``-1``), then each actor's
        rectangles shifted by ``velocity * time_s``.
        """
        rects, vel, owner = [], [], []
        for r in self.static_surfaces:
            rects.append((r.corner, r.edge1, r.edge2))
            vel.append(np.zeros(3))
            owner.append(-1)
        for a_id, actor in enumerate(self.actors):
            for r in actor.surfaces:
                rects.append((r.corner + actor.velocity * time_s, r.edge1, r.edge2))
                vel.append(actor.velocity)
                owner.append(a_id)
        return rects, np.array(vel).reshape(-1, 3), np.array(owner, dtype=np.int64)


def _compile(rects):
    if not rects:
        z = np.zeros((0, 3))
        return z, z, z, z
    C = np.array([r[0] for r in rects])
    E1 = np.array([r[1] for r in rects])
    E2 = np.array([r[2] for r in rects])
    N = np.cross(E1, E2)
    # Dual basis so that (x - corner) . dual_i recovers the edge coordinates.
    g11 = np.einsum("ki,ki->k", E1, E1)
    g12 = np.einsum("ki,ki->k", E1, E2)
    g22 = np.einsum("ki,ki->k", E2, E2)
    det = g11 * g22 - g12 * g12
    D1 = (g22[:, None] * E1 - g12[:, None] * E2) / det[:, None]
    D2 = (g11[:, None] * E2 - g12[:, None] * E1) / det[:, None]
    return C, N, D1, D2


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    surface_id: int
    actor_velocity: np.ndarray
    range_m: float


def raycast_many(scene: Scene, origin, dirs, max_range: float, time_s: float = 0.0):
    """Vectorised nearest hit; returns ``(t, surface_ids, velocities)``."""
    rects, vel, _ = scene.surfaces_at(time_s)
    C, N, D1, D2 = _compile(rects)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    if len(C) == 0:
        return np.full(len(dirs), np.inf), np.full(len(dirs), -1, dtype=np.int64), np.zeros((len(dirs), 3))
    t, ids = _kernels.raycast(origin, dirs, C, N, D1, D2, max_range)
    v = np.where((ids >= 0)[:, None], vel[np.maximum(ids, 0)], 0.0)
    return t, ids, v


def raycast(scene: Scene, origin, direction, max_range: float, time_s: float = 0.0) -> RayHit | None:
    d = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("ray direction must be a unit vector")
    o = np.asarray(origin, dtype=float).reshape(3)
    t, ids, v = raycast_many(scene, o, d[None], max_range, time_s)
    if ids[0] < 0:
        return None
    return RayHit(o + t[0] * d, int(ids[0]), v[0], float(t[0]))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

class TrajectoryKind(str, enum.Enum):
    STRAIGHT = "straight"
    ARC = "arc"


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """Vehicle state; velocities are expressed in the vehicle frame."""

    time_s: float
    pose: RigidTransform
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray


def make_trajectory(kind, speed_mps: float, duration_s: float, rate_hz: float = 10.0,
                    arc_radius_m: float | None = None) -> list[TrajectorySample]:
    """Constant-speed run starting at the origin heading along +x.

    ``Arc`` turns left on a circle of radius ``arc_radius_m`` centred at
    ``(0, R, 0)``.  Poses and velocities are evaluated analytically.
    """
    kind = TrajectoryKind(kind)
    if not rate_hz > 0:
        raise ValueError("rate_hz must be positive")
    if duration_s < 0:
        raise ValueError("duration_s must be non-negative")
    n = int(round(duration_s * rate_hz)) + 1
    v_body = np.array([speed_mps, 0.0, 0.0])
    out = []
    if kind is TrajectoryKind.ARC:
        if arc_radius_m is None or not arc_radius_m > 0:
            raise ValueError("Arc trajectories need a positive arc_radius_m")
        R = float(arc_radius_m)
        w = np.array([0.0, 0.0, speed_mps / R])
    for i in range(n):
        t = i / rate_hz
        if kind is TrajectoryKind.STRAIGHT:
            pose = RigidTransform(np.eye(3), [speed_mps * t, 0.0, 0.0])
            out.append(TrajectorySample(t, pose, v_body.copy(), np.zeros(3)))
        else:
            psi = speed_mps * t / R
            pose = RigidTransform(rot_z(psi), [R * math.sin(psi), R * (1.0 - math.cos(psi)), 0.0])
            out.append(TrajectorySample(t, pose, v_body.copy(), w.copy()))
    return out


def relative_motion(samples) -> list[RigidTransform]:
    """Ground-truth ``T_TS`` (source = earlier scan) for each consecutive pair."""
    return [b.pose.inverse() @ a.pose for a, b in zip(samples[:-1], samples[1:])]


def velocity_state(sample: TrajectorySample, dt: float) -> np.ndarray:
    """State ``[-w dt, -v dt]`` for which the Doppler model is exact at ``sample``."""
    return -dt * np.concatenate([sample.angular_velocity, sample.linear_velocity])


def trajectory_state(a: TrajectorySample, b: TrajectorySample) -> np.ndarray:
    return pseudo_log(b.pose.inverse() @ a.pose)


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

class SceneKind(str, enum.Enum):
    STRAIGHT_WALLS = "straight_walls"
    CURVED_WALLS = "curved_walls"
    FEATURE_RICH = "feature_rich"
    WITH_ACTOR = "with_actor"


def _straight_walls(width, length, x_start, wall_height, ground_z):
    h = width / 2.0
    zb = ground_z if ground_z is not None else -wall_height / 2.0
    walls = [
        Rectangle([x_start, h, zb], [length, 0, 0], [0, 0, wall_height]),
        Rectangle([x_start, -h, zb], [length, 0, 0], [0, 0, wall_height]),
    ]
    if ground_z is not None:
        walls.append(Rectangle([x_start, -h, ground_z], [length, 0, 0], [0, width, 0]))
    return walls


def chord_count(radius_m: float, max_sagitta_m: float = MAX_SAGITTA_M, minimum: int = 72) -> int:
    """Chords per full circle so that each chord's sagitta stays below the bound."""
    if max_sagitta_m >= radius_m:
        return minimum
    half = math.acos(1.0 - max_sagitta_m / radius_m)
    return max(minimum, math.ceil(math.pi / half))


def _arc_wall(center, radius, phi0, phi1, z0, height):
    n_full = chord_count(radius)
    n = max(1, math.ceil((phi1 - phi0) / (2 * math.pi) * n_full))
    phis = np.linspace(phi0, phi1, n + 1)
    pts = center + radius * np.stack([np.sin(phis), -np.cos(phis), np.zeros_like(phis)], axis=1)
    pts[:, 2] = z0
    up = np.array([0.0, 0.0, height])
    return [Rectangle(pts[i], pts[i + 1] - pts[i], up) for i in range(n)]


def make_scene(kind, *, width_m: float = 8.0, length_m: float = 600.0, x_start_m: float = -20.0,
               wall_height_m: float = 6.0, ground_z_m: float | None = -1.8,
               arc_radius_m: float = 100.0, arc_start_deg: float = -10.0, arc_span_deg: float = 150.0,
               panel_spacing_m: float = 3.0, panel_depth_m: float = 0.5, panel_height_m: float = 3.0,
               actor_distance_m: float = 8.3, actor_width_m: float = 6.0, actor_height_m: float = 5.0,
               actor_velocity=(5.0, 0.0, 0.0), base=None) -> Scene:
    """Parametric test scenes.

    ``StraightWalls`` and ``CurvedWalls`` are smooth corridors (walls plus a
    ground plane unless ``ground_z_m`` is ``None``) that leave travel along
    the corridor unobservable to geometric matching.  ``FeatureRich`` adds
    panels perpendicular to the walls.  ``WithActor`` puts a moving slab of
    the given size ahead of the sensor on top of ``base`` (``FeatureRich`` by
    default).
    """
    kind = SceneKind(kind)
    if kind is SceneKind.STRAIGHT_WALLS:
        return Scene(_straight_walls(width_m, length_m, x_start_m, wall_height_m, ground_z_m))
    if kind is SceneKind.CURVED_WALLS:
        center = np.array([0.0, arc_radius_m, 0.0])
        phi0 = math.radians(arc_start_deg)
        phi1 = phi0 + math.radians(arc_span_deg)
        zb = ground_z_m if ground_z_m is not None else -wall_height_m / 2.0
        surfaces = _arc_wall(center, arc_radius_m - width_m / 2.0, phi0, phi1, zb, wall_height_m)
        surfaces += _arc_wall(center, arc_radius_m + width_m / 2.0, phi0, phi1, zb, wall_height_m)
        if ground_z_m is not None:
            r = arc_radius_m + width_m
            surfaces.append(Rectangle([-r, arc_radius_m - r, ground_z_m], [2 * r, 0, 0], [0, 2 * r, 0]))
        return Scene(surfaces)
    if kind is SceneKind.FEATURE_RICH:
        scene = make_scene(SceneKind.STRAIGHT_WALLS, width_m=width_m, length_m=length_m, x_start_m=x_start_m,
                           wall_height_m=wall_height_m, ground_z_m=ground_z_m)
        h = width_m / 2.0
        zb = ground_z_m if ground_z_m is not None else -wall_height_m / 2.0
        x = x_start_m + panel_spacing_m
        side = 1.0
        while x < x_start_m + length_m:
            scene.static_surfaces.append(
                Rectangle([x, side * h, zb], [0, -side * panel_depth_m, 0], [0, 0, panel_height_m]))
            x += panel_spacing_m
            side = -side
        return scene
    # WITH_ACTOR
    scene = base if base is not None else make_scene(
        SceneKind.FEATURE_RICH, width_m=width_m, length_m=length_m, x_start_m=x_start_m,
        wall_height_m=wall_height_m, ground_z_m=ground_z_m, panel_spacing_m=panel_spacing_m,
        panel_depth_m=panel_depth_m, panel_height_m=panel_height_m)
    zb = ground_z_m if ground_z_m is not None else -actor_height_m / 2.0
    slab = Rectangle([actor_distance_m, -actor_width_m / 2.0, zb], [0, actor_width_m, 0], [0, 0, actor_height_m])
    return Scene(list(scene.static_surfaces), list(scene.actors) + [Actor([slab], actor_velocity)])


# ---------------------------------------------------------------------------
# measurement synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    range_sigma_m: float = 0.02
    doppler_sigma_mps: float = 0.03
    rng_seed: int = 0

    def __post_init__(self):
        if self.range_sigma_m < 0 or self.doppler_sigma_mps < 0:
            raise ValueError("noise sigmas must be non-negative")


NOISELESS = NoiseSpec(0.0, 0.0, 0)


def lidar_pose(sample: TrajectorySample, calib: Calibration) -> RigidTransform:
    return sample.pose @ RigidTransform(calib.R_VL, calib.t_VL)


def doppler_truth(hit_point_L, actor_velocity_I, sample: TrajectorySample, calib: Calibration):
    """Radial velocity of a hit point relative to the LiDAR.

    Computed from inertial-frame velocities: the LiDAR moves with
    ``R_IV (v_V + w x t_VL)``, the point with its actor's velocity.
    """
    p = np.atleast_2d(np.asarray(hit_point_L, dtype=float))
    r = np.linalg.norm(p, axis=1)
    if np.any(r <= 0):
        raise ValueError("zero-range hit")
    R_IV = sample.pose.rotation
    v_lidar_I = R_IV @ (sample.linear_velocity + np.cross(sample.angular_velocity, calib.t_VL))
    d_I = (p / r[:, None]) @ (R_IV @ calib.R_VL).T
    v_rel = np.atleast_2d(np.asarray(actor_velocity_I, dtype=float)) - v_lidar_I
    out = np.einsum("ni,ni->n", d_I, np.broadcast_to(v_rel, d_I.shape))
    return float(out[0]) if np.ndim(hit_point_L) == 1 else out


def simulate_scan(scene: Scene, sample: TrajectorySample, pattern: ScanPattern = ScanPattern(),
                  noise: NoiseSpec = NoiseSpec(), calib: Calibration | None = None, *,
                  stream: int = 0, period_s: float = 0.1, return_labels: bool = False):
    """One scan at ``sample``; points and Doppler in the LiDAR frame.

    Noise is drawn for every ray from ``default_rng([rng_seed, stream])`` so a
    scan is reproducible regardless of which rays hit.  With
    ``return_labels`` the actor id of every point (``-1`` for static) is
    returned alongside the cloud.
    """
    calib = calib or Calibration()
    dirs_L = pattern.directions()
    T_IL = lidar_pose(sample, calib)
    dirs_I = T_IL.rotate(dirs_L)
    t, ids, vel = raycast_many(scene, T_IL.translation, dirs_I, pattern.max_range_m, sample.time_s)
    rng = np.random.default_rng([noise.rng_seed, stream])
    range_noise = rng.standard_normal(len(dirs_L)) * noise.range_sigma_m
    doppler_noise = rng.standard_normal(len(dirs_L)) * noise.doppler_sigma_mps
    hit = ids >= 0
    exact = t[hit, None] * dirs_L[hit]
    doppler = doppler_truth(exact, vel[hit], sample, calib) + doppler_noise[hit]
    positions = (t[hit] + range_noise[hit])[:, None] * dirs_L[hit]
    cloud = DopplerPointCloud(positions, doppler if len(positions) else np.zeros(0),
                              period_s=period_s, frame_id="lidar", timestamp_s=sample.time_s)
    if return_labels:
        _, _, owner = scene.surfaces_at(sample.time_s)
        return cloud, owner[ids[hit]] if len(owner) else np.zeros(0, dtype=np.int64)
    return cloud


def simulate_sequence(scene: Scene, samples, pattern: ScanPattern = ScanPattern(),
                      noise: NoiseSpec = NoiseSpec(), calib: Calibration | None = None,
                      return_labels: bool = False):
    """Scans along a sampled trajectory; scan ``i`` uses noise stream ``i``."""
    if len(samples) > 1:
        period = samples[1].time_s - samples[0].time_s
    else:
        period = 0.1
    scans = [simulate_scan(scene, s, pattern, noise, calib, stream=i, period_s=period, return_labels=return_labels)
             for i, s in enumerate(samples)]
    if return_labels:
        return [c for c, _ in scans], [lab for _, lab in scans]
    return scans
