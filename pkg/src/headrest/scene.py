"""Synthetic rigid head, pose grids, and the camera observation model.

The stage (world) frame is right-handed with X lateral, Y pointing away
from the camera, and Z vertical up. The camera sits at
``(0, -camera_distance, 0)`` looking along +Y, so the stage origin is
straight ahead of it. :func:`world_to_camera` / :func:`camera_to_world`
convert between this frame and the geometry kernel's camera frame.

The head-local frame has +x toward the head's left ear, +y up, and +z out
of the face; at zero yaw the face points at the camera. Positive yaw turns
the head toward its own right, which swings the right ear away from the
camera.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import CameraModel, KeypointSet3D, Vec3, deproject, project

DEFAULT_CAMERA_DISTANCE = 0.8

DEFAULT_CAMERA = CameraModel(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)

# Head-local axes expressed in the stage frame at zero yaw:
# left ear -> +X, up -> +Z, face -> -Y (toward the camera).
_R_BASE = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


class OutOfFrustum(ValueError):
    """A keypoint projected outside the sensor rectangle."""


@dataclass(frozen=True)
class HeadGeometry:
    """Rigid five-keypoint head in its local frame, mirror-symmetric in x.

    ``skull_radius`` is the radius of the sphere used to model the face
    silhouette that hides the far ear under rotation.
    """

    nose: Vec3
    left_ear: Vec3
    right_ear: Vec3
    left_eye: Vec3
    right_eye: Vec3
    skull_radius: float

    def __post_init__(self):
        mirror = np.array([-1.0, 1.0, 1.0])
        for left, right in ((self.left_ear, self.right_ear), (self.left_eye, self.right_eye)):
            if not np.allclose(np.asarray(left) * mirror, right, atol=1e-12):
                raise ValueError("left/right keypoints must mirror across x=0")
        if abs(self.nose[0]) > 1e-12:
            raise ValueError("nose must lie on the symmetry plane")
        for ear in (self.left_ear, self.right_ear):
            if np.linalg.norm(ear) > self.skull_radius + 1e-12:
                raise ValueError("ears must lie on or within the skull sphere")

    def local_points(self) -> np.ndarray:
        return np.stack([self.nose, self.left_ear, self.right_ear, self.left_eye, self.right_eye])


def canonical_head() -> HeadGeometry:
    """Anthropometric-plausible default head used across experiments."""
    return HeadGeometry(
        nose=np.array([0.0, 0.02, 0.10]),
        left_ear=np.array([0.075, 0.0, 0.0]),
        right_ear=np.array([-0.075, 0.0, 0.0]),
        left_eye=np.array([0.032, 0.045, 0.075]),
        right_eye=np.array([-0.032, 0.045, 0.075]),
        skull_radius=0.095,
    )


@dataclass(frozen=True)
class HeadPose:
    """Head-center translation (stage frame) plus yaw; positive yaw turns right."""

    center: Vec3
    yaw: float = 0.0

    def __post_init__(self):
        if abs(self.yaw) > np.pi:
            raise ValueError("yaw must lie in [-pi, pi]")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned evaluation grid centered on ``origin``."""

    origin: Vec3
    spacing: float
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("node counts must be >= 1")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def num_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    def node(self, i: int, j: int, k: int) -> Vec3:
        offsets = np.array(
            [
                (i - (self.nx - 1) / 2.0),
                (j - (self.ny - 1) / 2.0),
                (k - (self.nz - 1) / 2.0),
            ]
        )
        return self.origin + self.spacing * offsets

    def indices(self):
        """Row-major node indices: i outermost, then j, then k."""
        for i in range(self.nx):
            for j in range(self.ny):
                for k in range(self.nz):
                    yield (i, j, k)

    def linear_index(self, i: int, j: int, k: int) -> int:
        return (i * self.ny + j) * self.nz + k

    def node_positions(self) -> np.ndarray:
        """All node positions as a (num_nodes, 3) array in row-major order."""
        return np.stack([self.node(*ijk) for ijk in self.indices()])


@dataclass(frozen=True)
class ObservationModel:
    """Keypoint measurement noise and occlusion onset."""

    pixel_noise_sigma: float = 1.0
    depth_noise_sigma_at_1m: float = 0.002
    occlusion_yaw_threshold: float = np.deg2rad(25.0)
    seed: int = 0

    def __post_init__(self):
        if self.pixel_noise_sigma < 0 or self.depth_noise_sigma_at_1m < 0:
            raise ValueError("noise sigmas must be nonnegative")
        if not 0 < self.occlusion_yaw_threshold < np.pi / 2:
            raise ValueError("occlusion threshold must lie in (0, pi/2)")

    def with_seed(self, seed: int) -> "ObservationModel":
        return replace(self, seed=seed)


def derive_seed(*entropy) -> int:
    """Stable 64-bit seed from a tuple of integers (schedule-independent)."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0])


def world_to_camera(p, camera_distance: float = DEFAULT_CAMERA_DISTANCE) -> Vec3:
    p = np.asarray(p, dtype=float)
    return np.array([p[0], -p[2], p[1] + camera_distance])


def camera_to_world(p, camera_distance: float = DEFAULT_CAMERA_DISTANCE) -> Vec3:
    p = np.asarray(p, dtype=float)
    return np.array([p[0], p[2] - camera_distance, -p[1]])


def head_rotation(yaw: float) -> np.ndarray:
    """Local-to-stage rotation for a given yaw (about the vertical axis)."""
    c, s = np.cos(yaw), np.sin(yaw)
    r_yaw = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    return r_yaw @ _R_BASE


def true_keypoints(geom: HeadGeometry, pose: HeadPose) -> KeypointSet3D:
    """Ground-truth keypoints in the stage frame for a rigid pose."""
    r = head_rotation(pose.yaw)
    pts = geom.local_points() @ r.T + pose.center
    return KeypointSet3D(*pts)


def grid_sweep(grid: GridSpec, yaw: float = 0.0) -> list[HeadPose]:
    """Row-major sequence of head poses over the grid at a fixed yaw."""
    return [HeadPose(center=grid.node(*ijk), yaw=yaw) for ijk in grid.indices()]


def _silhouette_proxy(pixel, sphere_center_cam: Vec3, radius: float, cam: CameraModel) -> Vec3:
    """First intersection of the pixel's view ray with the skull sphere.

    This is where a structured-light depth lookup lands when the true
    keypoint sits in the head's shadow: on the near face silhouette. If
    noise pushes the ray off the sphere, the closest-approach point on the
    ray is used instead (grazing incidence).
    """
    direction = deproject(pixel, 1.0, cam)
    direction = direction / np.linalg.norm(direction)
    b = float(np.dot(direction, sphere_center_cam))
    disc = b * b - (float(np.dot(sphere_center_cam, sphere_center_cam)) - radius * radius)
    t = b - np.sqrt(disc) if disc >= 0 else b
    return t * direction


def observe(
    geom: HeadGeometry,
    pose: HeadPose,
    cam: CameraModel = DEFAULT_CAMERA,
    obs: ObservationModel = ObservationModel(),
    camera_distance: float = DEFAULT_CAMERA_DISTANCE,
) -> KeypointSet3D:
    """Simulate one camera measurement of the five keypoints.

    Each true keypoint is projected, perturbed by pixel and depth noise
    (depth sigma scales with depth squared), and de-projected; the result
    is in the *camera* frame. Beyond the occlusion yaw threshold the far
    ear is replaced by its face-silhouette proxy, which lands nearer the
    nose than the real ear. Deterministic for a fixed ``obs.seed``.

    Raises OutOfFrustum if any measured pixel leaves the sensor rectangle.
    """
    rng = np.random.default_rng(obs.seed)
    truth = true_keypoints(geom, pose).points()
    pixel_noise = rng.normal(0.0, obs.pixel_noise_sigma, size=(5, 2))
    depth_noise = rng.standard_normal(5)

    observed = []
    pixels = []
    for idx in range(5):
        p_cam = world_to_camera(truth[idx], camera_distance)
        pixel, depth = project(p_cam, cam)
        pixel = pixel + pixel_noise[idx]
        if not (0 <= pixel[0] <= cam.width and 0 <= pixel[1] <= cam.height):
            raise OutOfFrustum(f"keypoint {idx} at pixel ({pixel[0]:.1f}, {pixel[1]:.1f})")
        depth = depth + depth_noise[idx] * obs.depth_noise_sigma_at_1m * depth * depth
        pixels.append(pixel)
        observed.append(deproject(pixel, depth, cam))

    if abs(pose.yaw) > obs.occlusion_yaw_threshold:
        far = 2 if pose.yaw > 0 else 1  # rightward yaw hides the right ear
        center_cam = world_to_camera(pose.center, camera_distance)
        observed[far] = _silhouette_proxy(pixels[far], center_cam, geom.skull_radius, cam)

    return KeypointSet3D(*observed)
