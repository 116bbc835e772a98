"""Pinhole projection and face-symmetry recovery of an occluded ear.

All geometry runs in the camera frame: right-handed, +z along the optical
axis away from the camera, +x rightward in the image, +y downward.
Positions are metric (meters), double precision throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# A 3-vector in meters; always float64, shape (3,).
Vec3 = np.ndarray

# Below this interocular distance the mirror plane is numerically useless:
# reflection error grows like 1/|eye separation|.
MIN_EYE_SEPARATION = 0.005


class NonPositiveDepth(ValueError):
    """Point or depth at or behind the camera plane."""


class DegenerateEyePair(ValueError):
    """Eye keypoints too close together to define a mirror plane."""


class NonFiniteKeypoint(ValueError):
    """A keypoint coordinate is NaN or infinite."""


def _vec3(p) -> Vec3:
    a = np.asarray(p, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics of the depth camera (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")


class Side(Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class KeypointSet3D:
    """The five facial keypoints: nose, both ears, both eyes.

    ``confidence`` holds one score per point in [0, 1], ordered
    (nose, left ear, right ear, left eye, right eye).
    """

    nose: Vec3
    left_ear: Vec3
    right_ear: Vec3
    left_eye: Vec3
    right_eye: Vec3
    confidence: np.ndarray = None

    def __post_init__(self):
        for name in ("nose", "left_ear", "right_ear", "left_eye", "right_eye"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        conf = self.confidence
        conf = np.ones(5) if conf is None else np.asarray(conf, dtype=float)
        if conf.shape != (5,):
            raise ValueError("confidence must have one entry per keypoint")
        if np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("confidences must lie in [0, 1]")
        object.__setattr__(self, "confidence", conf)

    def points(self) -> np.ndarray:
        """All five keypoints as a (5, 3) array, nose first."""
        return np.stack(
            [self.nose, self.left_ear, self.right_ear, self.left_eye, self.right_eye]
        )


@dataclass(frozen=True)
class Plane:
    """Mirror plane: a point on it plus a unit normal."""

    point: Vec3
    normal: Vec3

    def __post_init__(self):
        object.__setattr__(self, "point", _vec3(self.point))
        n = _vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)

    def signed_distance(self, p) -> float:
        return float(np.dot(_vec3(p) - self.point, self.normal))


@dataclass(frozen=True)
class OcclusionDecision:
    """Which ear was kept, and the nose distances that decided it."""

    l_nose_left: float
    l_nose_right: float
    trusted_side: Side


@dataclass(frozen=True)
class EarEstimate:
    """Recovered binaural positions; the trusted side passes through unchanged."""

    left: Vec3
    right: Vec3
    decision: OcclusionDecision


def project(p, cam: CameraModel) -> tuple[np.ndarray, float]:
    """Project a camera-frame point to continuous pixel coordinates.

    Returns ``(pixel, depth)`` with ``pixel = (u, v)`` and ``depth = z``.
    Raises NonPositiveDepth for points at or behind the camera.
    """
    p = _vec3(p)
    if p[2] <= 0:
        raise NonPositiveDepth(f"point depth {p[2]:.4f} m is not positive")
    u = cam.fx * p[0] / p[2] + cam.cx
    v = cam.fy * p[1] / p[2] + cam.cy
    return np.array([u, v]), float(p[2])


def deproject(pixel, depth: float, cam: CameraModel) -> Vec3:
    """Back-project a pixel at a known depth; exact inverse of :func:`project`."""
    if depth <= 0:
        raise NonPositiveDepth(f"depth {depth:.4f} m is not positive")
    u, v = np.asarray(pixel, dtype=float)
    x = (u - cam.cx) * depth / cam.fx
    y = (v - cam.cy) * depth / cam.fy
    return np.array([x, y, depth])


def bisector_plane(a, b) -> Plane:
    """Perpendicular bisector plane of two points (the eye pair).

    The plane passes through the midpoint with its normal along ``b - a``.
    Raises DegenerateEyePair when the points are closer than
    MIN_EYE_SEPARATION.
    """
    a, b = _vec3(a), _vec3(b)
    d = b - a
    norm = np.linalg.norm(d)
    if norm <= MIN_EYE_SEPARATION:
        raise DegenerateEyePair(
            f"eye separation {norm * 1e3:.2f} mm below {MIN_EYE_SEPARATION * 1e3:.0f} mm"
        )
    return Plane(point=(a + b) / 2.0, normal=d / norm)


def reflect(p, plane: Plane) -> Vec3:
    """Mirror a point across a plane."""
    p = _vec3(p)
    return p - 2.0 * plane.signed_distance(p) * plane.normal


def infer_true_ears(kp: KeypointSet3D) -> EarEstimate:
    """Recover both real ear positions from five facial keypoints.

    The ear farther from the nose is the directly observed one; the other
    lies in the camera's shadow and its reported position is unreliable.
    The trusted ear is kept as-is and the occluded one is reconstructed as
    its mirror image across the perpendicular bisector plane of the eyes.

    Ties (equal nose distances) trust the left ear. Raises
    NonFiniteKeypoint or DegenerateEyePair on bad input.
    """
    if not np.all(np.isfinite(kp.points())):
        raise NonFiniteKeypoint("keypoint coordinates must be finite")

    plane = bisector_plane(kp.left_eye, kp.right_eye)
    l_left = float(np.linalg.norm(kp.left_ear - kp.nose))
    l_right = float(np.linalg.norm(kp.right_ear - kp.nose))

    if l_left >= l_right:
        left = kp.left_ear
        right = reflect(left, plane)
        side = Side.LEFT
    else:
        right = kp.right_ear
        left = reflect(right, plane)
        side = Side.RIGHT

    decision = OcclusionDecision(
        l_nose_left=l_left, l_nose_right=l_right, trusted_side=side
    )
    return EarEstimate(left=left, right=right, decision=decision)
