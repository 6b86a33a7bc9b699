"""Pose containers, camera projection, and evaluation metrics.

2D poses are (M, 2) float arrays in image pixels, 3D poses are (M, 3)
float arrays in millimeters in the camera coordinate system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGENERATE_TOL = 1e-12


class DegeneratePoseError(ValueError):
    """All joints coincide (or nearly so); the pose cannot be normalized."""


class BehindCameraError(ValueError):
    """A 3D joint has non-positive depth and cannot be projected."""


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class BoundingBox:
    """Square crop box in original-image pixels."""

    origin_x: float
    origin_y: float
    side: float

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError("box side must be positive")


@dataclass(frozen=True)
class NormalizedPose2D:
    """Zero-mean, unit-RMS 2D pose plus the mean/scale that recover it."""

    joints: np.ndarray  # (M, 2), dimensionless
    mean: np.ndarray  # (2,), pixels
    scale: float  # pixels, > 0

    def denormalize(self) -> np.ndarray:
        return self.joints * self.scale + self.mean


def as_pose2d(joints) -> np.ndarray:
    pose = np.asarray(joints, dtype=np.float64)
    if pose.ndim != 2 or pose.shape[1] != 2:
        raise ValueError(f"expected (M, 2) array, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ValueError("2D pose contains non-finite coordinates")
    return pose


def as_pose3d(joints) -> np.ndarray:
    pose = np.asarray(joints, dtype=np.float64)
    if pose.ndim != 2 or pose.shape[1] != 3:
        raise ValueError(f"expected (M, 3) array, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ValueError("3D pose contains non-finite coordinates")
    return pose


def normalize_pose(pose) -> NormalizedPose2D:
    """Shift to zero mean and divide by the RMS joint distance from the mean.

    Raises DegeneratePoseError when all joints coincide.
    """
    pose = as_pose2d(pose)
    if len(pose) < 2:
        raise ValueError("need at least 2 joints to normalize")
    mean = pose.mean(axis=0)
    centered = pose - mean
    scale = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
    if scale <= DEGENERATE_TOL:
        raise DegeneratePoseError("all joints coincide; scale is zero")
    return NormalizedPose2D(joints=centered / scale, mean=mean, scale=scale)


def project_perspective(pose, camera: CameraModel) -> np.ndarray:
    """Pinhole projection u = fx*X/Z + cx, v = fy*Y/Z + cy.

    Raises BehindCameraError when any joint has Z <= 0.
    """
    pose = as_pose3d(pose)
    z = pose[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("joint with non-positive depth")
    u = camera.fx * pose[:, 0] / z + camera.cx
    v = camera.fy * pose[:, 1] / z + camera.cy
    return np.stack([u, v], axis=1)


def project_orthographic(pose) -> np.ndarray:
    """Drop the depth coordinate: (X, Y, Z) -> (X, Y)."""
    pose = as_pose3d(pose)
    return pose[:, :2].copy()


def mpjpe(gt, est, root_index: int = 0) -> float:
    """Root-relative mean per-joint position error in millimeters."""
    gt = as_pose3d(gt)
    est = as_pose3d(est)
    if gt.shape != est.shape:
        raise ValueError("pose shapes differ")
    if not 0 <= root_index < len(gt):
        raise ValueError("root index out of range")
    d = (gt - gt[root_index]) - (est - est[root_index])
    return float(np.mean(np.linalg.norm(d, axis=1)))


def procrustes_align(gt, est):
    """Similarity transform (s, R, t) minimizing ||gt - (s*est@R.T + t)||^2.

    Reflections are excluded via the determinant sign correction.
    Returns the aligned copy of est.
    """
    gt = as_pose3d(gt)
    est = as_pose3d(est)
    if gt.shape != est.shape or len(gt) < 3:
        raise ValueError("need matching point sets with at least 3 points")
    mu_gt = gt.mean(axis=0)
    mu_est = est.mean(axis=0)
    a = gt - mu_gt
    b = est - mu_est
    var_b = np.sum(b**2)
    if var_b <= DEGENERATE_TOL or np.sum(a**2) <= DEGENERATE_TOL:
        raise DegeneratePoseError("zero-variance point set in alignment")
    u, s, vt = np.linalg.svd(a.T @ b)
    d = np.ones(3)
    d[-1] = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag(d) @ vt
    scale = np.sum(s * d) / var_b
    return scale * b @ rot.T + mu_gt


def procrustes_error(gt, est) -> float:
    """Mean per-joint distance after optimal similarity alignment (mm)."""
    gt = as_pose3d(gt)
    aligned = procrustes_align(gt, est)
    return float(np.mean(np.linalg.norm(gt - aligned, axis=1)))


def error_2d(gt, est) -> float:
    """Mean per-joint Euclidean distance in pixels (256x256 crop frame)."""
    gt = as_pose2d(gt)
    est = as_pose2d(est)
    if gt.shape != est.shape:
        raise ValueError("pose shapes differ")
    return float(np.mean(np.linalg.norm(gt - est, axis=1)))


def grid_to_image(points, box: BoundingBox, grid_size: int):
    """Map heat-map grid coordinates to original-image pixels.

    Pixel-center convention: grid coordinate p covers the image span
    [origin + p*cell, origin + (p+1)*cell] and maps to its center.
    """
    if grid_size <= 0:
        raise ValueError("grid size must be positive")
    points = np.asarray(points, dtype=np.float64)
    cell = box.side / grid_size
    origin = np.array([box.origin_x, box.origin_y])
    return origin + (points + 0.5) * cell


def image_to_grid(points, box: BoundingBox, grid_size: int):
    """Inverse of grid_to_image."""
    if grid_size <= 0:
        raise ValueError("grid size must be positive")
    points = np.asarray(points, dtype=np.float64)
    cell = box.side / grid_size
    origin = np.array([box.origin_x, box.origin_y])
    return (points - origin) / cell - 0.5


def image_to_crop(points, box: BoundingBox, crop_size: int = 256):
    """Map original-image pixels into the resized square crop frame."""
    points = np.asarray(points, dtype=np.float64)
    origin = np.array([box.origin_x, box.origin_y])
    return (points - origin) * (crop_size / box.side)
