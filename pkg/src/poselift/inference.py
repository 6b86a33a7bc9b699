"""Energy assembly and optimal pose selection.

Each pose candidate's energy is the negative sum of its smoothed
heat-map values plus a consistency prior: the lifted 3D pose is
re-projected to 2D and compared, after normalization, with the
candidate itself. The lowest-energy candidate wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BehindCameraError,
    CameraModel,
    DegeneratePoseError,
    grid_to_image,
    normalize_pose,
    project_orthographic,
    project_perspective,
)
from .heatmaps import HeatMapVolume, find_modes_nms, find_modes_volume
from .lifter import INPUT_FULL, LifterModel
from .nbest import n_best_poses

PRIOR_PERSPECTIVE = "perspective"
PRIOR_ORTHOGRAPHIC = "orthographic"
GENERATOR_MEAN_SHIFT = "mean-shift"
GENERATOR_NMS = "nms"


@dataclass(frozen=True)
class InferenceConfig:
    prior_strength: float = 1.0  # weight on the consistency term
    bandwidth: float = 3.0
    num_candidates: int = 128
    prior_mode: str = PRIOR_PERSPECTIVE
    generator: str = GENERATOR_MEAN_SHIFT
    nms_upscale: int = 8

    def __post_init__(self):
        if self.prior_strength < 0:
            raise ValueError("prior strength must be >= 0")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.num_candidates < 1:
            raise ValueError("need at least one candidate")
        if self.prior_mode not in (PRIOR_PERSPECTIVE, PRIOR_ORTHOGRAPHIC):
            raise ValueError(f"unknown prior mode {self.prior_mode!r}")
        if self.generator not in (GENERATOR_MEAN_SHIFT, GENERATOR_NMS):
            raise ValueError(f"unknown candidate generator {self.generator!r}")


@dataclass(frozen=True)
class CandidateResult:
    indices: tuple[int, ...]
    pose_2d: np.ndarray  # original-image pixels
    score: float
    prior: float  # +inf when the prior could not be evaluated
    energy: float

    @property
    def failed(self) -> bool:
        return not np.isfinite(self.prior)


@dataclass(frozen=True)
class InferenceResult:
    pose_2d: np.ndarray
    pose_3d: np.ndarray  # zero-mean, millimeters
    pose_3d_absolute: np.ndarray
    chosen_index: int
    candidates: tuple[CandidateResult, ...]


def prior_perspective(pose_2d, model: LifterModel, camera: CameraModel, strength: float):
    """Consistency term under pinhole re-projection.

    Lifts the pose, shifts by the model's mean position, projects, and
    compares normalized input against normalized re-projection. Returns
    (value, zero_mean_3d). Raises BehindCameraError when the absolute
    lift has a joint at non-positive depth.
    """
    lifted = model.lift(pose_2d)
    reproj = project_perspective(lifted + model.mean_offset, camera)
    x_norm = normalize_pose(pose_2d).joints
    y_norm = normalize_pose(reproj).joints
    value = strength * float(np.sum((x_norm - y_norm) ** 2))
    return value, lifted


def prior_orthographic(pose_2d, model: LifterModel, strength: float):
    """Consistency term with the depth axis dropped; needs no camera."""
    lifted = model.lift(pose_2d)
    reproj = project_orthographic(lifted)
    x_norm = normalize_pose(pose_2d).joints
    y_norm = normalize_pose(reproj).joints
    value = strength * float(np.sum((x_norm - y_norm) ** 2))
    return value, lifted


def extract_candidates(volume: HeatMapVolume, config: InferenceConfig):
    """Per-joint ranked candidates with the configured generator."""
    if config.generator == GENERATOR_MEAN_SHIFT:
        return find_modes_volume(
            volume.maps, config.bandwidth, config.num_candidates
        )
    return [
        find_modes_nms(
            grid,
            config.num_candidates,
            upscale=config.nms_upscale,
            radius=config.bandwidth,
        )
        for grid in volume.maps
    ]

def _evaluate_priors(poses_2d, model, config, camera):
    """Prior value and zero-mean lift per candidate pose; failures get +inf."""
    rows = []
    ok = np.ones(len(poses_2d), dtype=bool)
    for k, pose in enumerate(poses_2d):
        try:
            rows.append(model.build_input(pose))
        except DegeneratePoseError:
            rows.append(np.zeros(model.input_dim))
            ok[k] = False
    lifted = model.lift_batch(np.stack(rows))
    priors = np.empty(len(poses_2d))
    for k, (pose, x3d) in enumerate(zip(poses_2d, lifted)):
        if not ok[k]:
            priors[k] = np.inf
            continue
        try:
            if config.prior_mode == PRIOR_PERSPECTIVE:
                reproj = project_perspective(x3d + model.mean_offset, camera)
            else:
                reproj = project_orthographic(x3d)
            x_norm = normalize_pose(pose).joints
            y_norm = normalize_pose(reproj).joints
            priors[k] = config.prior_strength * float(
                np.sum((x_norm - y_norm) ** 2)
            )
        except (BehindCameraError, DegeneratePoseError):
            priors[k] = np.inf
    return priors, lifted


def infer(
    volume: HeatMapVolume,
    model: LifterModel,
    config: InferenceConfig,
    camera: CameraModel | None = None,
) -> InferenceResult:
    """Full per-frame pipeline: candidates, top-N poses, priors, argmin energy.

    With prior_strength 0 the priors are identically zero and the winner
    is the greedy top-score pose. Candidates whose prior cannot be
    evaluated (implausible lift behind the camera) get +inf energy
    instead of aborting the frame.
    """
    if config.prior_mode == PRIOR_PERSPECTIVE and camera is None:
        raise ValueError("perspective prior requires a camera model")
    if volume.num_joints != model.num_joints:
        raise ValueError(
            f"volume has {volume.num_joints} joints, model expects {model.num_joints}"
        )
    per_joint = extract_candidates(volume, config)
    assignments = n_best_poses([c.values for c in per_joint], config.num_candidates)

    poses_img = []
    for a in assignments:
        grid_pts = np.array(
            [per_joint[i].positions[idx] for i, idx in enumerate(a.indices)]
        )
        poses_img.append(grid_to_image(grid_pts, volume.box, volume.grid_size))

    if config.prior_strength == 0:
        priors = np.zeros(len(assignments))
        lifted = None
    else:
        priors, lifted = _evaluate_priors(poses_img, model, config, camera)

    scores = np.array([a.score for a in assignments])
    energies = -scores + priors
    best = int(np.argmin(energies))  # ties resolve to the lowest k

    if lifted is None:
        best_3d = model.lift(poses_img[best])
    else:
        best_3d = lifted[best]
    candidates = tuple(
        CandidateResult(
            indices=a.indices,
            pose_2d=p,
            score=float(a.score),
            prior=float(v),
            energy=float(e),
        )
        for a, p, v, e in zip(assignments, poses_img, priors, energies)
    )
    return InferenceResult(
        pose_2d=poses_img[best],
        pose_3d=best_3d,
        pose_3d_absolute=best_3d + model.mean_offset,
        chosen_index=best,
        candidates=candidates,
    )
