"""Synthetic data generation and the evaluation harness.

Stands in for motion-capture datasets: articulated poses are sampled by
forward kinematics, projected through a virtual pinhole camera, and
rendered as ground-truth heat maps with optional distractor corruption.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    BoundingBox,
    CameraModel,
    error_2d,
    image_to_crop,
    image_to_grid,
    mpjpe,
    procrustes_error,
    project_perspective,
)
from .heatmaps import HeatMapVolume, render_gaussian
from .inference import InferenceConfig, infer
from .lifter import LifterModel, LifterTrainConfig, train_lifter


@dataclass(frozen=True)
class SkeletonSpec:
    """Kinematic tree with fixed bone lengths and per-joint angle ranges."""

    parents: tuple[int, ...]  # -1 for the root
    bone_lengths: np.ndarray  # (M,) mm, 0 for the root
    rest_directions: np.ndarray  # (M, 3) unit offsets from the parent
    angle_ranges: np.ndarray  # (M, 3) Euler half-range per axis, radians
    angle_centers: np.ndarray  # (M, 3) Euler range center per axis, radians

    def __post_init__(self):
        m = len(self.parents)
        if self.parents[0] != -1 or any(
            not 0 <= p < i for i, p in enumerate(self.parents[1:], 1)
        ):
            raise ValueError("parents must form a tree in topological order")
        if np.any(np.asarray(self.bone_lengths)[1:] <= 0):
            raise ValueError("bone lengths must be positive")
        if np.asarray(self.rest_directions).shape != (m, 3):
            raise ValueError("rest_directions must be (M, 3)")
        if (
            np.asarray(self.angle_ranges).shape != (m, 3)
            or np.asarray(self.angle_centers).shape != (m, 3)
        ):
            raise ValueError("angle_ranges and angle_centers must be (M, 3)")

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def mean_bone_length(self) -> float:
        return float(np.mean(np.asarray(self.bone_lengths)[1:]))


@dataclass(frozen=True)
class CorruptionSpec:
    """Distractor bumps and noise injected into rendered heat maps."""

    distractor_prob: float = 0.0  # per joint
    offset_min: float = 6.0  # grid pixels
    offset_max: float = 12.0
    strength: float = 1.1  # distractor peak relative to the true peak
    noise_floor: float = 0.0  # uniform noise amplitude

    def __post_init__(self):
        if not 0 <= self.distractor_prob <= 1:
            raise ValueError("distractor probability must be in [0, 1]")
        if self.strength < 0 or self.noise_floor < 0:
            raise ValueError("strength and noise floor must be >= 0")


def default_skeleton() -> SkeletonSpec:
    """17-joint humanoid tree with plausible indoor-capture bone lengths."""
    # pelvis, r-hip/knee/ankle, l-hip/knee/ankle, spine, thorax, neck,
    # head, l-shoulder/elbow/wrist, r-shoulder/elbow/wrist
    parents = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
    lengths = np.array(
        [0, 130, 450, 450, 130, 450, 450, 250, 250, 120, 120,
         180, 280, 250, 180, 280, 250],
        dtype=np.float64,
    )
    d = {
        "down": (0, 1, 0), "up": (0, -1, 0),
        "left": (1, 0, 0), "right": (-1, 0, 0),
    }
    directions = np.array(
        [
            (0, 0, 0), d["right"], d["down"], d["down"],
            d["left"], d["down"], d["down"],
            d["up"], d["up"], d["up"], d["up"],
            d["left"], d["down"], d["down"],
            d["right"], d["down"], d["down"],
        ],
        dtype=np.float64,
    )
    # Half-ranges per joint for (x: out-of-plane tilt, y: twist, z: in-plane).
    # The ranges keep the 2D-to-3D mapping well conditioned: tilts are
    # sampled one-sided away from zero (centers below) so depth offsets
    # have a fixed sign and never hit the flat top of the foreshortening
    # curve, and twist is minimal because it is invisible in projection.
    base = np.array(
        [
            (0.2, 0.2, 0.2),
            (0.5, 0.3, 0.3), (1.2, 0.1, 0.1), (0.5, 0.1, 0.1),
            (0.5, 0.3, 0.3), (1.2, 0.1, 0.1), (0.5, 0.1, 0.1),
            (0.2, 0.2, 0.2), (0.2, 0.2, 0.2), (0.3, 0.3, 0.3),
            (0.3, 0.3, 0.3),
            (0.8, 0.5, 0.5), (1.3, 0.1, 0.1), (0.5, 0.3, 0.3),
            (0.8, 0.5, 0.5), (1.3, 0.1, 0.1), (0.5, 0.3, 0.3),
        ],
        dtype=np.float64,
    )
    ranges = 0.35 * base
    ranges[:, 1] = 0.02
    ranges[0] = (0.1, 0.5, 0.1)  # root: moderate yaw, slight tilt/roll
    centers = np.zeros_like(ranges)
    centers[1:, 0] = ranges[1:, 0] + 0.25
    return SkeletonSpec(
        parents=parents,
        bone_lengths=lengths,
        rest_directions=directions,
        angle_ranges=ranges,
        angle_centers=centers,
    )


def default_camera(image_size: int = 1000) -> CameraModel:
    return CameraModel(fx=1150.0, fy=1150.0, cx=image_size / 2, cy=image_size / 2)


def _euler_rotation(angles):
    ax, ay, az = angles
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def sample_pose(spec: SkeletonSpec, rng) -> np.ndarray:
    """Forward kinematics with uniformly sampled joint angles; root at origin."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    m = spec.num_joints
    angles = rng.uniform(
        spec.angle_centers - spec.angle_ranges,
        spec.angle_centers + spec.angle_ranges,
    )
    positions = np.zeros((m, 3))
    rotations = [np.eye(3)] * m
    for j in range(m):
        local = _euler_rotation(angles[j])
        if spec.parents[j] == -1:
            rotations[j] = local
            continue
        parent = spec.parents[j]
        rotations[j] = rotations[parent] @ local
        offset = spec.bone_lengths[j] * spec.rest_directions[j]
        positions[j] = positions[parent] + rotations[j] @ offset
    return positions


def make_frame(
    pose_3d,
    camera: CameraModel,
    corruption: CorruptionSpec,
    rng,
    grid_size: int = 32,
    box_margin: float = 0.15,
):
    """Project a camera-space pose and render its (optionally corrupted)
    heat-map volume. Returns (volume, pose_2d_image, pose_3d)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    pose_3d = np.asarray(pose_3d, dtype=np.float64)
    pose_2d = project_perspective(pose_3d, camera)

    lo = pose_2d.min(axis=0)
    hi = pose_2d.max(axis=0)
    side = float(np.max(hi - lo)) * (1.0 + 2.0 * box_margin)
    center = (lo + hi) / 2
    box = BoundingBox(
        origin_x=float(center[0] - side / 2),
        origin_y=float(center[1] - side / 2),
        side=side,
    )

    grid_joints = image_to_grid(pose_2d, box, grid_size)
    maps = np.empty((len(pose_3d), grid_size, grid_size))
    for i, joint in enumerate(grid_joints):
        grid = render_gaussian(joint, grid_size, sigma=1.0)
        if rng.random() < corruption.distractor_prob:
            angle = rng.uniform(0, 2 * np.pi)
            radius = rng.uniform(corruption.offset_min, corruption.offset_max)
            distractor = joint + radius * np.array([np.cos(angle), np.sin(angle)])
            distractor = np.clip(distractor, 0, grid_size - 1)
            grid = grid + corruption.strength * render_gaussian(
                distractor, grid_size, sigma=1.0
            )
        if corruption.noise_floor > 0:
            grid = grid + rng.uniform(
                0, corruption.noise_floor, size=grid.shape
            )
        maps[i] = grid
    # store at file precision so volumes round-trip bit-exactly
    maps = np.clip(maps, 0, None).astype(np.float32).astype(np.float64)
    return HeatMapVolume(maps=maps, box=box), pose_2d, pose_3d


def place_subject(pose_centered, camera: CameraModel, rng, depth_range=(3000.0, 6000.0)):
    """Translate a root-centered pose to a random position in the frustum."""
    depth = rng.uniform(*depth_range)
    # mild lateral jitter, in mm, so the subject stays well inside the view
    lateral = 0.1 * depth
    center = np.array(
        [rng.uniform(-lateral, lateral), rng.uniform(-lateral, lateral), depth]
    )
    return pose_centered - pose_centered.mean(axis=0) + center


@dataclass(frozen=True)
class SyntheticFrame:
    volume: HeatMapVolume
    pose_2d: np.ndarray  # image pixels
    pose_3d: np.ndarray  # camera space, mm


def generate_frames(
    spec: SkeletonSpec,
    camera: CameraModel,
    count: int,
    corruption: CorruptionSpec,
    seed: int,
    depth_range=(3000.0, 6000.0),
    grid_size: int = 32,
) -> list[SyntheticFrame]:
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(count):
        pose = sample_pose(spec, rng)
        pose = place_subject(pose, camera, rng, depth_range)
        volume, pose_2d, pose_3d = make_frame(
            pose, camera, corruption, rng, grid_size=grid_size
        )
        frames.append(SyntheticFrame(volume=volume, pose_2d=pose_2d, pose_3d=pose_3d))
    return frames


def evaluate_frames(frames, model, config: InferenceConfig, camera: CameraModel):
    """Per-frame metrics for one inference configuration."""
    per_frame = {"mpjpe": [], "similarity": [], "error_2d": [], "chosen": []}
    for frame in frames:
        result = infer(frame.volume, model, config, camera=camera)
        gt_3d = frame.pose_3d - frame.pose_3d.mean(axis=0)
        per_frame["mpjpe"].append(mpjpe(gt_3d, result.pose_3d))
        per_frame["similarity"].append(procrustes_error(gt_3d, result.pose_3d))
        per_frame["error_2d"].append(
            error_2d(
                image_to_crop(frame.pose_2d, frame.volume.box),
                image_to_crop(result.pose_2d, frame.volume.box),
            )
        )
        per_frame["chosen"].append(result.chosen_index)
    return {k: np.array(v) for k, v in per_frame.items()}


def bootstrap_mean_ci(samples, rng, n_resamples: int = 1000, alpha: float = 0.05):
    """Percentile bootstrap confidence interval for the mean."""
    samples = np.asarray(samples, dtype=np.float64)
    means = np.empty(n_resamples)
    n = len(samples)
    for i in range(n_resamples):
        means[i] = samples[rng.integers(0, n, size=n)].mean()
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def run_benchmark(
    skeleton: SkeletonSpec,
    camera: CameraModel,
    n_train: int,
    n_test: int,
    configs: dict[str, InferenceConfig],
    seed: int,
    corruption: CorruptionSpec = CorruptionSpec(),
    train_config: LifterTrainConfig = LifterTrainConfig(),
    model: LifterModel | None = None,
    baseline: str | None = None,
    depth_range=(3000.0, 6000.0),
) -> dict:
    """Train (unless given a model), infer with each config on a shared test
    split, and report the three metrics plus a bootstrap interval for the
    paired MPJPE delta against the named baseline config."""
    rng = np.random.default_rng(seed)
    train_seed, test_seed, lifter_seed, boot_seed = rng.integers(0, 2**31, size=4)

    report: dict = {
        "seed": seed,
        "n_train": n_train,
        "n_test": n_test,
        "configs": {},
    }
    if model is None:
        train_frames = generate_frames(
            skeleton, camera, n_train, CorruptionSpec(), int(train_seed),
            depth_range=depth_range,
        )
        model, final_loss = train_lifter(
            [f.pose_2d for f in train_frames],
            [f.pose_3d for f in train_frames],
            replace(train_config, seed=int(lifter_seed)),
        )
        report["train_loss"] = final_loss

    test_frames = generate_frames(
        skeleton, camera, n_test, corruption, int(test_seed),
        depth_range=depth_range,
    )
    per_config = {}
    for name, config in configs.items():
        metrics = evaluate_frames(test_frames, model, config, camera)
        per_config[name] = metrics
        report["configs"][name] = {
            "mpjpe_mean": float(metrics["mpjpe"].mean()),
            "similarity_mean": float(metrics["similarity"].mean()),
            "error_2d_mean": float(metrics["error_2d"].mean()),
        }

    if baseline is not None and baseline in per_config:
        boot_rng = np.random.default_rng(int(boot_seed))
        report["deltas_vs_baseline"] = {}
        for name, metrics in per_config.items():
            if name == baseline:
                continue
            delta = metrics["mpjpe"] - per_config[baseline]["mpjpe"]
            lo, hi = bootstrap_mean_ci(delta, boot_rng)
            report["deltas_vs_baseline"][name] = {
                "mpjpe_delta_mean": float(delta.mean()),
                "ci95": [lo, hi],
            }
    report["_model"] = model
    report["_per_config"] = per_config
    return report


def format_report(report: dict) -> str:
    """Human-readable table for a benchmark report."""
    lines = [
        f"benchmark seed={report['seed']} "
        f"train={report['n_train']} test={report['n_test']}",
        f"{'config':<24}{'MPJPE (mm)':>12}{'Similarity':>12}{'2D (px)':>10}",
    ]
    for name, row in report["configs"].items():
        lines.append(
            f"{name:<24}{row['mpjpe_mean']:>12.2f}"
            f"{row['similarity_mean']:>12.2f}{row['error_2d_mean']:>10.2f}"
        )
    for name, row in report.get("deltas_vs_baseline", {}).items():
        lo, hi = row["ci95"]
        lines.append(
            f"delta[{name}] = {row['mpjpe_delta_mean']:+.2f} mm "
            f"(95% CI [{lo:+.2f}, {hi:+.2f}])"
        )
    return "\n".join(lines) + "\n"
