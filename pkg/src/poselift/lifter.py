"""Feed-forward 2D-to-3D pose lifter.

A fully-connected network maps a normalized 2D pose (optionally with its
mean position and scale appended) to a zero-mean 3D pose in millimeters.
Training uses mean-squared error with gradient descent plus classical
momentum and Gaussian noise augmentation on the normalized joints.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import as_pose2d, normalize_pose

MODEL_MAGIC = b"PLFT"
MODEL_VERSION = 1

# fixed preconditioner for the pixel-scale mean/scale inputs so they sit in
# the same numeric range as the normalized joints during optimization
POSITION_INPUT_SCALE = 256.0

# training runs in a scaled target space (millimeters / TARGET_SCALE) so the
# MSE gradients match the O(1) inputs at the configured learning rate; the
# scale is folded back into the last layer before the model is returned
TARGET_SCALE = 256.0

# input layouts: normalized joints only, or joints plus mean and scale
INPUT_FULL = "full"
INPUT_NORMALIZED = "normalized"


class ModelFormatError(ValueError):
    """Model file is corrupt, truncated, or from an unknown format version."""


@dataclass(frozen=True)
class LifterModel:
    """MLP weights plus the mean 3D subject position learned from training."""

    num_joints: int
    weights: tuple[np.ndarray, ...]  # per layer, (fan_in, fan_out)
    biases: tuple[np.ndarray, ...]
    mean_offset: np.ndarray  # (3,), millimeters
    input_mode: str = INPUT_FULL

    def __post_init__(self):
        dims = self.layer_sizes
        if dims[0] != self.input_dim or dims[-1] != 3 * self.num_joints:
            raise ValueError("layer sizes do not match the joint count")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias length does not match layer width")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        base = 2 * self.num_joints
        return base + 3 if self.input_mode == INPUT_FULL else base

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(
            w.shape[1] for w in self.weights
        )

    def build_input(self, pose) -> np.ndarray:
        pose = as_pose2d(pose)
        if len(pose) != self.num_joints:
            raise ValueError(
                f"pose has {len(pose)} joints, model expects {self.num_joints}"
            )
        norm = normalize_pose(pose)
        flat = norm.joints.ravel()
        if self.input_mode == INPUT_FULL:
            extra = np.array(
                [norm.mean[0], norm.mean[1], norm.scale]
            ) / POSITION_INPUT_SCALE
            return np.concatenate([flat, extra])
        return flat

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        """Batched forward pass on (B, input_dim) rows."""
        h = inputs
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def lift(self, pose) -> np.ndarray:
        """Zero-mean 3D pose (M, 3) in millimeters for one 2D pose."""
        out = self.forward(self.build_input(pose)[None, :])
        return out.reshape(self.num_joints, 3)

    def lift_absolute(self, pose) -> np.ndarray:
        """3D pose shifted by the mean training position."""
        return self.lift(pose) + self.mean_offset

    def lift_batch(self, inputs: np.ndarray) -> np.ndarray:
        """(B, input_dim) -> (B, M, 3) zero-mean poses."""
        return self.forward(inputs).reshape(-1, self.num_joints, 3)


@dataclass(frozen=True)
class LifterTrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 200
    noise_std: float = 0.1
    batch_size: int = 64
    hidden_sizes: tuple[int, ...] = (256, 256)
    input_mode: str = INPUT_FULL
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise std must be non-negative")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


def init_parameters(layer_sizes, rng):
    """Symmetric uniform init scaled by sqrt(6 / (fan_in + fan_out))."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward_cached(weights, biases, inputs):
    activations = [inputs]
    h = inputs
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    out = h @ weights[-1] + biases[-1]
    return out, activations


def loss_and_gradients(weights, biases, inputs, targets):
    """MSE over all batch elements and output dims, with analytic gradients.

    Returns (loss, weight_grads, bias_grads). Gradients are exact
    backpropagation through the rectifier layers.
    """
    out, activations = _forward_cached(weights, biases, inputs)
    diff = out - targets
    loss = float(np.mean(diff**2))
    delta = 2.0 * diff / diff.size
    w_grads = [None] * len(weights)
    b_grads = [None] * len(biases)
    for layer in range(len(weights) - 1, -1, -1):
        w_grads[layer] = activations[layer].T @ delta
        b_grads[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (activations[layer] > 0)
    return loss, w_grads, b_grads


def _prepare_training_data(poses_2d, poses_3d):
    inputs_flat, means, scales, targets, centroids = [], [], [], [], []
    for p2, p3 in zip(poses_2d, poses_3d):
        norm = normalize_pose(p2)
        inputs_flat.append(norm.joints.ravel())
        means.append(norm.mean)
        scales.append(norm.scale)
        p3 = np.asarray(p3, dtype=np.float64)
        centroid = p3.mean(axis=0)
        centroids.append(centroid)
        targets.append(((p3 - centroid) / TARGET_SCALE).ravel())
    return (
        np.array(inputs_flat),
        np.array(means),
        np.array(scales),
        np.array(targets),
        np.array(centroids),
    )


def train_lifter(poses_2d, poses_3d, config: LifterTrainConfig) -> LifterModel:
    """Fit the lifter on paired 2D/3D poses; deterministic per seed.

    3D targets are centered per pose; the mean of the removed centroids
    becomes the model's mean_offset. Per batch, fresh Gaussian noise is
    added to the normalized 2D joints (never to the mean or scale).
    Optimization runs on targets divided by TARGET_SCALE; the scale is
    folded back into the last layer, so the returned model emits
    millimeters. Returns (model, final_epoch_mean_loss) with the loss
    expressed in squared millimeters.
    """
    if len(poses_2d) == 0 or len(poses_2d) != len(poses_3d):
        raise ValueError("need a non-empty, aligned 2D/3D pose dataset")
    num_joints = len(as_pose2d(poses_2d[0]))
    flat, means, scales, targets, centroids = _prepare_training_data(
        poses_2d, poses_3d
    )
    rng = np.random.default_rng(config.seed)
    input_dim = 2 * num_joints + (3 if config.input_mode == INPUT_FULL else 0)
    layer_sizes = (input_dim,) + tuple(config.hidden_sizes) + (3 * num_joints,)
    weights, biases = init_parameters(layer_sizes, rng)
    w_vel = [np.zeros_like(w) for w in weights]
    b_vel = [np.zeros_like(b) for b in biases]

    n = len(flat)
    batch = min(config.batch_size, n)
    final_loss = np.inf
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            x = flat[idx]
            if config.noise_std > 0:
                x = x + rng.normal(0.0, config.noise_std, size=x.shape)
            if config.input_mode == INPUT_FULL:
                extra = (
                    np.concatenate([means[idx], scales[idx, None]], axis=1)
                    / POSITION_INPUT_SCALE
                )
                x = np.concatenate([x, extra], axis=1)
            loss, w_grads, b_grads = loss_and_gradients(
                weights, biases, x, targets[idx]
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} (lr={config.learning_rate})"
                )
            epoch_loss += loss * len(idx)
            for i in range(len(weights)):
                w_vel[i] = config.momentum * w_vel[i] - config.learning_rate * w_grads[i]
                b_vel[i] = config.momentum * b_vel[i] - config.learning_rate * b_grads[i]
                weights[i] = weights[i] + w_vel[i]
                biases[i] = biases[i] + b_vel[i]
        final_loss = epoch_loss / n

    # fold the target preconditioner into the last layer: outputs are mm
    weights[-1] = weights[-1] * TARGET_SCALE
    biases[-1] = biases[-1] * TARGET_SCALE
    model = LifterModel(
        num_joints=num_joints,
        weights=tuple(weights),
        biases=tuple(biases),
        mean_offset=centroids.mean(axis=0),
        input_mode=config.input_mode,
    )
    return model, final_loss * TARGET_SCALE**2


def save_model(model: LifterModel, path) -> None:
    """Binary container: header, layer sizes, offset, float64 parameters,
    and a trailing SHA-256 checksum of everything before it."""
    sizes = model.layer_sizes
    mode_flag = 1 if model.input_mode == INPUT_FULL else 0
    parts = [
        MODEL_MAGIC,
        struct.pack("<IIBI", MODEL_VERSION, model.num_joints, mode_flag, len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
        np.asarray(model.mean_offset, dtype="<f8").tobytes(),
    ]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    payload = b"".join(parts)
    from .fileio import atomic_write_bytes

    atomic_write_bytes(path, payload + hashlib.sha256(payload).digest())


def load_model(path) -> LifterModel:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 32 + len(MODEL_MAGIC):
        raise ModelFormatError("model file truncated")
    payload, checksum = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != checksum:
        raise ModelFormatError("model file checksum mismatch")
    if payload[:4] != MODEL_MAGIC:
        raise ModelFormatError("bad magic; not a lifter model file")
    offset = 4
    version, num_joints, mode_flag, n_sizes = struct.unpack_from(
        "<IIBI", payload, offset
    )
    offset += struct.calcsize("<IIBI")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    sizes = struct.unpack_from(f"<{n_sizes}I", payload, offset)
    offset += 4 * n_sizes
    mean_offset = np.frombuffer(payload, dtype="<f8", count=3, offset=offset).copy()
    offset += 24
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        need = (fan_in * fan_out + fan_out) * 8
        if offset + need > len(payload):
            raise ModelFormatError("model file truncated inside parameters")
        w = np.frombuffer(
            payload, dtype="<f8", count=fan_in * fan_out, offset=offset
        ).reshape(fan_in, fan_out).copy()
        offset += fan_in * fan_out * 8
        b = np.frombuffer(payload, dtype="<f8", count=fan_out, offset=offset).copy()
        offset += fan_out * 8
        weights.append(w)
        biases.append(b)
    if offset != len(payload):
        raise ModelFormatError("trailing bytes in model file")
    return LifterModel(
        num_joints=num_joints,
        weights=tuple(weights),
        biases=tuple(biases),
        mean_offset=mean_offset,
        input_mode=INPUT_FULL if mode_flag else INPUT_NORMALIZED,
    )
