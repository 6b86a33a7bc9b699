"""On-disk formats: pose records, camera intrinsics, heat-map volumes.

See FORMATS.md at the repository root for the byte-level layout.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, CameraModel
from .heatmaps import HeatMapVolume

VOLUME_MAGIC = b"HMV1"


class DataFormatError(ValueError):
    """A data file does not match its declared format."""


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file plus rename so failures leave no partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_poses(path, poses, frames=None) -> None:
    """Line-delimited JSON, one frame per line: {"frame": i, "joints": [...]}"""
    if frames is None:
        frames = range(len(poses))
    lines = []
    for frame, pose in zip(frames, poses):
        joints = np.asarray(pose, dtype=np.float64).tolist()
        lines.append(json.dumps({"frame": int(frame), "joints": joints}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_poses(path, dim: int | None = None):
    """Returns (frames, poses) sorted by frame index."""
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                frame = int(rec["frame"])
                joints = np.asarray(rec["joints"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataFormatError(f"{path}:{lineno}: bad pose record: {e}")
            if joints.ndim != 2 or (dim is not None and joints.shape[1] != dim):
                raise DataFormatError(
                    f"{path}:{lineno}: expected (M, {dim or '2|3'}) joints, "
                    f"got {joints.shape}"
                )
            records.append((frame, joints))
    records.sort(key=lambda r: r[0])
    return [r[0] for r in records], [r[1] for r in records]


def save_camera(path, camera: CameraModel) -> None:
    atomic_write_text(
        path,
        json.dumps(
            {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy}
        )
        + "\n",
    )


def load_camera(path) -> CameraModel:
    with open(path) as f:
        try:
            rec = json.load(f)
            return CameraModel(
                fx=float(rec["fx"]),
                fy=float(rec["fy"]),
                cx=float(rec["cx"]),
                cy=float(rec["cy"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"{path}: bad camera file: {e}")


def volume_to_bytes(volume: HeatMapVolume) -> bytes:
    m, h, w = volume.maps.shape
    parts = [
        VOLUME_MAGIC,
        struct.pack("<III", m, h, w),
        np.ascontiguousarray(volume.maps, dtype="<f4").tobytes(),
        struct.pack(
            "<dddd",
            volume.box.origin_x,
            volume.box.origin_y,
            volume.box.side,
            0.0,
        ),
    ]
    return b"".join(parts)


def save_volume(path, volume: HeatMapVolume) -> None:
    atomic_write_bytes(path, volume_to_bytes(volume))


def load_volume(path) -> HeatMapVolume:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != VOLUME_MAGIC:
        raise DataFormatError(f"{path}: bad magic; not a heat-map volume")
    try:
        m, h, w = struct.unpack_from("<III", blob, 4)
        offset = 4 + 12
        count = m * h * w
        maps = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        ox, oy, side, _ = struct.unpack_from("<dddd", blob, offset)
        offset += 32
    except struct.error as e:
        raise DataFormatError(f"{path}: truncated heat-map volume: {e}")
    if offset != len(blob):
        raise DataFormatError(f"{path}: trailing bytes in heat-map volume")
    return HeatMapVolume(
        maps=maps.reshape(m, h, w).astype(np.float64),
        box=BoundingBox(origin_x=ox, origin_y=oy, side=side),
    )


def save_manifest(path, entries) -> None:
    """entries: iterable of (frame_index, relative_volume_path)."""
    lines = [f"{int(frame)}\t{rel}" for frame, rel in entries]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path):
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                frame, rel = line.split("\t")
                entries.append((int(frame), rel))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad manifest line")
    return entries
