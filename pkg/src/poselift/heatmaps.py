"""Heat-map volumes, kernel-density smoothing, and joint candidate extraction.

A heat map is an (H, W) grid of non-negative likelihoods indexed as
grid[y, x]. Candidate positions are continuous (x, y) grid coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import BoundingBox

CONVERGENCE_TOL = 1e-4
MAX_ITERATIONS = 100

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


class EmptyWindowError(ValueError):
    """The kernel window around a point carries zero total weight."""


@dataclass(frozen=True)
class HeatMapVolume:
    """Per-joint likelihood grids plus the crop box that produced them."""

    maps: np.ndarray  # (M, H, W), non-negative
    box: BoundingBox

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 3:
            raise ValueError("expected (M, H, W) heat-map stack")
        if not np.all(np.isfinite(maps)):
            raise ValueError("heat maps contain non-finite values")
        maps = np.clip(maps, 0.0, None)  # clamp stray negative activations
        if np.any(maps.reshape(len(maps), -1).sum(axis=1) == 0):
            raise ValueError("all-zero heat map for some joint")
        object.__setattr__(self, "maps", maps)

    @property
    def num_joints(self) -> int:
        return self.maps.shape[0]

    @property
    def grid_size(self) -> int:
        return self.maps.shape[1]


@dataclass(frozen=True)
class JointCandidates:
    """Ranked modes for one joint: positions (K, 2) as (x, y), values (K,)."""

    positions: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def _grid_samples(grid):
    """Flatten a grid into sample positions (n, 2) as (x, y) and weights (n,)."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    ys, xs = np.mgrid[0:h, 0:w]
    positions = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    return positions, grid.ravel()


def _window_patches(points, grids, joint_ids, bandwidth):
    """Per-point kernel-window weights gathered from the local pixel patch.

    Only pixels inside the (2*ceil(b)+1)^2 patch around a point can fall
    within its kernel window, so the full grid never needs scanning.
    grids is an (M, H, W) stack and joint_ids selects the grid per point,
    which lets one call serve every joint of a volume at once. Returns
    (nx, ny, weights) of shape (n_points, patch_size) with weights
    already zeroed outside the grid and outside the window.
    """
    _, h, w = grids.shape
    r = int(np.ceil(bandwidth))
    offs_y, offs_x = np.mgrid[-r : r + 1, -r : r + 1]
    offs_x = offs_x.ravel()[None, :]
    offs_y = offs_y.ravel()[None, :]
    base = np.floor(points).astype(int)
    nx = base[:, 0:1] + offs_x
    ny = base[:, 1:2] + offs_y
    valid = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    weights = grids[joint_ids[:, None], ny.clip(0, h - 1), nx.clip(0, w - 1)]
    d2 = (nx - points[:, 0:1]) ** 2 + (ny - points[:, 1:2]) ** 2
    weights = weights * (valid & (d2 < bandwidth**2))
    return nx, ny, weights


def kde_values(grid, points, bandwidth: float) -> np.ndarray:
    """Flat-kernel density at several sub-pixel points at once."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.asarray(grid, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    ids = np.zeros(len(points), dtype=np.intp)
    _, _, weights = _window_patches(points, grid[None], ids, bandwidth)
    return weights.sum(axis=1)


def kde_value(grid, point, bandwidth: float) -> float:
    """Flat-kernel density at a sub-pixel point: sum of weights within radius b."""
    return float(kde_values(grid, np.asarray(point, dtype=np.float64)[None, :], bandwidth)[0])


def mean_shift_step(grid, point, bandwidth: float):
    """Weighted mean of the samples within the flat kernel window around point."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    positions, weights = _grid_samples(grid)
    point = np.asarray(point, dtype=np.float64)
    inside = np.sum((positions - point) ** 2, axis=1) < bandwidth**2
    total = weights[inside].sum()
    if total <= 0:
        raise EmptyWindowError(f"no weight within radius {bandwidth} of {point}")
    return positions[inside].T @ weights[inside] / total


def _mean_shift_batch(points, grids, joint_ids, bandwidth):
    """One mean-shift update of several points at once.

    Points must each have nonzero window weight (guaranteed when seeded
    on nonzero pixels).
    """
    nx, ny, weights = _window_patches(points, grids, joint_ids, bandwidth)
    totals = weights.sum(axis=1)
    mx = (weights * nx).sum(axis=1) / totals
    my = (weights * ny).sum(axis=1) / totals
    return np.stack([mx, my], axis=1)


# dedup precision: far below the convergence threshold, so merging
# numerically identical trajectories cannot change the mode set
_DEDUP_DECIMALS = 8

# Mode verification: mean-shift fixed points include saddle points of the
# density (seeds balanced on the ridge between two bumps stop there), so a
# converged point only counts as a mode if it is a local maximum of the
# shadow density -- the smooth Epanechnikov-weighted sum that flat-kernel
# mean shift provably ascends. Probes at this radius around each candidate
# must not find a higher shadow-density value.
_PROBE_RADIUS = 0.5
_PROBE_DIRECTIONS = np.array(
    [
        (np.cos(a), np.sin(a))
        for a in np.arange(8) * (np.pi / 4.0)
    ]
)


def _shadow_values(points, grids, joint_ids, bandwidth):
    """Shadow (Epanechnikov) density: sum of h_j * (b^2 - d^2) in-window."""
    nx, ny, weights = _window_patches(points, grids, joint_ids, bandwidth)
    d2 = (nx - points[:, 0:1]) ** 2 + (ny - points[:, 1:2]) ** 2
    return (weights * (bandwidth**2 - d2)).sum(axis=1)


def _local_maximum_mask(points, grids, joint_ids, bandwidth):
    """True where no probe around the point has higher shadow density."""
    center = _shadow_values(points, grids, joint_ids, bandwidth)
    probes = points[:, None, :] + _PROBE_RADIUS * _PROBE_DIRECTIONS[None]
    k = len(_PROBE_DIRECTIONS)
    probe_vals = _shadow_values(
        probes.reshape(-1, 2), grids, np.repeat(joint_ids, k), bandwidth
    ).reshape(-1, k)
    return np.all(probe_vals <= center[:, None] * (1.0 + 1e-9), axis=1)


@njit(cache=True)
def _shadow_at(grid, x, y, r, b2):
    h, w = grid.shape
    bx = int(np.floor(x))
    by = int(np.floor(y))
    total = 0.0
    for oy in range(-r, r + 1):
        py = by + oy
        if py < 0 or py >= h:
            continue
        for ox in range(-r, r + 1):
            px = bx + ox
            if px < 0 or px >= w:
                continue
            dx = px - x
            dy = py - y
            d2 = dx * dx + dy * dy
            if d2 < b2:
                total += grid[py, px] * (b2 - d2)
    return total


@njit(cache=True)
def _local_max_kernel(grid, points, bandwidth, directions, radius):
    r = int(np.ceil(bandwidth))
    b2 = bandwidth * bandwidth
    out = np.ones(len(points), dtype=np.bool_)
    for i in range(len(points)):
        center = _shadow_at(grid, points[i, 0], points[i, 1], r, b2)
        limit = center * (1.0 + 1e-9)
        for d in range(len(directions)):
            value = _shadow_at(
                grid,
                points[i, 0] + radius * directions[d, 0],
                points[i, 1] + radius * directions[d, 1],
                r,
                b2,
            )
            if value > limit:
                out[i] = False
                break
    return out


def _dedup(points, joint_ids):
    rows = np.column_stack([joint_ids, np.round(points, _DEDUP_DECIMALS)])
    rows = np.unique(rows, axis=0)
    return rows[:, 1:], rows[:, 0].astype(np.intp)


@njit(cache=True)
def _suppress_kernel(points, r2, limit):
    n = len(points)
    alive = np.ones(n, dtype=np.bool_)
    keep = np.empty(n, dtype=np.intp)
    count = 0
    for i in range(n):
        if not alive[i]:
            continue
        keep[count] = i
        count += 1
        if count == limit:
            break
        for j in range(i + 1, n):
            if alive[j]:
                dx = points[j, 0] - points[i, 0]
                dy = points[j, 1] - points[i, 1]
                if dx * dx + dy * dy < r2:
                    alive[j] = False
    return keep[:count]


def _greedy_suppress(points, values, radius, limit):
    """Keep points in the given priority order, dropping any within radius
    of an already-kept point. points/values must be pre-sorted."""
    keep = _suppress_kernel(
        np.ascontiguousarray(points), radius * radius, limit
    )
    return points[keep].copy(), values[keep].copy()


@njit(cache=True)
def _mean_shift_converge_kernel(grid, seeds, bandwidth, tol, max_iter):
    """Run each seed to convergence with the flat-kernel weighted mean.

    Scans only the local (2*ceil(b)+1)^2 patch per step. A step smaller
    than tol (Euclidean) ends the trajectory.
    """
    h, w = grid.shape
    r = int(np.ceil(bandwidth))
    b2 = bandwidth * bandwidth
    tol2 = tol * tol
    out = np.empty((len(seeds), 3), dtype=np.float64)
    for s in range(len(seeds)):
        x = seeds[s, 0]
        y = seeds[s, 1]
        for _ in range(max_iter):
            bx = int(np.floor(x))
            by = int(np.floor(y))
            sw = 0.0
            sx = 0.0
            sy = 0.0
            for oy in range(-r, r + 1):
                py = by + oy
                if py < 0 or py >= h:
                    continue
                for ox in range(-r, r + 1):
                    px = bx + ox
                    if px < 0 or px >= w:
                        continue
                    dx = px - x
                    dy = py - y
                    if dx * dx + dy * dy < b2:
                        wgt = grid[py, px]
                        sw += wgt
                        sx += wgt * px
                        sy += wgt * py
            mx = sx / sw
            my = sy / sw
            step2 = (mx - x) ** 2 + (my - y) ** 2
            x = mx
            y = my
            if step2 < tol2:
                break
        # flat-kernel density at the converged point
        bx = int(np.floor(x))
        by = int(np.floor(y))
        sw = 0.0
        for oy in range(-r, r + 1):
            py = by + oy
            if py < 0 or py >= h:
                continue
            for ox in range(-r, r + 1):
                px = bx + ox
                if px < 0 or px >= w:
                    continue
                dx = px - x
                dy = py - y
                if dx * dx + dy * dy < b2:
                    sw += grid[py, px]
        out[s, 0] = x
        out[s, 1] = y
        out[s, 2] = sw
    return out


def find_modes_volume(grids, bandwidth: float, max_candidates: int) -> list[JointCandidates]:
    """Mean-shift candidate extraction for every joint of a volume at once.

    Per grid: runs mean shift from every nonzero pixel until the step
    displacement falls below 1e-4 grid units (cap 100 iterations), merges
    converged points closer than bandwidth/2, scores each mode by the
    flat-kernel density, keeps the top max_candidates, and drops saddle
    stalls (converged points that are not local maxima of the shadow
    density, detected with probes at radius 0.5). The joints are
    independent; batching them only amortizes the per-iteration overhead.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if max_candidates < 1:
        raise ValueError("max_candidates must be >= 1")
    grids = np.asarray(grids, dtype=np.float64)
    m, h, w = grids.shape
    ys, xs = np.mgrid[0:h, 0:w]
    pixel_pos = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)

    seeds, seed_ids = [], []
    for j in range(m):
        nz = grids[j].ravel() > 0
        if not np.any(nz):
            raise ValueError(f"all-zero heat map for joint {j}")
        seeds.append(pixel_pos[nz])
        seed_ids.append(np.full(int(nz.sum()), j, dtype=np.intp))
    if _HAVE_NUMBA:
        out = []
        for j in range(m):
            res = _mean_shift_converge_kernel(
                grids[j], seeds[j], float(bandwidth), CONVERGENCE_TOL, MAX_ITERATIONS
            )
            pts, vals = res[:, :2], res[:, 2]
            # merge within bandwidth/2, strongest first; ties broken by (y, x)
            order = np.lexsort((pts[:, 0], pts[:, 1], -vals))
            pts, vals = pts[order], vals[order]
            kept, kept_vals = _greedy_suppress(
                pts, vals, bandwidth / 2, max_candidates
            )
            is_max = _local_max_kernel(
                grids[j],
                np.ascontiguousarray(kept),
                float(bandwidth),
                _PROBE_DIRECTIONS,
                _PROBE_RADIUS,
            )
            is_max[0] = True  # always report at least the strongest point
            kept, kept_vals = kept[is_max], kept_vals[is_max]
            out.append(JointCandidates(positions=kept, values=kept_vals))
        return out

    active = np.concatenate(seeds)
    active_ids = np.concatenate(seed_ids)
    done_pts: list[np.ndarray] = []
    done_ids: list[np.ndarray] = []
    for _ in range(MAX_ITERATIONS):
        shifted = _mean_shift_batch(active, grids, active_ids, bandwidth)
        moved = np.linalg.norm(shifted - active, axis=1) >= CONVERGENCE_TOL
        if np.any(~moved):
            done_pts.append(shifted[~moved])
            done_ids.append(active_ids[~moved])
        active, active_ids = _dedup(shifted[moved], active_ids[moved])
        if len(active) == 0:
            break
    if len(active):  # hit the iteration cap; accept as-is
        done_pts.append(active)
        done_ids.append(active_ids)
    points, ids = _dedup(np.concatenate(done_pts), np.concatenate(done_ids))
    _, _, weights = _window_patches(points, grids, ids, bandwidth)
    values = weights.sum(axis=1)

    out = []
    for j in range(m):
        sel = ids == j
        pts, vals = points[sel], values[sel]
        order = np.lexsort((pts[:, 0], pts[:, 1], -vals))
        pts, vals = pts[order], vals[order]
        kept, kept_vals = _greedy_suppress(
            pts, vals, bandwidth / 2, max_candidates
        )
        is_max = _local_maximum_mask(
            kept, grids, np.full(len(kept), j, dtype=np.intp), bandwidth
        )
        is_max[0] = True  # always report at least the strongest point
        kept, kept_vals = kept[is_max], kept_vals[is_max]
        out.append(JointCandidates(positions=kept, values=kept_vals))
    return out


def find_modes(grid, bandwidth: float, max_candidates: int) -> JointCandidates:
    """Mean-shift modes of one smoothed heat map, best first."""
    grid = np.asarray(grid, dtype=np.float64)
    return find_modes_volume(grid[None], bandwidth, max_candidates)[0]


def find_modes_nms(
    grid, max_candidates: int, upscale: int = 8, radius: float = 3.0
) -> JointCandidates:
    """Candidate extraction baseline: bilinear upsampling plus greedy NMS.

    The grid is bilinearly upsampled by the given factor, strict local
    maxima over 8-neighborhoods are collected, and greedy non-maximum
    suppression with the scaled radius keeps the strongest peaks. Output
    coordinates are mapped back to the original grid scale.
    """
    if upscale < 1:
        raise ValueError("upscale must be >= 1")
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    if upscale == 1:
        up = grid
    else:
        # sample at upscaled pixel centers, pixel-center aligned
        yy, xx = np.mgrid[0 : h * upscale, 0 : w * upscale]
        coords = np.stack(
            [(yy + 0.5) / upscale - 0.5, (xx + 0.5) / upscale - 0.5]
        )
        up = ndimage.map_coordinates(grid, coords, order=1, mode="nearest")

    # local maxima over 8-neighborhoods; >= keeps the symmetric ties that
    # bilinear resampling produces around a peak, NMS then drops duplicates
    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    neighbor_max = ndimage.maximum_filter(
        up, footprint=footprint, mode="constant"
    )
    peaks = (up >= neighbor_max) & (up > 0)
    pys, pxs = np.nonzero(peaks)
    vals = up[pys, pxs]
    order = np.lexsort((pxs, pys, -vals))
    points = np.stack([pxs, pys], axis=1).astype(np.float64)
    kept, kept_vals = _greedy_suppress(
        points[order], vals[order], radius * upscale, max_candidates
    )
    if upscale > 1:
        kept = (kept + 0.5) / upscale - 0.5
    return JointCandidates(positions=kept, values=kept_vals)


def render_gaussian(joint, grid_size: int, sigma: float = 1.0) -> np.ndarray:
    """Unnormalized Gaussian bump centered on a (x, y) grid-coordinate joint."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    joint = np.asarray(joint, dtype=np.float64)
    ys, xs = np.mgrid[0:grid_size, 0:grid_size]
    d2 = (xs - joint[0]) ** 2 + (ys - joint[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma**2))
