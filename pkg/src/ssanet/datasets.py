"""Synthetic datasets: temporal-order clips and voxelized solids.

Motion dataset.  Eight 4x4 cells are arranged on a ring inside a 16x16
frame.  Every clip shows a bright square visiting all eight cells exactly
once over f=8 frames; only the visiting ORDER differs between classes
(clockwise, counterclockwise, row sweep, reversed row sweep), each with a
random cyclic phase and a global position jitter.  Consequently the
unordered multiset of frames has identical distribution across classes:
any classifier that is invariant to frame permutation is at chance by
construction, while order-aware models can separate the classes.

Voxel dataset.  Parametric solids (box, sphere, cylinder, torus) rendered
into 32^3 binary occupancy grids, stored in the SSAV container, plus the
augmentation pipeline: one of 12 azimuth rotations (30 degree steps about
the vertical axis, nearest-neighbor resampling; the 90 degree multiples
use exact grid transposes), random translation within +-2 voxels, 50%
horizontal flip, salt noise, then {0,1} -> {-1,5} value scaling.

Everything is deterministic given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SpecError
from .serialize import VOXEL_SIDE

MOTION_CLASSES = ("right", "left", "down", "up")
MOTION_FRAMES = 8
MOTION_SIZE = 16
_SQUARE = 4

# 3x3 arrangement minus the center, walked clockwise from the top-left.
_RING = ((2, 2), (2, 6), (2, 10), (6, 10), (10, 10), (10, 6), (10, 2), (6, 2))
# The same cells in row-sweep (boustrophedon) order, as ring indices.
_SWEEP = (0, 1, 2, 3, 7, 6, 5, 4)


def motion_cell_sequence(label: int, phase: int) -> list[tuple[int, int]]:
    """Top-left corners visited over time for one class/phase combination."""
    if not 0 <= label < len(MOTION_CLASSES):
        raise SpecError(f"label must be in [0, {len(MOTION_CLASSES)}), got {label}")
    if not 0 <= phase < 8:
        raise SpecError(f"phase must be in [0, 8), got {phase}")
    t = np.arange(MOTION_FRAMES)
    name = MOTION_CLASSES[label]
    if name == "right":
        idx = (phase + t) % 8
    elif name == "left":
        idx = (phase - t) % 8
    elif name == "down":
        idx = np.asarray(_SWEEP)[(phase + t) % 8]
    else:  # up: time reversal of a row sweep
        idx = np.asarray(_SWEEP)[(phase - t) % 8]
    return [_RING[i] for i in idx]


def render_motion_clip(cells, jitter=(0, 0)) -> np.ndarray:
    """Noise-free (1, f, 16, 16) clip showing the square at each cell in turn."""
    dy, dx = jitter
    clip = np.zeros((1, MOTION_FRAMES, MOTION_SIZE, MOTION_SIZE), dtype=np.float32)
    for t, (r, c) in enumerate(cells):
        r, c = r + dy, c + dx
        if not (0 <= r <= MOTION_SIZE - _SQUARE and 0 <= c <= MOTION_SIZE - _SQUARE):
            raise SpecError(f"jitter {jitter} pushes the square out of frame")
        clip[0, t, r : r + _SQUARE, c : c + _SQUARE] = 1.0
    return clip


@dataclass
class MotionDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_names: tuple[str, ...] = MOTION_CLASSES


def gen_motion_dataset(n_per_class: int, noise: float = 0.05,
                       seed: int = 0) -> MotionDataset:
    """Balanced 4-class clip dataset with an 80/20 train/test split."""
    if n_per_class < 1:
        raise SpecError(f"n_per_class must be >= 1, got {n_per_class}")
    if noise < 0:
        raise SpecError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    clips = []
    labels = []
    for label in range(len(MOTION_CLASSES)):
        for _ in range(n_per_class):
            phase = int(rng.integers(0, 8))
            jitter = tuple(int(v) for v in rng.integers(-2, 3, size=2))
            clip = render_motion_clip(motion_cell_sequence(label, phase), jitter)
            # drawn unconditionally so one seed gives the same phases and
            # jitters at every noise level, including zero
            clip = clip + noise * rng.standard_normal(clip.shape, dtype=np.float32)
            clips.append(clip)
            labels.append(label)
    x = np.stack(clips).astype(np.float32)
    y = np.asarray(labels, dtype=np.int64)
    n_test = max(1, round(0.2 * n_per_class)) if n_per_class > 1 else 0
    train_idx, test_idx = [], []
    for label in range(len(MOTION_CLASSES)):
        block = np.arange(label * n_per_class, (label + 1) * n_per_class)
        test_idx.append(block[: n_test])
        train_idx.append(block[n_test:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    return MotionDataset(x[train_idx], y[train_idx], x[test_idx], y[test_idx])


# ---------------------------------------------------------------------------
# voxel shapes

SHAPE_CLASSES = ("box", "sphere", "cylinder", "torus")


def _coords():
    z, y, x = np.indices((VOXEL_SIDE,) * 3)
    return z, y, x


def box_occupancy(size: tuple[int, int, int], corner: tuple[int, int, int]) -> np.ndarray:
    """Axis-aligned solid box; occupancy count is exactly the voxel product."""
    d, h, w = size
    z0, y0, x0 = corner
    if min(size) < 1 or min(corner) < 0 or z0 + d > VOXEL_SIDE or \
            y0 + h > VOXEL_SIDE or x0 + w > VOXEL_SIDE:
        raise SpecError(f"box size={size} corner={corner} does not fit the grid")
    g = np.zeros((VOXEL_SIDE,) * 3, dtype=np.uint8)
    g[z0 : z0 + d, y0 : y0 + h, x0 : x0 + w] = 1
    return g


def sphere_occupancy(radius: float, center=(15.5, 15.5, 15.5)) -> np.ndarray:
    z, y, x = _coords()
    cz, cy, cx = center
    g = (z - cz) ** 2 + (y - cy) ** 2 + (x - cx) ** 2 <= radius**2
    return g.astype(np.uint8)


def cylinder_occupancy(radius: float, height: int,
                       center=(15.5, 15.5, 15.5)) -> np.ndarray:
    """Vertical-axis solid cylinder."""
    z, y, x = _coords()
    cz, cy, cx = center
    radial = (y - cy) ** 2 + (x - cx) ** 2 <= radius**2
    axial = np.abs(z - cz) <= height / 2.0
    return (radial & axial).astype(np.uint8)


def torus_occupancy(ring_radius: float, tube_radius: float,
                    center=(15.5, 15.5, 15.5)) -> np.ndarray:
    """Torus lying in the horizontal plane (ring axis vertical)."""
    z, y, x = _coords()
    cz, cy, cx = center
    radial = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
    g = (radial - ring_radius) ** 2 + (z - cz) ** 2 <= tube_radius**2
    return g.astype(np.uint8)


def gen_synthetic_shapes(n_per_class: int, seed: int = 0):
    """(grids uint8 (N,32,32,32), labels int64, class names), deterministic."""
    if n_per_class < 1:
        raise SpecError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    grids = []
    labels = []
    c = (VOXEL_SIDE - 1) / 2.0

    def jc():
        return tuple(c + rng.uniform(-2, 2) for _ in range(3))

    for label, name in enumerate(SHAPE_CLASSES):
        for _ in range(n_per_class):
            if name == "box":
                size = tuple(int(v) for v in rng.integers(8, 21, size=3))
                corner = tuple(
                    int(rng.integers(0, VOXEL_SIDE - s + 1)) for s in size
                )
                g = box_occupancy(size, corner)
            elif name == "sphere":
                g = sphere_occupancy(rng.uniform(6, 12), jc())
            elif name == "cylinder":
                g = cylinder_occupancy(rng.uniform(5, 10),
                                       int(rng.integers(10, 25)), jc())
            else:
                g = torus_occupancy(rng.uniform(7, 11), rng.uniform(2, 4.5), jc())
            grids.append(g)
            labels.append(label)
    return (np.stack(grids), np.asarray(labels, dtype=np.int64), SHAPE_CLASSES)


# ---------------------------------------------------------------------------
# augmentation


def rotate_azimuth(grid: np.ndarray, step: int) -> np.ndarray:
    """Rotate by step * 30 degrees about the vertical (first) axis.

    Steps that are multiples of 90 degrees (0, 3, 6, 9) are exact grid
    permutations; the rest use nearest-neighbor resampling around the
    grid center, so a rotated-out voxel is dropped and gaps stay empty.
    """
    if not 0 <= step < 12:
        raise SpecError(f"rotation step must be in [0, 12), got {step}")
    if grid.shape != (VOXEL_SIDE,) * 3:
        raise DimensionError(f"expected a {(VOXEL_SIDE,) * 3} grid, got {grid.shape}")
    if step == 0:
        return grid.copy()
    if step % 3 == 0:
        return np.ascontiguousarray(np.rot90(grid, k=step // 3, axes=(1, 2)))
    theta = step * np.pi / 6.0
    c = (VOXEL_SIDE - 1) / 2.0
    y, x = np.meshgrid(np.arange(VOXEL_SIDE), np.arange(VOXEL_SIDE), indexing="ij")
    # inverse map: source = R(-theta) @ (dest - center) + center
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    src_y = np.rint(cos_t * (y - c) + sin_t * (x - c) + c).astype(np.int64)
    src_x = np.rint(-sin_t * (y - c) + cos_t * (x - c) + c).astype(np.int64)
    valid = (
        (src_y >= 0) & (src_y < VOXEL_SIDE) & (src_x >= 0) & (src_x < VOXEL_SIDE)
    )
    out = np.zeros_like(grid)
    out[:, valid] = grid[:, src_y[valid], src_x[valid]]
    return out


def translate_voxels(grid: np.ndarray, shift: tuple[int, int, int]) -> np.ndarray:
    """Integer shift with zero fill; voxels pushed past an edge are dropped."""
    out = np.zeros_like(grid)
    src = []
    dst = []
    for d, size in zip(shift, grid.shape):
        if abs(d) >= size:
            return out
        src.append(slice(max(0, -d), size - max(0, d)))
        dst.append(slice(max(0, d), size - max(0, -d)))
    out[tuple(dst)] = grid[tuple(src)]
    return out


def flip_horizontal(grid: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(grid[:, :, ::-1])


def scale_voxels(grid: np.ndarray) -> np.ndarray:
    """Map binary occupancy {0,1} to network input values {-1,5}."""
    vals = np.unique(grid)
    if vals.size and not np.isin(vals, (0, 1)).all():
        raise SpecError("voxel grid must be binary before scaling")
    return grid.astype(np.float32) * 6.0 - 1.0


def transform_voxels(grid, rotation_step=0, translation=(0, 0, 0), flip=False,
                     salt_mask=None) -> np.ndarray:
    """Deterministic pre-scaling augmentation core (binary in, binary out)."""
    g = rotate_azimuth(grid, rotation_step)
    if any(translation):
        g = translate_voxels(g, translation)
    if flip:
        g = flip_horizontal(g)
    if salt_mask is not None:
        g = (g | salt_mask.astype(np.uint8)).astype(np.uint8)
    return g


def augment_voxels(grid: np.ndarray, seed, salt_fraction: float = 0.01) -> np.ndarray:
    """One random augmentation draw, then {0,1} -> {-1,5} scaling.

    ``seed`` may be an int or a numpy Generator.  Draws: rotation step
    uniform in 0..11, per-axis translation uniform in [-2, 2], horizontal
    flip with probability 1/2, salt noise turning on each voxel with
    probability ``salt_fraction``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not 0 <= salt_fraction < 1:
        raise SpecError(f"salt_fraction must be in [0, 1), got {salt_fraction}")
    step = int(rng.integers(0, 12))
    shift = tuple(int(v) for v in rng.integers(-2, 3, size=3))
    flip = bool(rng.random() < 0.5)
    salt = rng.random(grid.shape) < salt_fraction if salt_fraction > 0 else None
    return scale_voxels(transform_voxels(grid, step, shift, flip, salt))


def voxels_to_clip(grids: np.ndarray) -> np.ndarray:
    """Scaled grids (n, 32, 32, 32) -> feature map (n, 1, 32, 32, 32)."""
    g = np.asarray(grids, dtype=np.float32)
    if g.ndim == 3:
        g = g[None]
    if g.ndim != 4:
        raise DimensionError(f"expected (n, d, h, w) grids, got {g.shape}")
    return np.ascontiguousarray(g[:, None])
