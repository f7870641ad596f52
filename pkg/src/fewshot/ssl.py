"""Pretext-task inputs: rotated copies and 3x3 patch grids.

Rotation labels 0..3 mean 0, 90, 180 and 270 degrees counter-clockwise.
Patch grids follow a fixed pipeline: bilinear resize to 96x96, grayscale
with probability 0.66 (one draw per image), 3x3 grid of 32x32 regions, a
random 24x24 crop per region, then per-patch standardization.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

ROTATION_DEGREES = (0, 90, 180, 270)

RESIZE_TO = 96
REGION = 32
PATCH = 24
GRAYSCALE_PROB = 0.66
LUMA = np.array([0.299, 0.587, 0.114])
STD_FLOOR = 1e-6

# grid cells (row, col) of x^0 (centre) followed by the 8 neighbours in row-major order
GRID_CELLS = ((1, 1), (0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2))


def rotation_degrees(r):
    return ROTATION_DEGREES[r]


def rotation_index(degrees):
    return ROTATION_DEGREES.index(int(degrees) % 360)


def rotate_image(img, r):
    """Rotate a [C, H, W] image by ``r`` quarter turns counter-clockwise."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[1] != img.shape[2]:
        raise DimensionError(f"rotate_image needs a square [C, H, W] image, got shape {img.shape}")
    return np.ascontiguousarray(np.rot90(img, k=int(r) % 4, axes=(1, 2)))


def make_rotation_batch(imgs):
    """All four rotations of every image; output row ``4*i + r`` is image i rotated by r."""
    imgs = np.asarray(imgs)
    if imgs.ndim != 4 or imgs.shape[2] != imgs.shape[3]:
        raise DimensionError(f"make_rotation_batch needs square [B, C, H, W] images, got {imgs.shape}")
    rotated = np.stack([np.rot90(imgs, k=r, axes=(2, 3)) for r in range(4)], axis=1)
    labels = np.tile(np.arange(4), imgs.shape[0])
    return rotated.reshape((-1,) + imgs.shape[1:]), labels


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize of [C, H, W] with corner-aligned sampling.

    Output pixel (i, j) samples the source at
    ``(i * (H - 1) / (out_h - 1), j * (W - 1) / (out_w - 1))``.
    """
    img = np.asarray(img, dtype=np.float64)
    _, H, W = img.shape

    def axis_weights(n_in, n_out):
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
        lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis_weights(H, out_h)
    x0, x1, wx = axis_weights(W, out_w)
    rows = img[:, y0, :] * (1 - wy)[None, :, None] + img[:, y1, :] * wy[None, :, None]
    return rows[:, :, x0] * (1 - wx)[None, None, :] + rows[:, :, x1] * wx[None, None, :]


def standardize(patch):
    """Zero mean, unit std over the whole patch; constant patches become zeros."""
    if patch.max() == patch.min():
        return np.zeros_like(patch)
    return (patch - patch.mean()) / max(patch.std(), STD_FLOOR)


@dataclass
class PatchSet:
    patches: np.ndarray  # [9, C, 24, 24]; index 0 is the centre, 1..8 the neighbours
    grayscale: bool
    offsets: np.ndarray  # [9, 2] crop offsets inside each 32x32 region
    source_id: int = -1

    @property
    def center(self):
        return self.patches[0]

    def neighbor(self, p):
        return self.patches[p]


def extract_patches(img, seed, source_id=-1):
    """Run the patch pipeline on one [C, H, W] image (pixel values in any range)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"extract_patches needs a [C, H, W] image, got shape {img.shape}")
    rng = np.random.default_rng(seed)
    big = resize_bilinear(img, RESIZE_TO, RESIZE_TO)
    gray = bool(rng.random() < GRAYSCALE_PROB)
    if gray and big.shape[0] == 3:
        big = np.broadcast_to(np.tensordot(LUMA, big, axes=1), big.shape).copy()
    offsets = rng.integers(0, REGION - PATCH + 1, size=(9, 2))
    patches = np.empty((9, big.shape[0], PATCH, PATCH))
    for k, (row, col) in enumerate(GRID_CELLS):
        oy, ox = offsets[k]
        top, left = row * REGION + oy, col * REGION + ox
        patches[k] = standardize(big[:, top:top + PATCH, left:left + PATCH])
    return PatchSet(patches, gray, offsets, source_id)


def make_location_pairs(ps):
    """The 8 (centre, neighbour) pairs and their location labels 1..8."""
    centers = np.repeat(ps.patches[:1], 8, axis=0)
    neighbors = ps.patches[1:].copy()
    return (centers, neighbors), np.arange(1, 9)


def location_cell(p):
    """Grid cell (row, col) of neighbour label ``p`` in 1..8."""
    if not 1 <= p <= 8:
        raise ValueError(f"location label must be in 1..8, got {p}")
    return GRID_CELLS[p]


def extract_patch_batch(imgs, seed):
    """Patch sets for a batch; image i uses a seed derived from (seed, i)."""
    from .data.sampling import derive_seed

    out = [extract_patches(img, derive_seed(seed, i), source_id=i) for i, img in enumerate(imgs)]
    return np.stack([ps.patches for ps in out])
