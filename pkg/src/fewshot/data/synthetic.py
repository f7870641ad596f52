"""Procedural few-shot dataset generator.

A class is a combination of (shape family, stroke count, fill pattern, hue
band). Every image renders that combination at a random position and scale,
with at most 15 degrees of orientation jitter, over a textured background.
The background carries no orientation cue; the shapes (and the tally marks
drawn above them) have no 90-degree rotational symmetry, so the upright
orientation is recoverable only from the object.
"""
import colorsys
import itertools

import numpy as np

from ..errors import CapacityError, DimensionError
from .container import DatasetContainer


def _ell(u, v):
    return ((np.abs(u + 0.5) < 0.25) & (np.abs(v) < 0.9)) | ((np.abs(v - 0.65) < 0.25) & (u > -0.75) & (u < 0.8))


def _tee(u, v):
    return ((np.abs(v + 0.65) < 0.25) & (np.abs(u) < 0.9)) | ((np.abs(u) < 0.25) & (v > -0.7) & (v < 0.9))


def _arrow(u, v):
    head = (v > -0.9) & (v < 0.1) & (np.abs(u) < (v + 0.9) * 0.9)
    shaft = (np.abs(u) < 0.25) & (v >= 0.1) & (v < 0.9)
    return head | shaft


def _flag(u, v):
    pole = (np.abs(u + 0.7) < 0.15) & (np.abs(v) < 0.9)
    cloth = (u > -0.7) & (u < 0.8) & (v > -0.9) & (v < -0.15)
    return pole | cloth


def _hook(u, v):
    stem = (np.abs(u - 0.45) < 0.22) & (v > -0.9) & (v < 0.85)
    base = (u > -0.65) & (u < 0.67) & (v > 0.45) & (v < 0.85)
    tip = (np.abs(u + 0.45) < 0.2) & (v > 0.05) & (v < 0.85)
    return stem | base | tip


def _wedge(u, v):
    return (u > -0.9) & (v < 0.9) & (v > u)


def _step(u, v):
    low = (v > 0.3) & (v < 0.9) & (np.abs(u) < 0.9)
    mid = (v > -0.3) & (v < 0.9) & (u > -0.3) & (u < 0.9)
    top = (v > -0.9) & (v < 0.9) & (u > 0.3) & (u < 0.9)
    return low | mid | top


def _key(u, v):
    bow = u * u + (v + 0.45) ** 2 < 0.45 ** 2
    blade = (np.abs(u) < 0.15) & (v > -0.1) & (v < 0.9)
    bit = (u > 0.0) & (u < 0.45) & (v > 0.55) & (v < 0.75)
    return bow | blade | bit


FAMILIES = {
    "ell": _ell, "tee": _tee, "arrow": _arrow, "flag": _flag,
    "hook": _hook, "wedge": _wedge, "step": _step, "key": _key,
}
STROKES = (1, 2, 3)
FILLS = ("solid", "stripes", "checker")
HUE_CENTERS = (0.0, 60.0, 120.0, 180.0, 240.0, 300.0)

CAPACITY = len(FAMILIES) * len(STROKES) * len(FILLS) * len(HUE_CENTERS)


def class_attributes(n_classes, seed):
    """Distinct attribute tuples for ``n_classes`` classes, shuffled by seed."""
    combos = list(itertools.product(FAMILIES, STROKES, FILLS, range(len(HUE_CENTERS))))
    if n_classes > len(combos):
        raise CapacityError(f"requested {n_classes} classes, generator supports at most {len(combos)}")
    order = np.random.default_rng([int(seed), 1]).permutation(len(combos))
    return [combos[i] for i in order[:n_classes]]


def _hsv(h_deg, s, v):
    return np.array(colorsys.hsv_to_rgb((h_deg % 360.0) / 360.0, s, v))


def render(attrs, hw, rng):
    """Render one float image in [0, 1] with shape (3, hw, hw)."""
    family, strokes, fill, hue_idx = attrs
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64) + 0.5

    # background: flat colour plus two low-frequency waves
    base = _hsv(rng.uniform(0, 360), rng.uniform(0.05, 0.3), rng.uniform(0.45, 0.65))
    waves = sum(
        0.05 * np.sin(2 * np.pi * (fx * xx + fy * yy) / hw + ph)
        for fx, fy, ph in rng.uniform([-3, -3, 0], [3, 3, 2 * np.pi], size=(2, 3))
    )
    img = base[:, None, None] + waves[None]

    scale = rng.uniform(0.26, 0.36) * hw
    cx, cy = rng.uniform(0.4, 0.6, size=2) * hw
    theta = np.deg2rad(rng.uniform(-15.0, 15.0))
    dx, dy = (xx - cx) / scale, (yy - cy) / scale
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    u = cos_t * dx + sin_t * dy
    v = -sin_t * dx + cos_t * dy

    hue = HUE_CENTERS[hue_idx] + rng.uniform(-12.0, 12.0)
    main = _hsv(hue, rng.uniform(0.65, 0.9), rng.uniform(0.75, 0.95))
    alt = main * 0.45
    mask = FAMILIES[family](u, v)
    if fill == "stripes":
        pattern = (np.floor((v + 1.0) * 2.5) % 2).astype(bool)
    elif fill == "checker":
        pattern = ((np.floor((u + 1.0) * 2.5) + np.floor((v + 1.0) * 2.5)) % 2).astype(bool)
    else:
        pattern = np.zeros_like(mask)
    colour = np.where(pattern[None], alt[:, None, None], main[:, None, None])
    img = np.where(mask[None], colour, img)

    # tally marks above the shape, in the shape's own frame
    marks = np.zeros_like(mask)
    for k in range(strokes):
        centre = (k - (strokes - 1) / 2.0) * 0.45
        marks |= (np.abs(u - centre) < 0.1) & (v > -1.45) & (v < -1.05)
    img = np.where(marks[None], 0.08, img)

    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_synthetic(num_classes_per_split=(24, 8, 8), imgs_per_class=200, hw=32, seed=0):
    """Build a :class:`DatasetContainer` of procedurally rendered images."""
    if hw < 32:
        raise DimensionError(f"image size must be >= 32 for the patch pipeline, got {hw}")
    n_base, n_val, n_novel = (int(n) for n in num_classes_per_split)
    total = n_base + n_val + n_novel
    attrs = class_attributes(total, seed)
    images = np.empty((total * imgs_per_class, 3, hw, hw), dtype=np.uint8)
    labels = np.repeat(np.arange(total, dtype=np.uint32), imgs_per_class)
    for c, a in enumerate(attrs):
        rng = np.random.default_rng([int(seed), 2, c])
        for i in range(imgs_per_class):
            images[c * imgs_per_class + i] = np.round(render(a, hw, rng) * 255.0).astype(np.uint8)
    names = [f"{fam}-{s}-{fill}-h{HUE_CENTERS[h]:.0f}" for fam, s, fill, h in attrs]
    split = {
        "base": list(range(n_base)),
        "validation": list(range(n_base, n_base + n_val)),
        "novel": list(range(n_base + n_val, total)),
    }
    return DatasetContainer(images, labels, names, split)
