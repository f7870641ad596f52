"""
Rotation and patch-location inputs
===================================

The two self-supervised tasks see the same images through different
lenses: four rotated copies, or a 3x3 grid of jittered patches. This script
renders a synthetic dataset and looks at both.
"""
import numpy as np

from fewshot.data import make_synthetic
from fewshot.ssl import extract_patches, location_cell, make_location_pairs, make_rotation_batch

ds = make_synthetic((4, 2, 2), 10, 32, seed=0)
print(ds.num_images, "images, shape", ds.image_shape)

# rotations: image i lands at rows 4i..4i+3 with labels 0..3 (0, 90, 180, 270 degrees)
batch, labels = make_rotation_batch(ds.images[:2])
print("rotation batch", batch.shape, "labels", labels)
assert np.array_equal(np.rot90(batch[1], k=3, axes=(1, 2)), ds.images[0])

# patches: upscale to 96x96, cut a 3x3 grid, jitter a 24x24 crop inside each cell
ps = extract_patches(ds.images[0], seed=7)
print("patches", ps.patches.shape, "grayscale draw:", ps.grayscale)
print("per-patch mean/std:", ps.patches.mean(axis=(1, 2, 3)).round(6)[:3],
      ps.patches.std(axis=(1, 2, 3)).round(6)[:3])

# location pairs: the centre patch against each of its 8 neighbours
(centers, neighbours), targets = make_location_pairs(ps)
for p in targets[:3]:
    print(f"label {p} is grid cell {location_cell(p)}")

# grayscale is drawn per image with probability 0.66
hits = np.mean([extract_patches(ds.images[0], seed=s).grayscale for s in range(2000)])
print(f"grayscale frequency over 2000 seeds: {hits:.3f}")
