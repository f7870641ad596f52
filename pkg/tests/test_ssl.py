from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fewshot.errors import DimensionError
from fewshot.ssl import (
    GRID_CELLS, LUMA, extract_patch_batch, extract_patches, location_cell, make_location_pairs,
    make_rotation_batch, resize_bilinear, rotate_image, rotation_degrees, rotation_index,
)

from oracles import rotate_oracle

GOLDEN = Path(__file__).parent / "golden" / "ssl_golden.npz"

square_images = hnp.arrays(
    np.uint8, st.tuples(st.integers(1, 3), st.integers(1, 6)).map(lambda t: (t[0], t[1], t[1])),
)


class TestRotation:
    def test_label_bijection(self):
        assert [rotation_degrees(r) for r in range(4)] == [0, 90, 180, 270]
        assert [rotation_index(d) for d in (0, 90, 180, 270)] == [0, 1, 2, 3]

    def test_two_by_two_mapping(self):
        a, b, c, d = 1, 2, 3, 4
        img = np.array([[[a, b], [c, d]]])
        np.testing.assert_array_equal(rotate_image(img, 1)[0], [[b, d], [a, c]])

    @settings(max_examples=200, deadline=None)
    @given(square_images, st.integers(0, 3), st.integers(0, 3))
    def test_group_laws(self, img, r1, r2):
        np.testing.assert_array_equal(rotate_image(img, 0), img)
        np.testing.assert_array_equal(rotate_image(rotate_image(img, r1), r2), rotate_image(img, (r1 + r2) % 4))
        np.testing.assert_array_equal(rotate_image(img, r1), rotate_oracle(img, r1))
        assert sorted(rotate_image(img, r1).ravel()) == sorted(img.ravel())

    def test_non_square(self):
        with pytest.raises(DimensionError):
            rotate_image(np.zeros((3, 4, 5)), 1)

    def test_batch_layout(self, rng):
        imgs = rng.integers(0, 256, size=(2, 3, 5, 5), dtype=np.uint8)
        out, labels = make_rotation_batch(imgs)
        assert out.shape == (8, 3, 5, 5)
        np.testing.assert_array_equal(labels, [0, 1, 2, 3, 0, 1, 2, 3])
        np.testing.assert_array_equal(out[0::4], imgs)
        for k in range(8):
            i, r = divmod(k, 4)
            np.testing.assert_array_equal(rotate_image(out[k], (4 - r) % 4), imgs[i])


def bilinear_oracle(img, size):
    """Corner-aligned bilinear resize, one output pixel at a time."""
    C, H, W = img.shape
    out = np.zeros((C, size, size))
    for i in range(size):
        y = i * (H - 1) / (size - 1)
        y0 = min(int(np.floor(y)), H - 1)
        y1 = min(y0 + 1, H - 1)
        for j in range(size):
            x = j * (W - 1) / (size - 1)
            x0 = min(int(np.floor(x)), W - 1)
            x1 = min(x0 + 1, W - 1)
            fy, fx = y - y0, x - x0
            out[:, i, j] = ((1 - fy) * (1 - fx) * img[:, y0, x0] + (1 - fy) * fx * img[:, y0, x1]
                            + fy * (1 - fx) * img[:, y1, x0] + fy * fx * img[:, y1, x1])
    return out


class TestPatches:
    def test_resize_matches_oracle(self, rng):
        img = rng.normal(size=(2, 7, 7))
        np.testing.assert_allclose(resize_bilinear(img, 12, 12), bilinear_oracle(img, 12), atol=1e-12)
        np.testing.assert_allclose(resize_bilinear(img, 7, 7), img, atol=1e-12)

    def test_patch_statistics(self, small_ds):
        for i in range(20):
            ps = extract_patches(small_ds.images[i], seed=i)
            assert ps.patches.shape == (9, 3, 24, 24)
            means = ps.patches.mean(axis=(1, 2, 3))
            stds = ps.patches.std(axis=(1, 2, 3))
            assert np.abs(means).max() <= 1e-3 and np.abs(stds - 1).max() <= 1e-3

    def test_constant_image_gives_zero_patches(self):
        ps = extract_patches(np.full((3, 32, 32), 77, dtype=np.uint8), seed=0)
        assert not ps.patches.any()

    def test_grayscale_frequency(self, small_ds):
        img = small_ds.images[0]
        hits = sum(extract_patches(img, seed=s).grayscale for s in range(10_000))
        assert abs(hits / 10_000 - 0.66) <= 0.01

    def test_grayscale_uses_luma(self, small_ds):
        img = small_ds.images[5].astype(np.float64)
        seed = next(s for s in range(100) if extract_patches(img, s).grayscale)
        ps = extract_patches(img, seed)
        for k in range(9):
            np.testing.assert_allclose(ps.patches[k, 0], ps.patches[k, 1], atol=1e-12)
        big = resize_bilinear(img, 96, 96)
        luma = np.tensordot(LUMA, big, axes=1)
        row, col = GRID_CELLS[0]
        oy, ox = ps.offsets[0]
        crop = luma[row * 32 + oy:row * 32 + oy + 24, col * 32 + ox:col * 32 + ox + 24]
        np.testing.assert_allclose(ps.patches[0, 0], (crop - crop.mean()) / crop.std(), atol=1e-9)

    def test_crops_stay_in_their_regions(self):
        offsets = np.concatenate([extract_patches(np.zeros((1, 32, 32)), s).offsets for s in range(300)])
        assert offsets.min() == 0 and offsets.max() == 8

    def test_pure_function_of_bytes_and_seed(self, small_ds):
        a = extract_patches(small_ds.images[3], seed=42)
        b = extract_patches(small_ds.images[3].copy(), seed=42)
        np.testing.assert_array_equal(a.patches, b.patches)
        batch = extract_patch_batch(small_ds.images[:4], seed=1)
        alone = extract_patch_batch(small_ds.images[2:3], seed=1)
        assert batch.shape == (4, 9, 3, 24, 24) and alone.shape == (1, 9, 3, 24, 24)

    def test_golden_fixture(self):
        golden = np.load(GOLDEN)
        img = golden["image"]
        out, _ = make_rotation_batch(img[None])
        np.testing.assert_array_equal(out, golden["rotations"])
        ps = extract_patches(img, seed=int(golden["seed"]))
        np.testing.assert_allclose(ps.patches, golden["patches"], rtol=0, atol=1e-12)


class TestLocation:
    def test_pairs_and_labels(self, small_ds):
        ps = extract_patches(small_ds.images[0], seed=0)
        (centers, neighbors), labels = make_location_pairs(ps)
        np.testing.assert_array_equal(labels, np.arange(1, 9))
        for p in range(1, 9):
            np.testing.assert_array_equal(centers[p - 1], ps.center)
            np.testing.assert_array_equal(neighbors[p - 1], ps.neighbor(p))

    def test_labels_biject_with_grid_cells(self):
        cells = [location_cell(p) for p in range(1, 9)]
        expected = [(r, c) for r in range(3) for c in range(3) if (r, c) != (1, 1)]
        assert cells == expected
        assert location_cell(1) == (0, 0)
        with pytest.raises(ValueError):
            location_cell(0)
