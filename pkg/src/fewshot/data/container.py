from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError

SPLITS = ("base", "validation", "novel")

# fixed input normalization for uint8 pixels
PIXEL_MEAN = 127.5
PIXEL_SCALE = 64.0


def to_float(images, dtype=np.float32):
    """uint8 [B, C, H, W] -> centred floats of roughly unit scale."""
    return ((np.asarray(images, dtype=np.float32) - PIXEL_MEAN) / PIXEL_SCALE).astype(dtype)


@dataclass
class DatasetContainer:
    """Images, integer labels, class names and the base/validation/novel split."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list
    split: dict
    _by_class: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.uint32)
        self.class_names = [str(c) for c in self.class_names]
        self.split = {name: [int(c) for c in self.split.get(name, [])] for name in SPLITS}
        self.validate()

    def validate(self):
        if self.images.ndim != 4:
            raise ContractError(f"images must be [N, C, H, W], got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ContractError(f"{self.labels.shape[0]} labels for {self.images.shape[0]} images")
        n = len(self.class_names)
        if self.labels.size and int(self.labels.max()) >= n:
            bad = int(np.flatnonzero(self.labels >= n)[0])
            raise ContractError(f"image {bad} has label {int(self.labels[bad])} >= {n} classes")
        seen = {}
        for name in SPLITS:
            for c in self.split[name]:
                if not 0 <= c < n:
                    raise ContractError(f"split {name!r} names unknown class id {c}")
                if c in seen:
                    raise ContractError(f"class {c} is in both {seen[c]!r} and {name!r} splits")
                seen[c] = name

    @property
    def num_images(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def class_indices(self, c):
        """Sorted image indices of class ``c``."""
        if self._by_class is None:
            order = np.argsort(self.labels, kind="stable")
            bounds = np.searchsorted(self.labels[order], np.arange(len(self.class_names) + 1))
            self._by_class = {
                k: order[bounds[k]:bounds[k + 1]] for k in range(len(self.class_names))
            }
        return self._by_class[int(c)]

    def split_indices(self, name):
        parts = [self.class_indices(c) for c in self.split[name]]
        return np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def split_of(self, c):
        for name in SPLITS:
            if int(c) in self.split[name]:
                return name
        return None


@dataclass
class ImagePool:
    """A set of images drawn from one or more containers (no labels implied)."""

    sources: list  # [(DatasetContainer, index array), ...]

    @classmethod
    def of(cls, ds, indices):
        return cls([(ds, np.asarray(indices, dtype=np.int64))])

    @classmethod
    def empty(cls):
        return cls([])

    def __len__(self):
        return int(sum(len(idx) for _, idx in self.sources))

    def extend(self, other):
        return ImagePool(self.sources + [s for s in other.sources if len(s[1])])

    def images(self, positions):
        """uint8 images at pool ``positions`` (in the given order)."""
        positions = np.asarray(positions, dtype=np.int64)
        if not self.sources:
            if positions.size:
                raise IndexError("empty pool")
            return np.zeros((0, 3, 1, 1), dtype=np.uint8)
        out = None
        start = 0
        for ds, idx in self.sources:
            mask = (positions >= start) & (positions < start + len(idx))
            if out is None:
                out = np.empty((positions.size,) + ds.image_shape, dtype=np.uint8)
            if mask.any():
                out[mask] = ds.images[idx[positions[mask] - start]]
            start += len(idx)
        return out
