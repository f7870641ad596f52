"""Seeded samplers: few-shot episodes, semi-supervised batches, label subsets.

Every sampler is a pure function of its inputs and an integer seed.
"""
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, SamplingError
from .container import ImagePool


def derive_seed(*parts):
    """Mix integers into one 64-bit seed."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 1
    m_query: int = 15
    source_split: str = "novel"

    def __post_init__(self):
        if self.n_way < 2:
            raise ContractError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1 or self.m_query < 0:
            raise ContractError(f"need k_shot >= 1 and m_query >= 0, got {self.k_shot}/{self.m_query}")


@dataclass
class Episode:
    """Support/query image indices with episode-local labels 0..n_way-1."""

    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray
    classes: np.ndarray  # global class ids in draw order

    @property
    def n_way(self):
        return len(self.classes)


def sample_episode(ds, spec, seed, classes=None, allowed=None):
    """Draw one N-way K-shot episode.

    Classes come from ``spec.source_split`` unless ``classes`` is given;
    ``allowed`` optionally restricts the candidate images (sorted index array).
    """
    if classes is None:
        classes = ds.split[spec.source_split]
    need = spec.k_shot + spec.m_query
    pools = {}
    for c in classes:
        idx = ds.class_indices(c)
        if allowed is not None:
            idx = idx[np.isin(idx, allowed, assume_unique=True)]
        if len(idx) >= need:
            pools[int(c)] = idx
    eligible = [int(c) for c in classes if int(c) in pools]
    if len(eligible) < spec.n_way:
        raise SamplingError(
            f"episode needs {spec.n_way} classes with >= {need} images each, "
            f"only {len(eligible)} available in {spec.source_split!r}"
        )
    rng = np.random.default_rng(seed)
    drawn = rng.choice(np.asarray(eligible), size=spec.n_way, replace=False)
    support, query = [], []
    for c in drawn:
        picked = rng.choice(pools[int(c)], size=need, replace=False)
        support.append(picked[:spec.k_shot])
        query.append(picked[spec.k_shot:])
    local = np.arange(spec.n_way)
    return Episode(
        support=np.concatenate(support),
        support_labels=np.repeat(local, spec.k_shot),
        query=np.concatenate(query),
        query_labels=np.repeat(local, spec.m_query),
        classes=drawn.astype(np.int64),
    )


@dataclass
class SemiSupBatch:
    labeled_images: np.ndarray
    labels: np.ndarray  # base-class positions 0..N_b-1
    unlabeled_images: np.ndarray


@dataclass
class LabeledPool:
    """Base-class images that keep their labels, as indices into one container."""

    ds: object
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)

    def base_labels(self, positions):
        """Labels of pooled images remapped to base-class positions."""
        lookup = {c: i for i, c in enumerate(self.ds.split["base"])}
        raw = self.ds.labels[self.indices[positions]]
        return np.array([lookup[int(c)] for c in raw], dtype=np.int64)


def compose_batch(labeled_pool, unlabeled_pool, b_l, b_u, seed):
    """One mini-batch: ``b_l`` labelled and ``b_u`` unlabelled images.

    Draws are without replacement inside a batch; successive batches are
    independent. The labelled and unlabelled draws use separate streams so
    an empty unlabelled part leaves the labelled part unchanged.
    """
    if b_l > len(labeled_pool):
        raise SamplingError(f"batch wants {b_l} labeled images, pool has {len(labeled_pool)}")
    if b_u > len(unlabeled_pool):
        raise SamplingError(f"batch wants {b_u} unlabeled images, pool has {len(unlabeled_pool)}")
    rng_l = np.random.default_rng([int(seed), 0])
    pos = rng_l.choice(len(labeled_pool), size=b_l, replace=False)
    ds = labeled_pool.ds
    labeled_images = ds.images[labeled_pool.indices[pos]]
    labels = labeled_pool.base_labels(pos)
    if b_u > 0:
        rng_u = np.random.default_rng([int(seed), 1])
        upos = rng_u.choice(len(unlabeled_pool), size=b_u, replace=False)
        unlabeled_images = unlabeled_pool.images(upos)
    else:
        unlabeled_images = np.zeros((0,) + ds.image_shape, dtype=np.uint8)
    return SemiSupBatch(labeled_images, labels, unlabeled_images)


def round_half_up(x):
    return int(math.floor(x + 0.5 + 1e-9))


def subsample_labels(ds, mu, seed):
    """Keep labels for ``round(mu * count)`` images of every base class.

    Returns ``(LabeledPool, ImagePool)``: the labelled subset and the rest
    of the base images as an unlabelled pool. Both are sorted and disjoint.
    """
    if not 0 < mu <= 1:
        raise ContractError(f"label fraction mu must be in (0, 1], got {mu}")
    rng = np.random.default_rng(seed)
    keep, rest = [], []
    for c in ds.split["base"]:
        idx = ds.class_indices(c)
        n = round_half_up(mu * len(idx))
        if n == 0:
            raise SamplingError(f"mu={mu} leaves class {c} ({len(idx)} images) with no labeled image")
        perm = rng.permutation(idx)
        keep.append(perm[:n])
        rest.append(perm[n:])
    keep = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    rest = np.sort(np.concatenate(rest)) if rest else np.zeros(0, dtype=np.int64)
    return LabeledPool(ds, keep), ImagePool.of(ds, rest)
