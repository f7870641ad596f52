"""Dataset container, FSDS file format, samplers and the synthetic generator."""
from .container import SPLITS, DatasetContainer, ImagePool, to_float
from .fsds import decode, encode, load_dataset, save_dataset
from .sampling import (
    Episode, EpisodeSpec, LabeledPool, SemiSupBatch, compose_batch, derive_seed,
    round_half_up, sample_episode, subsample_labels,
)
from .synthetic import CAPACITY, make_synthetic

__all__ = [
    "SPLITS", "DatasetContainer", "ImagePool", "to_float", "decode", "encode", "load_dataset",
    "save_dataset", "Episode", "EpisodeSpec", "LabeledPool", "SemiSupBatch", "compose_batch",
    "derive_seed", "round_half_up", "sample_episode", "subsample_labels", "CAPACITY",
    "make_synthetic",
]
