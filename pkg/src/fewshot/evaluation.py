"""Second-stage episodic evaluation with a frozen feature extractor."""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.container import to_float
from .data.sampling import EpisodeSpec, sample_episode
from .errors import CompatibilityError, ContractError
from .models import compute_prototypes, cosine_logits, pn_logits
from .tensor import Tensor, no_grad

Z95 = 1.96


@dataclass
class EvalProtocol:
    n_way: int = 5
    k_shot: int = 1
    m_query: int = 15
    num_episodes: int = 2000
    base_seed: int = 0
    method: str = "CC"
    similarity: str = "neg_sq_euclidean"
    split: str = "novel"

    def __post_init__(self):
        if self.num_episodes < 1:
            raise ContractError("num_episodes must be >= 1")
        if self.method not in ("CC", "PN"):
            raise ContractError(f"method must be CC or PN, got {self.method!r}")
        if self.similarity not in ("neg_sq_euclidean", "cosine"):
            raise ContractError(f"unknown similarity {self.similarity!r}")

    @property
    def episode_spec(self):
        return EpisodeSpec(self.n_way, self.k_shot, self.m_query, self.split)


@dataclass
class EvalReport:
    protocol: dict
    episode_acc: list
    mean: float
    ci95: float
    ci95_defined: bool
    checkpoint_sha256: str = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "protocol": self.protocol,
            "mean": self.mean,
            "ci95": self.ci95,
            "ci95_defined": self.ci95_defined,
            "episode_acc": self.episode_acc,
            "checkpoint_sha256": self.checkpoint_sha256,
        }
        out.update(self.extra)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def summary(self):
        p = self.protocol
        flag = "" if self.ci95_defined else " (ci95 undefined for a single episode)"
        return (f"{p['n_way']}-way {p['k_shot']}-shot {p['split']}: "
                f"{100 * self.mean:.2f}% ± {100 * self.ci95:.2f}% over {len(self.episode_acc)} episodes{flag}")


def mean_ci95(accs):
    """Mean and 1.96 * sample std / sqrt(E); the CI is (0.0, False) when E == 1."""
    accs = np.asarray(accs, dtype=np.float64)
    mean = float(accs.mean())
    if accs.size < 2:
        return mean, 0.0, False
    return mean, float(Z95 * accs.std(ddof=1) / math.sqrt(accs.size)), True


def extract_features(model, images, batch_size=256):
    """Frozen (eval-mode) flat features for uint8 or float images, as float64."""
    images = np.asarray(images)
    dtype = model.extractor.block0.conv.weight.dtype
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            x = to_float(chunk, dtype) if chunk.dtype == np.uint8 else chunk.astype(dtype)
            feats, _ = model.extractor(Tensor(x), training=False)
            out.append(feats.data.astype(np.float64))
    if not out:
        return np.zeros((0, model.config.feature_dim))
    return np.concatenate(out)


def _gamma(model):
    return float(np.exp(model.classifier.log_gamma.data)) if model.classifier is not None else 1.0


def check_compatible(model, method):
    if method == "CC" and model.classifier is None:
        raise CompatibilityError("CC evaluation needs a checkpoint with a cosine classifier (gamma)")


def episode_predictions(support_feats, support_labels, query_feats, method, n_way,
                        similarity="neg_sq_euclidean", gamma=10.0):
    """Predicted episode-local labels of the queries (ties -> lowest index)."""
    protos = compute_prototypes(Tensor(support_feats), support_labels, n_way)
    if method == "CC":
        scores = cosine_logits(Tensor(query_feats), protos, Tensor(np.float64(gamma)))
    else:
        scores = pn_logits(Tensor(query_feats), protos, similarity)
    return np.argmax(scores.data, axis=1)


def episode_accuracy(support_feats, support_labels, query_feats, query_labels, method, n_way,
                     similarity="neg_sq_euclidean", gamma=10.0):
    pred = episode_predictions(support_feats, support_labels, query_feats, method, n_way, similarity, gamma)
    return float(np.mean(pred == np.asarray(query_labels)))


def eval_episode(model, ds, episode, method="CC", similarity="neg_sq_euclidean"):
    """Accuracy of one episode: novel weights from the shots, then query classification."""
    check_compatible(model, method)
    sf = extract_features(model, ds.images[episode.support])
    qf = extract_features(model, ds.images[episode.query])
    return episode_accuracy(sf, episode.support_labels, qf, episode.query_labels, method,
                            episode.n_way, similarity, _gamma(model))


class FeatureBank:
    """Features of every image of one split, computed once."""

    def __init__(self, model, ds, split):
        self.indices = ds.split_indices(split)
        self.features = extract_features(model, ds.images[self.indices])
        self._pos = {int(i): k for k, i in enumerate(self.indices)}

    def __getitem__(self, image_indices):
        return self.features[[self._pos[int(i)] for i in image_indices]]


def run_episodes(bank, ds, protocol, gamma, seeds, workers=1):
    spec = protocol.episode_spec

    def one(seed):
        ep = sample_episode(ds, spec, seed)
        return episode_accuracy(bank[ep.support], ep.support_labels, bank[ep.query], ep.query_labels,
                                protocol.method, spec.n_way, protocol.similarity, gamma)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


def eval_protocol(model, ds, protocol, checkpoint_sha256=None, workers=1):
    """Average accuracy over ``protocol.num_episodes`` episodes (seed = base_seed + i)."""
    check_compatible(model, protocol.method)
    bank = FeatureBank(model, ds, protocol.split)
    seeds = [protocol.base_seed + i for i in range(protocol.num_episodes)]
    accs = run_episodes(bank, ds, protocol, _gamma(model), seeds, workers)
    mean, ci, ok = mean_ci95(accs)
    return EvalReport(asdict(protocol), accs, mean, ci, ok, checkpoint_sha256)


def classification_accuracy(model, ds, indices, batch_size=256):
    """Base-class accuracy of the cosine classifier on images ``indices`` (eval mode)."""
    check_compatible(model, "CC")
    lookup = {c: i for i, c in enumerate(ds.split["base"])}
    labels = np.array([lookup[int(c)] for c in ds.labels[indices]])
    feats = extract_features(model, ds.images[indices], batch_size)
    w = model.classifier.weight.data.astype(np.float64)
    cos = (feats @ w.T) / (np.linalg.norm(feats, axis=1, keepdims=True) * np.linalg.norm(w, axis=1) + 1e-8)
    return float(np.mean(np.argmax(cos, axis=1) == labels))
