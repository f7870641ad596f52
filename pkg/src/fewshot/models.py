"""Feature extractors, classifiers and pretext-task heads.

Parameter namespaces are kept disjoint (``extractor.*``, ``classifier.*``,
``rot_head.*``, ``loc_head.*``, ``patch_aux.*``) so the few-shot and
self-supervised parts of the objective can be told apart by name.
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Module, Parameter, Tensor, concat, exp, functional as F, reshape
from .tensor.nn import BatchNorm, Conv2d, Linear, fan_in_uniform

EPS_COS = 1e-8


@dataclass
class ModelConfig:
    widths: list = field(default_factory=lambda: [64, 64, 64, 64])
    in_channels: int = 3
    image_size: int = 32
    gamma_init: float = 10.0
    rot_widths: list = None
    loc_hidden: int = None
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ContractError(f"feature extractor needs 4 positive block widths, got {self.widths}")
        if self.image_size % 16:
            raise DimensionError(f"image size {self.image_size} is not divisible by 16")
        if self.rot_widths is None:
            last = self.widths[3]
            self.rot_widths = [512, 512] if last >= 512 else [2 * last, 4 * last]
        self.rot_widths = [int(w) for w in self.rot_widths]
        if self.loc_hidden is None:
            self.loc_hidden = 1024 if self.widths[3] >= 512 else 256

    @property
    def feature_dim(self):
        side = self.image_size // 16
        return self.widths[3] * side * side

    @property
    def patch_feature_dim(self):
        return self.widths[3]

    def to_dict(self):
        return asdict(self)


class ConvBlock(Module):
    """conv3x3 -> BatchNorm -> ReLU -> 2x2 max-pool."""

    def __init__(self, in_ch, out_ch, rng, momentum, eps):
        self.conv = Conv2d(in_ch, out_ch, rng)
        self.bn = BatchNorm(out_ch, momentum=momentum, eps=eps)

    def __call__(self, x, training, floor=False):
        x = self.bn(self.conv(x), training).relu()
        return F.max_pool2x2(x, floor=floor)


class FeatureExtractor(Module):
    def __init__(self, config, rng):
        self.config = config
        in_ch = config.in_channels
        for i, width in enumerate(config.widths):
            setattr(self, f"block{i}", ConvBlock(in_ch, width, rng, config.bn_momentum, config.bn_eps))
            in_ch = width

    def named_parameters(self, prefix=""):
        for i in range(4):
            yield from getattr(self, f"block{i}").named_parameters(f"{prefix}block{i}.")

    def named_buffers(self, prefix=""):
        for i in range(4):
            yield from getattr(self, f"block{i}").named_buffers(f"{prefix}block{i}.")

    def _modules(self):
        yield self
        for i in range(4):
            yield from getattr(self, f"block{i}")._modules()

    def __call__(self, imgs, training):
        """Return ``(flat_features [B, d], final_feature_map [B, C, h, w])``."""
        imgs = imgs if isinstance(imgs, Tensor) else Tensor(imgs)
        if imgs.ndim != 4 or imgs.shape[1] != self.config.in_channels:
            raise DimensionError(f"feature_extract: bad input shape {imgs.shape}")
        H, W = imgs.shape[2:]
        if H != W or H % 16:
            raise DimensionError(f"feature_extract: input {H}x{W} must be square with side divisible by 16")
        x = imgs
        for i in range(4):
            x = getattr(self, f"block{i}")(x, training)
        return reshape(x, (x.shape[0], -1)), x

    def patch_features(self, patches, training):
        """Features of small patches: floor pooling, then global average pooling."""
        x = patches if isinstance(patches, Tensor) else Tensor(patches)
        for i in range(4):
            x = getattr(self, f"block{i}")(x, training, floor=True)
        return F.global_avg_pool(x)


def cosine_logits(f, w, gamma):
    """``gamma * <f, w_j> / (|f| |w_j| + 1e-8)`` for every row of ``f`` and ``w``."""
    dot = f @ w.T
    denom = F.l2norm(f) @ F.l2norm(w).T + EPS_COS
    return gamma * (dot / denom)


def cosine_scores(f, w, gamma):
    """Row-stochastic class probabilities of the cosine classifier."""
    f, w = _as_tensor(f), _as_tensor(w)
    if f.ndim != 2 or w.ndim != 2 or f.shape[1] != w.shape[1]:
        raise DimensionError(f"cosine_scores: feature shape {f.shape} vs weight shape {w.shape}")
    return F.softmax(cosine_logits(f, w, _as_tensor(gamma)))


class CosineClassifier(Module):
    """Weight vectors plus a positive inverse temperature kept as ``log_gamma``."""

    def __init__(self, n_classes, dim, rng, gamma=10.0, dtype=np.float32):
        self.weight = Parameter(fan_in_uniform(rng, (n_classes, dim), dim, dtype))
        self.log_gamma = Parameter(np.array(math.log(gamma), dtype=dtype))

    @property
    def gamma(self):
        return exp(self.log_gamma)

    def logits(self, f):
        return cosine_logits(f, self.weight, self.gamma)

    def __call__(self, f):
        return F.softmax(self.logits(f))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _one_hot_means(labels, n_classes, dtype):
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    if n_classes == 0 or (counts[:n_classes] == 0).any():
        missing = [j for j in range(n_classes) if counts[j] == 0]
        raise ContractError(f"compute_prototypes: classes {missing} have no support features")
    avg = np.zeros((n_classes, labels.size), dtype=dtype)
    avg[labels, np.arange(labels.size)] = 1.0 / counts[labels]
    return avg


def compute_prototypes(features, labels, n_classes=None):
    """Per-class mean of ``features`` (rows) grouped by integer ``labels``."""
    features = _as_tensor(features)
    labels = np.asarray(labels)
    if labels.shape != (features.shape[0],):
        raise DimensionError(f"compute_prototypes: {labels.shape} labels for {features.shape[0]} features")
    if labels.size and labels.min() < 0:
        raise ContractError("compute_prototypes: negative label")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    return Tensor(_one_hot_means(labels, n_classes, features.dtype)) @ features


def neg_sq_euclidean(q, protos):
    q, protos = _as_tensor(q), _as_tensor(protos)
    if q.ndim != 2 or protos.ndim != 2 or q.shape[1] != protos.shape[1]:
        raise DimensionError(f"pn_scores: query shape {q.shape} vs prototype shape {protos.shape}")
    diff = reshape(q, (q.shape[0], 1, q.shape[1])) - reshape(protos, (1,) + protos.shape)
    return -(diff * diff).sum(axis=2)


def pn_logits(q, protos, sim="neg_sq_euclidean"):
    if sim == "neg_sq_euclidean":
        return neg_sq_euclidean(q, protos)
    if sim == "cosine":
        return cosine_logits(_as_tensor(q), _as_tensor(protos), 1.0)
    raise ContractError(f"unknown similarity {sim!r}")


def pn_scores(q, protos, sim="neg_sq_euclidean"):
    return F.softmax(pn_logits(q, protos, sim))


class RotationHead(Module):
    """Two conv3x3+BN+ReLU layers on the final feature map, then a 4-way linear layer.

    The output layer starts at zero so the untrained head predicts uniformly.
    """

    def __init__(self, in_ch, widths, spatial, rng, momentum=0.1, eps=1e-5):
        c1, c2 = widths
        self.conv1 = Conv2d(in_ch, c1, rng)
        self.bn1 = BatchNorm(c1, momentum=momentum, eps=eps)
        self.conv2 = Conv2d(c1, c2, rng)
        self.bn2 = BatchNorm(c2, momentum=momentum, eps=eps)
        self.fc = Linear(c2 * spatial * spatial, 4, rng, zero_init=True)
        self.in_ch = in_ch

    def logits(self, maps, training):
        if maps.ndim != 4 or maps.shape[1] != self.in_ch:
            raise DimensionError(f"rotation head expects {self.in_ch} input channels, got shape {maps.shape}")
        x = self.bn1(self.conv1(maps), training).relu()
        x = self.bn2(self.conv2(x), training).relu()
        return self.fc(reshape(x, (x.shape[0], -1)))

    def __call__(self, maps, training):
        return F.softmax(self.logits(maps, training))


class LocationHead(Module):
    """Hidden fully-connected layer (BN + ReLU) on a concatenated pair, then 8-way output.

    The output layer starts at zero, as for the rotation head.
    """

    def __init__(self, dim, hidden, rng, momentum=0.1, eps=1e-5):
        self.fc1 = Linear(2 * dim, hidden, rng)
        self.bn = BatchNorm(hidden, momentum=momentum, eps=eps)
        self.fc2 = Linear(hidden, 8, rng, zero_init=True)
        self.dim = dim

    def logits(self, f0, fp, training):
        if f0.ndim != 2 or f0.shape != fp.shape or f0.shape[1] != self.dim:
            raise DimensionError(
                f"location head expects two [B, {self.dim}] inputs, got {f0.shape} and {fp.shape}"
            )
        x = concat([f0, fp], axis=1)
        return self.fc2(self.bn(self.fc1(x), training).relu())

    def __call__(self, f0, fp, training):
        return F.softmax(self.logits(f0, fp, training))


def merge_patch_features(patch_feats):
    """Average the 9 patch features of each image: [B, 9, d] -> [B, d]."""
    patch_feats = _as_tensor(patch_feats)
    if patch_feats.ndim != 3 or patch_feats.shape[1] != 9:
        raise ContractError(f"patch classifier needs 9 patch features per image, got shape {patch_feats.shape}")
    return patch_feats.mean(axis=1)


def patch_aux_classify(patch_feats, aux):
    """Probabilities over base classes from merged patch features."""
    return aux(merge_patch_features(patch_feats))


COMPONENTS = ("extractor", "classifier", "rot_head", "loc_head", "patch_aux")


class FewShotModel(Module):
    """Feature extractor plus whichever heads a training regime needs."""

    def __init__(self, config, n_base_classes, components=("extractor", "classifier"), seed=0):
        unknown = set(components) - set(COMPONENTS)
        if unknown or "extractor" not in components:
            raise ContractError(f"bad component list {components}")
        self.config = config
        self.n_base_classes = int(n_base_classes)
        self.components = tuple(c for c in COMPONENTS if c in components)
        rng = np.random.default_rng([int(seed), 0x5EED])
        self.extractor = FeatureExtractor(config, rng)
        self.classifier = self.rot_head = self.loc_head = self.patch_aux = None
        if "classifier" in components:
            self.classifier = CosineClassifier(n_base_classes, config.feature_dim, rng, config.gamma_init)
        if "rot_head" in components:
            self.rot_head = RotationHead(
                config.widths[3], config.rot_widths, config.image_size // 16, rng,
                config.bn_momentum, config.bn_eps,
            )
        if "loc_head" in components:
            self.loc_head = LocationHead(
                config.patch_feature_dim, config.loc_hidden, rng, config.bn_momentum, config.bn_eps,
            )
        if "patch_aux" in components:
            self.patch_aux = CosineClassifier(
                n_base_classes, config.patch_feature_dim, rng, config.gamma_init
            )
        for name, p in self.named_parameters():
            p.name = name

    def named_parameters(self, prefix=""):
        for comp in self.components:
            yield from getattr(self, comp).named_parameters(f"{prefix}{comp}.")

    def named_buffers(self, prefix=""):
        for comp in self.components:
            yield from getattr(self, comp).named_buffers(f"{prefix}{comp}.")

    def _modules(self):
        yield self
        for comp in self.components:
            yield from getattr(self, comp)._modules()

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            p.assign(state[name])
        for module, attr, name in self._buffer_slots():
            value = np.asarray(state[name])
            current = getattr(module, attr)
            if value.shape != current.shape:
                raise DimensionError(f"buffer {name}: shape {value.shape} != {current.shape}")
            setattr(module, attr, value.astype(current.dtype, copy=True))

    def _buffer_slots(self):
        for comp in self.components:
            for name, module in _named_modules(getattr(self, comp), comp):
                for attr in getattr(module, "_buffer_names", ()):
                    yield module, attr, f"{name}.{attr}"

    def features(self, imgs, training=False):
        return self.extractor(imgs, training)

    def rotation_head_forward(self, maps, training=False):
        if self.rot_head is None:
            raise ContractError("model has no rotation head")
        return self.rot_head(maps, training)

    def location_head_forward(self, f0, fp, training=False):
        if self.loc_head is None:
            raise ContractError("model has no location head")
        return self.loc_head(f0, fp, training)


def _named_modules(module, prefix):
    yield prefix, module
    for name, value in vars(module).items():
        if isinstance(value, Module):
            yield from _named_modules(value, f"{prefix}.{name}")


def novel_weights_from_shots(model, support_images, support_labels, n_classes=None):
    """Class weight vectors for novel classes: mean frozen feature per class."""
    from .tensor import no_grad

    with no_grad():
        feats, _ = model.extractor(support_images, training=False)
    return compute_prototypes(feats, support_labels, n_classes)


def analytic_param_count(config, n_base_classes, components):
    """Closed-form number of scalar parameters for a configuration."""
    total, in_ch = 0, config.in_channels
    for w in config.widths:
        total += w * in_ch * 9 + w + 2 * w
        in_ch = w
    d = config.feature_dim
    if "classifier" in components:
        total += n_base_classes * d + 1
    if "rot_head" in components:
        c1, c2 = config.rot_widths
        s = config.image_size // 16
        total += c1 * in_ch * 9 + c1 + 2 * c1 + c2 * c1 * 9 + c2 + 2 * c2 + 4 * c2 * s * s + 4
    if "loc_head" in components:
        h, pd = config.loc_hidden, config.patch_feature_dim
        total += h * 2 * pd + h + 2 * h + 8 * h + 8
    if "patch_aux" in components:
        total += n_base_classes * config.patch_feature_dim + 1
    return total
