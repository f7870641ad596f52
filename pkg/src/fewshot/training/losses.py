"""Stage-one objectives: few-shot losses, pretext losses and their combination.

Pretext losses sum the per-image negative log-likelihood over all rotations
(or all 8 neighbour positions) and average over images, which equals
4 (or 8) times the mean cross-entropy over the expanded batch.
"""
from dataclasses import dataclass, field

import numpy as np

from ..data.container import to_float
from ..errors import ConfigError, ContractError, LabelError
from ..models import compute_prototypes, pn_logits
from ..ssl import extract_patch_batch, make_rotation_batch
from ..tensor import Tensor, concat, reshape, scale, take
from ..tensor.functional import softmax_cross_entropy

N_ROTATIONS = 4
N_LOCATIONS = 8


def _inputs(model, images):
    """uint8 images -> normalized floats in the model's dtype; floats pass through."""
    dtype = model.extractor.block0.conv.weight.dtype
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return to_float(images, dtype)
    return images.astype(dtype, copy=False)


def cc_loss_from_features(model, feats, labels):
    if model.classifier is None:
        raise ContractError("cosine-classifier loss needs a model with a classifier")
    labels = np.asarray(labels)
    n = model.n_base_classes
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise LabelError(f"labels must be base-class positions in [0, {n}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    return softmax_cross_entropy(model.classifier.logits(feats), labels)


def loss_cc(model, images, labels, rotation_augmentation=False, training=True):
    """Mean negative log-likelihood of the cosine classifier over a labelled batch."""
    x = _inputs(model, images)
    labels = np.asarray(labels)
    if rotation_augmentation:
        x, _ = make_rotation_batch(x)
        labels = np.repeat(labels, N_ROTATIONS)
    feats, _ = model.extractor(x, training)
    return cc_loss_from_features(model, feats, labels)


def pn_loss_from_features(support_feats, support_labels, query_feats, query_labels, n_way, sim):
    if query_feats.shape[0] == 0:
        raise ContractError("prototypical loss needs at least one query image")
    protos = compute_prototypes(support_feats, support_labels, n_way)
    return softmax_cross_entropy(pn_logits(query_feats, protos, sim), query_labels)


def loss_pn(model, support_images, support_labels, query_images, query_labels,
            sim="neg_sq_euclidean", training=True):
    """Prototypical-network loss of one training episode (support and query share one forward)."""
    if len(query_images) == 0:
        raise ContractError("prototypical loss needs at least one query image")
    ns = len(support_images)
    x = _inputs(model, np.concatenate([support_images, query_images]))
    feats, _ = model.extractor(x, training)
    n_way = int(np.max(support_labels)) + 1
    return pn_loss_from_features(
        take(feats, slice(0, ns)), support_labels, take(feats, slice(ns, None)), query_labels, n_way, sim,
    )


def rotation_loss_from_maps(model, maps, rot_labels, training=True):
    if model.rot_head is None:
        raise ContractError("rotation loss needs a model with a rotation head")
    return scale(softmax_cross_entropy(model.rot_head.logits(maps, training), rot_labels), N_ROTATIONS)


def loss_rotation(model, images, training=True):
    """Per image, the summed NLL over its four rotations; averaged over images."""
    x, rot = make_rotation_batch(_inputs(model, images))
    _, maps = model.extractor(x, training)
    return rotation_loss_from_maps(model, maps, rot, training)


def location_terms(model, images, seed, aux_labels=None, training=True):
    """Relative-location loss and (if ``aux_labels`` is given) the patch classification loss."""
    if model.loc_head is None:
        raise ContractError("location loss needs a model with a location head")
    patches = extract_patch_batch(np.asarray(images), seed)
    B = patches.shape[0]
    dtype = model.extractor.block0.conv.weight.dtype
    flat = patches.reshape((B * 9,) + patches.shape[2:]).astype(dtype)
    pf = model.extractor.patch_features(flat, training)
    base = 9 * np.arange(B)
    centers = take(pf, np.repeat(base, N_LOCATIONS))
    neighbors = take(pf, (base[:, None] + np.arange(1, 9)[None, :]).reshape(-1))
    logits = model.loc_head.logits(centers, neighbors, training)
    targets = np.tile(np.arange(N_LOCATIONS), B)
    loc = scale(softmax_cross_entropy(logits, targets), N_LOCATIONS)
    aux = None
    if aux_labels is not None:
        if model.patch_aux is None:
            raise ContractError("patch classification loss needs a model with a patch_aux head")
        aux_labels = np.asarray(aux_labels)
        nl = len(aux_labels)
        merged = reshape(take(pf, slice(0, 9 * nl)), (nl, 9, pf.shape[1])).mean(axis=1)
        aux = softmax_cross_entropy(model.patch_aux.logits(merged), aux_labels)
    return loc, aux


def loss_location(model, images, seed, labels=None, patch_aux=False, training=True):
    """Summed NLL over the 8 neighbour positions, averaged over images.

    With ``patch_aux`` the patch-based classification loss on ``labels`` is
    added with unit weight.
    """
    loc, aux = location_terms(model, images, seed, labels if patch_aux else None, training)
    return loc if aux is None else loc + aux


@dataclass
class StepBatch:
    """Inputs of one training step.

    For CC, ``images``/``labels`` are the labelled batch (labels are base-class
    positions). For PN they hold the episode: ``n_support`` support images
    followed by the queries, with episode-local labels.
    """

    images: np.ndarray
    labels: np.ndarray
    unlabeled: np.ndarray = None
    n_support: int = 0
    n_way: int = 0

    def __post_init__(self):
        if self.unlabeled is None:
            self.unlabeled = np.zeros((0,) + tuple(np.shape(self.images)[1:]), dtype=np.uint8)


@dataclass
class StepLoss:
    total: Tensor
    terms: dict = field(default_factory=dict)
    correct: int = 0
    counted: int = 0


def _few_from_features(model, feats, batch, rows, config, sim):
    if config.method == "CC":
        labels = np.asarray(batch.labels)
        if config.rotation_augmentation:
            labels = np.repeat(labels, N_ROTATIONS)
        selected = feats if rows is None else take(feats, rows)
        loss = cc_loss_from_features(model, selected, labels)
        pred = np.argmax(model.classifier.logits(Tensor(selected.data)).data, axis=1)
        return loss, int((pred == labels).sum()), len(labels)
    ns = batch.n_support
    sup = take(feats, rows[:ns] if rows is not None else slice(0, ns))
    qry = take(feats, rows[ns:] if rows is not None else slice(ns, len(batch.labels)))
    loss = pn_loss_from_features(sup, batch.labels[:ns], qry, batch.labels[ns:], batch.n_way, sim)
    protos = compute_prototypes(Tensor(sup.data), batch.labels[:ns], batch.n_way)
    pred = np.argmax(pn_logits(Tensor(qry.data), protos, sim).data, axis=1)
    return loss, int((pred == batch.labels[ns:]).sum()), len(batch.labels) - ns


def total_step_loss(model, batch, config, seed, training=True, sim="neg_sq_euclidean"):
    """Few-shot loss + patch classification loss + alpha * self-supervised loss.

    Unlabelled images only enter the self-supervised term. Terms are summed
    in that fixed order.
    """
    n_unl = len(batch.unlabeled)
    if n_unl and not config.semi_supervised:
        raise ConfigError("unlabeled images given but semi_supervised is false")
    use_few = not config.selfsup_only
    nl = len(batch.images)
    terms = {}
    correct = counted = 0
    few = None
    sl = slice(0, nl)

    if config.ssl_task == "rotation":
        pool = np.concatenate([batch.images, batch.unlabeled]) if n_unl else np.asarray(batch.images)
        x, rot = make_rotation_batch(_inputs(model, pool))
        feats, maps = model.extractor(x, training)
        if use_few:
            if config.method == "CC" and config.rotation_augmentation:
                rows = np.arange(N_ROTATIONS * nl) if n_unl else None
            else:
                rows = N_ROTATIONS * np.arange(nl)
            few, correct, counted = _few_from_features(model, feats, batch, rows, config, sim)
        terms["self"] = rotation_loss_from_maps(model, maps, rot, training)
    else:
        if use_few:
            x = _inputs(model, batch.images)
            if config.method == "CC" and config.rotation_augmentation:
                x, _ = make_rotation_batch(x)
            feats, _ = model.extractor(x, training)
            few, correct, counted = _few_from_features(model, feats, batch, None, config, sim)
        if config.ssl_task == "location":
            pool = np.concatenate([batch.images, batch.unlabeled]) if n_unl else np.asarray(batch.images)
            aux_labels = batch.labels[sl] if (config.patch_aux_loss and use_few) else None
            loc, aux = location_terms(model, pool, seed, aux_labels, training)
            if aux is not None:
                terms["patch_aux"] = aux
            terms["self"] = loc

    total = None
    if few is not None:
        terms = {"few": few, **terms}
        total = few
    if "patch_aux" in terms:
        total = terms["patch_aux"] if total is None else total + terms["patch_aux"]
    if "self" in terms:
        weighted = scale(terms["self"], config.alpha)
        total = weighted if total is None else total + weighted
    if total is None:
        raise ConfigError("configuration yields an empty objective")
    return StepLoss(total, terms, correct, counted)
