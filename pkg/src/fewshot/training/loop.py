"""Stage-one training: SGD with step decay, validation early stopping."""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..data.container import ImagePool
from ..data.sampling import (
    EpisodeSpec, LabeledPool, compose_batch, derive_seed, sample_episode, subsample_labels,
)
from ..errors import ConfigError, DivergenceError
from ..evaluation import EvalProtocol, FeatureBank, classification_accuracy, run_episodes
from ..models import FewShotModel
from ..tensor import SGD, backward
from .checkpoint import Checkpoint, components_for
from .losses import StepBatch, total_step_loss

log = logging.getLogger(__name__)

# stream tags for derive_seed
_BATCH, _SSL, _LABELS = 1, 2, 3


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)
    best_epoch: int = None
    model: FewShotModel = None


def build_model(model_config, train_config, n_base_classes):
    return FewShotModel(model_config, n_base_classes, components_for(train_config), seed=train_config.seed)


def active_parameters(model, config):
    """Parameters that receive gradient under ``config``; only these are optimized."""
    skip = set()
    if config.selfsup_only or config.method == "PN":
        skip.add("classifier.")
    return [p for name, p in model.named_parameters() if not any(name.startswith(s) for s in skip)]


def make_pools(ds, config, unlabeled=None):
    """Labelled base pool and unlabelled pool for a run."""
    if config.mu < 1.0:
        labeled, rest = subsample_labels(ds, config.mu, derive_seed(config.seed, _LABELS))
    else:
        labeled, rest = LabeledPool(ds, ds.split_indices("base")), ImagePool.empty()
    if not config.semi_supervised:
        if unlabeled is not None and unlabeled.num_images:
            raise ConfigError("an unlabeled dataset was given but semi_supervised is false")
        return labeled, ImagePool.empty()
    pool = rest
    if unlabeled is not None:
        pool = pool.extend(ImagePool.of(unlabeled, np.arange(unlabeled.num_images)))
    return labeled, pool


def _step_batch(ds, config, labeled, unlabeled, seed):
    b_u = config.batch_unlabeled if len(unlabeled) else 0
    if config.method == "CC" or config.selfsup_only:
        sb = compose_batch(labeled, unlabeled, config.batch_labeled, b_u, seed)
        return StepBatch(sb.labeled_images, sb.labels, sb.unlabeled_images)
    spec = EpisodeSpec(config.pn_n_way, config.pn_k_shot, config.pn_m_query, "base")
    ep = sample_episode(ds, spec, seed, allowed=labeled.indices)
    images = ds.images[np.concatenate([ep.support, ep.query])]
    sb = compose_batch(labeled, unlabeled, 0, b_u, seed)
    return StepBatch(images, np.concatenate([ep.support_labels, ep.query_labels]),
                     sb.unlabeled_images, n_support=len(ep.support), n_way=ep.n_way)


def validation_accuracy(model, ds, config):
    """Mean few-shot accuracy on a fixed set of validation episodes."""
    protocol = EvalProtocol(config.val_n_way, config.val_k_shot, config.val_m_query,
                            config.val_episodes, 0, config.method if model.classifier is not None else "PN",
                            split="validation")
    bank = FeatureBank(model, ds, "validation")
    gamma = float(np.exp(model.classifier.log_gamma.data)) if model.classifier is not None else 1.0
    accs = run_episodes(bank, ds, protocol, gamma, range(config.val_episodes))
    return float(np.mean(accs))


def _run(model_config, config, ds, unlabeled=None, on_epoch=None):
    if not ds.split["base"]:
        raise ConfigError("dataset has no base classes")
    model = build_model(model_config, config, len(ds.split["base"]))
    params = active_parameters(model, config)
    no_decay = [p.name for p in params if p.name.endswith("log_gamma")]
    opt = SGD(params, lr=config.lr, momentum=config.momentum,
              weight_decay=config.weight_decay, no_decay=no_decay)
    labeled, pool = make_pools(ds, config, unlabeled)
    use_val = config.early_stopping and bool(ds.split["validation"])

    history, val_hist = [], []
    best_metric, best_state, best_epoch = -math.inf, None, None
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        sums, correct, counted = {}, 0, 0
        for it in range(config.iterations_per_epoch):
            step_seed = derive_seed(config.seed, _BATCH, epoch, it)
            batch = _step_batch(ds, config, labeled, pool, step_seed)
            opt.zero_grad()
            out = total_step_loss(model, batch, config, derive_seed(config.seed, _SSL, epoch, it))
            value = float(out.total.data)
            if not math.isfinite(value) or value > config.divergence_threshold:
                snapshot = {"epoch": epoch, "iteration": it, "lr": opt.lr, "loss": value,
                            "terms": {k: float(v.data) for k, v in out.terms.items()}}
                raise DivergenceError(f"loss {value} at epoch {epoch} iteration {it}", snapshot)
            backward(out.total)
            opt.step()
            sums["total"] = sums.get("total", 0.0) + value
            for k, v in out.terms.items():
                sums[k] = sums.get(k, 0.0) + float(v.data)
            correct += out.correct
            counted += out.counted

        n = config.iterations_per_epoch
        record = {"epoch": epoch, "lr": opt.lr}
        record.update({f"loss_{k}": s / n for k, s in sums.items()})
        if counted:
            record["train_acc"] = correct / counted
        if ds.split["validation"]:
            metric = validation_accuracy(model, ds, config)
            record["val_acc"] = metric
            val_hist.append(metric)
            if use_val and metric > best_metric:
                best_metric, best_state, best_epoch = metric, model.state_dict(), epoch
        history.append(record)
        log.info("epoch %d %s", epoch, record)
        if on_epoch is not None:
            on_epoch(record)

    if use_val and best_state is not None:
        model.load_state_dict(best_state)
        epoch_out = best_epoch
    else:
        epoch_out = config.epochs - 1
    ckpt = Checkpoint.from_model(model, config, epoch_out, val_hist)
    return TrainResult(ckpt, history, epoch_out, model)


def train_stage1(model_config, config, ds, unlabeled=None, on_epoch=None):
    """Train feature extractor and heads on the base classes of ``ds``.

    Returns the early-stopped checkpoint (best validation accuracy) unless
    early stopping is disabled or there is no validation split.
    """
    if config.selfsup_only:
        return train_selfsup_only(model_config, config, ds, unlabeled, on_epoch)
    return _run(model_config, config, ds, unlabeled, on_epoch)


def train_selfsup_only(model_config, config, ds, unlabeled=None, on_epoch=None):
    """Pretext-task-only training; no labels used, final-epoch checkpoint."""
    if config.ssl_task == "none":
        raise ConfigError("self-supervised-only training needs ssl_task 'rotation' or 'location'")
    config = replace(config, selfsup_only=True, early_stopping=False)
    return _run(model_config, config, ds, unlabeled, on_epoch)


def base_train_accuracy(model, ds, max_images=None):
    idx = ds.split_indices("base")
    if max_images is not None:
        idx = idx[:max_images]
    return classification_accuracy(model, ds, idx)
