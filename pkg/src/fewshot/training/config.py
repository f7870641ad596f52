import hashlib
import json
from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError, FewShotError

METHODS = ("CC", "PN")
SSL_TASKS = ("none", "rotation", "location")


@dataclass
class TrainConfig:
    """Stage-one training settings.

    ``rotation_augmentation`` and ``patch_aux_loss`` default to the usual
    choice for the method (on for CC with the matching pretext task).
    """

    method: str = "CC"
    ssl_task: str = "none"
    alpha: float = 1.0
    rotation_augmentation: bool = None
    patch_aux_loss: bool = None
    semi_supervised: bool = False
    selfsup_only: bool = False
    mu: float = 1.0
    batch_labeled: int = 128
    batch_unlabeled: int = 0
    epochs: int = 20
    iterations_per_epoch: int = 200
    lr: float = 0.1
    lr_decay: float = 0.1
    decay_every: int = 8
    momentum: float = 0.9
    weight_decay: float = 5e-4
    pn_n_way: int = 5
    pn_k_shot: int = 1
    pn_m_query: int = 6
    early_stopping: bool = True
    val_episodes: int = 200
    val_n_way: int = 5
    val_k_shot: int = None
    val_m_query: int = 15
    divergence_threshold: float = 1e4
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.ssl_task not in SSL_TASKS:
            raise ConfigError(f"ssl_task must be one of {SSL_TASKS}, got {self.ssl_task!r}")
        if self.rotation_augmentation is None:
            self.rotation_augmentation = self.method == "CC" and self.ssl_task == "rotation"
        if self.patch_aux_loss is None:
            self.patch_aux_loss = self.method == "CC" and self.ssl_task == "location" and not self.selfsup_only
        if self.val_k_shot is None:
            self.val_k_shot = 1 if self.method == "CC" else self.pn_k_shot
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.patch_aux_loss and self.ssl_task != "location":
            raise ConfigError("patch_aux_loss requires ssl_task='location'")
        if self.patch_aux_loss and self.method != "CC":
            raise ConfigError("patch_aux_loss is only defined for CC models")
        if self.method == "PN" and self.rotation_augmentation:
            raise ConfigError("PN models never use rotation augmentation for classification")
        if self.selfsup_only and self.ssl_task == "none":
            raise ConfigError("self-supervised-only training needs ssl_task 'rotation' or 'location'")
        if self.selfsup_only and self.patch_aux_loss:
            raise ConfigError("patch_aux_loss uses labels; not available in self-supervised-only training")
        if not 0 < self.mu <= 1:
            raise ConfigError(f"mu must be in (0, 1], got {self.mu}")
        if self.batch_labeled < 1 and not self.selfsup_only:
            raise ConfigError("batch_labeled must be >= 1")
        if self.batch_unlabeled < 0:
            raise ConfigError("batch_unlabeled must be >= 0")
        if self.batch_unlabeled and not self.semi_supervised:
            raise ConfigError("batch_unlabeled > 0 needs semi_supervised=true")
        if self.semi_supervised and self.ssl_task == "none":
            raise ConfigError("semi-supervised training needs a self-supervised task")
        if self.epochs < 1 or self.iterations_per_epoch < 1 or self.decay_every < 1:
            raise ConfigError("epochs, iterations_per_epoch and decay_every must be >= 1")

    def lr_at(self, epoch):
        return self.lr * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def from_dict(cls, data, section):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError, FewShotError) as exc:
        raise ConfigError(f"bad {section!r} section: {exc}") from None
