"""Stage-one objectives, the training loop and checkpoint I/O."""
from .checkpoint import Checkpoint, components_for
from .config import TrainConfig
from .loop import (
    TrainResult, active_parameters, base_train_accuracy, build_model, make_pools,
    train_selfsup_only, train_stage1,
)
from .losses import (
    StepBatch, StepLoss, loss_cc, loss_location, loss_pn, loss_rotation, total_step_loss,
)

__all__ = [
    "Checkpoint", "components_for", "TrainConfig", "TrainResult", "active_parameters",
    "base_train_accuracy", "build_model", "make_pools", "train_selfsup_only", "train_stage1",
    "StepBatch", "StepLoss", "loss_cc", "loss_location", "loss_pn", "loss_rotation",
    "total_step_loss",
]
