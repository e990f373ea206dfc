from .gradcheck import grad_check
from .losses import (
    cross_entropy,
    kl_loss,
    log_softmax_array,
    mixed_distill_loss,
    mixed_distill_terms,
    softmax,
    softmax_array,
)
from .optim import Adam, LrSchedule, adam_step, lr_at
from .tensor import OPS, Tensor

__all__ = [
    "OPS",
    "Adam",
    "LrSchedule",
    "Tensor",
    "adam_step",
    "cross_entropy",
    "grad_check",
    "kl_loss",
    "log_softmax_array",
    "lr_at",
    "mixed_distill_loss",
    "mixed_distill_terms",
    "softmax",
    "softmax_array",
]
