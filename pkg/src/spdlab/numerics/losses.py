"""Softmax and the training objectives: forward KL distillation, masked NLL and their mix."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument
from .tensor import Tensor, add, as_tensor, mul, register_op, total

PROB_FLOOR = 1e-30


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise InvalidArgument(f"temperature must be positive, got {temperature}")


def log_softmax_array(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    _check_temperature(temperature)
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_array(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    _check_temperature(temperature)
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits, temperature: float = 1.0):
    """Temperature softmax over the last axis.

    Plain arrays give plain arrays. A :class:`Tensor` input gives a
    differentiable Tensor.
    """
    if not isinstance(logits, Tensor):
        return softmax_array(logits, temperature)
    p = softmax_array(logits.data, temperature)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)) / temperature,)

    return Tensor._node(p, (logits,), grad_fn)


def _row_mask(mask, lead_shape: tuple[int, ...]) -> np.ndarray:
    if mask is None:
        return np.ones(lead_shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != lead_shape:
        raise InvalidArgument(f"mask shape {mask.shape} does not match positions {lead_shape}")
    return mask


def kl_loss(teacher_logits, student_logits, tau: float, mask=None) -> Tensor:
    """Mean over active positions of KL(softmax(teacher/tau) || softmax(student/tau)).

    Teacher logits are constants; they may contain ``-inf`` for entries a
    truncated store dropped.
    """
    _check_temperature(tau)
    student = as_tensor(student_logits)
    teacher = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, float)
    if teacher.shape != student.shape:
        raise InvalidArgument(f"teacher shape {teacher.shape} != student shape {student.shape}")
    active = _row_mask(mask, student.shape[:-1])
    count = int(active.sum())
    if count == 0:
        raise InvalidArgument("kl_loss: every position is masked")

    p_t = softmax_array(teacher, tau)
    log_p_t = np.log(np.maximum(p_t, PROB_FLOOR))
    log_p_s = log_softmax_array(student.data, tau)
    per_row = (p_t * (log_p_t - log_p_s)).sum(axis=-1)
    value = np.asarray(per_row[active].sum() / count)

    def grad_fn(g):
        grad = (np.exp(log_p_s) - p_t) / tau
        grad = np.where(active[..., None], grad, 0.0)
        return (g * grad / count,)

    return Tensor._node(value, (student,), grad_fn)


def cross_entropy(logits, target_ids, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``target_ids`` over unmasked positions."""
    logits = as_tensor(logits)
    targets = np.asarray(target_ids, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise InvalidArgument(f"targets shape {targets.shape} != positions {logits.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise InvalidArgument(f"target id outside [0, {vocab})")
    active = _row_mask(mask, targets.shape)
    count = int(active.sum())
    if count == 0:
        raise InvalidArgument("cross_entropy: every position is masked")

    logp = log_softmax_array(logits.data)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    value = np.asarray(-picked[active].sum() / count)

    def grad_fn(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
        grad = np.where(active[..., None], grad, 0.0)
        return (g * grad / count,)

    return Tensor._node(value, (logits,), grad_fn)


def mixed_distill_terms(
    teacher_logits,
    student_logits,
    target_ids,
    mask,
    alpha: float,
    tau: float,
    tau_squared: bool = False,
    kl_mask=None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(total, kl, sft)`` with ``total = alpha*kl + (1-alpha)*sft``.

    With ``tau_squared`` the KL term is multiplied by ``tau**2`` before mixing
    (the classical gradient-scale correction; off by default). ``kl_mask``
    defaults to ``mask``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha}")
    kl = kl_loss(teacher_logits, student_logits, tau, mask=mask if kl_mask is None else kl_mask)
    sft = cross_entropy(student_logits, target_ids, mask)
    kl_weight = alpha * tau * tau if tau_squared else alpha
    mixed = add(mul(kl, kl_weight), mul(sft, 1.0 - alpha))
    return mixed, kl, sft


def mixed_distill_loss(teacher_logits, student_logits, target_ids, mask, alpha: float, tau: float,
                       tau_squared: bool = False) -> Tensor:
    return mixed_distill_terms(teacher_logits, student_logits, target_ids, mask, alpha, tau, tau_squared)[0]


@register_op("softmax")
def _probe_softmax(rng):
    z = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w = rng.normal(size=(3, 5))
    return (lambda: total(mul(softmax(z, 1.7), w))), [z]


@register_op("kl_loss")
def _probe_kl(rng):
    teacher = rng.normal(size=(2, 3, 6))
    z = Tensor(rng.normal(size=(2, 3, 6)), requires_grad=True)
    mask = np.array([[True, False, True], [True, True, True]])
    return (lambda: kl_loss(teacher, z, 2.0, mask)), [z]


@register_op("cross_entropy")
def _probe_ce(rng):
    z = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
    targets = rng.integers(0, 5, size=(2, 4))
    mask = np.array([[False, True, True, True], [True, True, False, True]])
    return (lambda: cross_entropy(z, targets, mask)), [z]


@register_op("mixed_distill_loss")
def _probe_mixed(rng):
    teacher = rng.normal(size=(3, 7))
    z = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    targets = rng.integers(0, 7, size=3)
    mask = np.array([True, True, False])
    return (lambda: mixed_distill_loss(teacher, z, targets, mask, 0.3, 1.5)), [z]
