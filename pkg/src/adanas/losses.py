"""Classification and distillation losses for candidate training."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from adanas.autograd import ops
from adanas.autograd.tensor import ShapeError, Tensor

log = logging.getLogger(__name__)


class KDMode(str, enum.Enum):
    NOKD = "nokd"
    BAN = "ban"
    AKD = "akd"


@dataclass(frozen=True)
class KDConfig:
    mode: KDMode = KDMode.NOKD
    temperature: float = 1.0
    # multiply the soft term by T**2 (Hinton convention); a no-op at T = 1
    t_squared: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", KDMode(self.mode))
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ValueError(f"label {bad} out of range [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def classification_loss(student_logits: Tensor, labels) -> Tensor:
    """Mean cross entropy of ``softmax(logits)`` against integer labels."""
    n, c = student_logits.shape
    target = _one_hot(labels, c)
    if target.shape[0] != n:
        raise ShapeError("classification_loss", student_logits.shape, target.shape)
    logp = ops.log_softmax(student_logits)
    return ops.scalar_scale(ops.total(ops.mul(logp, Tensor(target))), -1.0 / n)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def soft_cross_entropy(teacher_logits, student_logits: Tensor, temperature=1.0) -> Tensor:
    """Mean over the batch of ``-sum_c p_teacher(c) log p_student(c)`` at temperature T.

    The teacher side is a constant; gradients only reach the student.
    """
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    if t.shape != student_logits.shape:
        raise ShapeError("soft_cross_entropy", t.shape, student_logits.shape)
    target = Tensor(_softmax(t / temperature))
    scaled = student_logits if temperature == 1.0 else ops.scalar_scale(student_logits, 1.0 / temperature)
    logp = ops.log_softmax(scaled)
    return ops.scalar_scale(ops.total(ops.mul(logp, target)), -1.0 / t.shape[0])


def entropy(logits) -> float:
    """Mean Shannon entropy (nats) of ``softmax(logits)``."""
    p = _softmax(np.asarray(logits, dtype=np.float64))
    return float(-(p * np.log(p)).sum(axis=-1).mean())


def teacher_logits(mode, prev_ensemble, prev_subnetwork, batch):
    """Teacher logits for ``batch``, or None when distillation is off for this iteration."""
    from adanas.ensemble import ensemble_logits_array
    from adanas.model import predict_logits

    mode = KDMode(mode)
    if mode is KDMode.NOKD:
        return None
    if prev_ensemble is None or len(prev_ensemble) == 0:
        log.info("%s requested with no previous ensemble; distillation disabled", mode.value)
        return None
    if mode is KDMode.BAN:
        teacher = prev_subnetwork if prev_subnetwork is not None else prev_ensemble.members[-1]
        return predict_logits(teacher, batch)
    return ensemble_logits_array(prev_ensemble, batch)


def kd_loss(kd: KDConfig, prev_ensemble, prev_subnetwork, student_logits: Tensor, batch=None,
            teacher=None) -> Tensor:
    """Distillation term. Zero for NOKD and whenever no teacher exists yet.

    BAN distills from the previous subnetwork, AKD from the previous ensemble's
    mixed logits. ``teacher`` may pass precomputed teacher logits for ``batch``.
    """
    if teacher is None:
        teacher = teacher_logits(kd.mode, prev_ensemble, prev_subnetwork, batch)
    if teacher is None:
        return Tensor(0.0)
    loss = soft_cross_entropy(teacher, student_logits, kd.temperature)
    if kd.t_squared and kd.temperature != 1.0:
        loss = ops.scalar_scale(loss, kd.temperature ** 2)
    return loss


def candidate_objective(student_logits, labels, kd: Tensor, lambda_kd=1.0) -> Tensor:
    """``classification_loss + lambda_kd * kd``; a zero or disabled KD term adds nothing to the tape."""
    if lambda_kd < 0:
        raise ValueError(f"lambda_kd must be >= 0, got {lambda_kd}")
    ce = classification_loss(student_logits, labels)
    if lambda_kd == 0 or not kd.requires_grad and kd.item() == 0.0:
        return ce
    return ops.add(ce, ops.scalar_scale(kd, lambda_kd))
