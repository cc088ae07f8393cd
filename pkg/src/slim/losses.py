"""Distillation losses: masked feature prediction, global-local contrast,
batch-balanced teacher targets, the nearest-neighbor spreading penalty, and
the momentum update for the teacher weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError
from .masking import mask_to_flat_tensor


@dataclass
class DistillConfig:
    student_temp: float = 0.1
    teacher_temp: float = 0.04
    sinkhorn_iters: int = 3
    koleo_weight: float = 0.1
    lambda_glcl: float = 1.0
    mfm_reduction: str = "mean"  # "mean" over masked tokens | "sum" per sample
    glcl_reduction: str = "sum"  # "sum" over views | "mean"
    koleo_target: str = "cls"  # "cls" | "patch_mean"
    glcl_global_unmasked: bool = False

    def __post_init__(self):
        if self.student_temp <= 0 or self.teacher_temp <= 0:
            raise ValidationError("temperatures must be > 0")
        if self.sinkhorn_iters < 0:
            raise ValidationError("sinkhorn_iters must be >= 0")
        if self.koleo_weight < 0 or self.lambda_glcl < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.mfm_reduction not in ("mean", "sum"):
            raise ValidationError(f"unknown mfm_reduction {self.mfm_reduction!r}")
        if self.glcl_reduction not in ("sum", "mean"):
            raise ValidationError(f"unknown glcl_reduction {self.glcl_reduction!r}")
        if self.koleo_target not in ("cls", "patch_mean"):
            raise ValidationError(f"unknown koleo_target {self.koleo_target!r}")


def softmax_temp(logits: torch.Tensor, temp: float) -> torch.Tensor:
    """Temperature softmax over the last dimension, max-subtracted for stability."""
    if temp <= 0:
        raise ValidationError("temperature must be > 0")
    return torch.softmax(logits / temp, dim=-1)


def sinkhorn_center(logits: torch.Tensor, temp: float, iters: int) -> torch.Tensor:
    """Batch-balanced teacher distributions via log-space Sinkhorn iteration.

    Alternates normalizing prototype marginals to 1/K and sample marginals to
    1/B, then renormalizes each row to a distribution. With a single sample
    the balancing constraint is vacuous, so the plain tempered softmax is
    returned.
    """
    if logits.ndim != 2:
        raise ValidationError("expected logits of shape (B, K)")
    if temp <= 0:
        raise ValidationError("temperature must be > 0")
    b, k = logits.shape
    if b == 1 or iters == 0:
        return softmax_temp(logits, temp)
    orig_dtype = logits.dtype
    logq = (logits / temp).double()
    for _ in range(iters):
        logq = logq - torch.logsumexp(logq, dim=0, keepdim=True) - math.log(k)
        logq = logq - torch.logsumexp(logq, dim=1, keepdim=True) - math.log(b)
    logq = logq - torch.logsumexp(logq, dim=1, keepdim=True)
    return torch.exp(logq).to(orig_dtype)


def mfm_loss(
    teacher_probs: torch.Tensor,
    student_logprobs: torch.Tensor,
    mask,
    reduction: str = "mean",
) -> torch.Tensor:
    """Cross-entropy between teacher and student patch distributions at masked tokens.

    teacher_probs / student_logprobs: (N, K) or (B, N, K); mask covering N
    tokens, optionally with a leading batch dimension.
    """
    if teacher_probs.shape != student_logprobs.shape:
        raise ValidationError("teacher and student shapes differ")
    n = teacher_probs.shape[-2]
    flat = mask_to_flat_tensor(mask, n).to(teacher_probs.device)
    if flat.ndim == 1 and teacher_probs.ndim == 3:
        flat = flat.unsqueeze(0).expand(teacher_probs.shape[0], -1)
    if flat.shape != teacher_probs.shape[:-1]:
        raise ValidationError("mask shape does not match token layout")
    n_masked = int(flat.sum())
    if n_masked == 0:
        raise ValidationError("mask selects no tokens")
    ce = -(teacher_probs * student_logprobs).sum(dim=-1)
    total = (ce * flat.to(ce.dtype)).sum()
    if reduction == "mean":
        return total / n_masked
    if reduction == "sum":
        # Per-sample masked sums, averaged over the batch.
        batch = teacher_probs.shape[0] if teacher_probs.ndim == 3 else 1
        return total / batch
    raise ValidationError(f"unknown reduction {reduction!r}")


def glcl_loss(
    teacher_probs: torch.Tensor,
    student_logprobs: Sequence[torch.Tensor],
    reduction: str = "sum",
) -> torch.Tensor:
    """Cross-entropy from the anchor's teacher distribution to each student view.

    teacher_probs: (K,) or (B, K); each student entry has the same shape.
    Per-view terms are averaged over the batch, then summed (or averaged)
    over views.
    """
    if len(student_logprobs) == 0:
        raise ValidationError("need at least one student view")
    terms = []
    for s in student_logprobs:
        if s.shape != teacher_probs.shape:
            raise ValidationError("student view shape does not match teacher")
        terms.append(-(teacher_probs * s).sum(dim=-1).mean())
    total = torch.stack(terms).sum()
    if reduction == "mean":
        return total / len(terms)
    if reduction == "sum":
        return total
    raise ValidationError(f"unknown reduction {reduction!r}")


def koleo_loss(features: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Penalize nearest-neighbor crowding of row-normalized features."""
    if features.ndim != 2:
        raise ValidationError("expected features of shape (B, D)")
    b = features.shape[0]
    if b < 2:
        raise ValidationError("need at least 2 feature rows")
    x = F.normalize(features, dim=-1, eps=eps)
    dist = torch.cdist(x, x)
    diag = torch.eye(b, dtype=torch.bool, device=dist.device)
    nearest = dist.masked_fill(diag, torch.inf).min(dim=-1).values
    return -torch.log(nearest.clamp_min(eps)).mean()


@dataclass
class LossParts:
    """Per-anchor loss terms assembled by a training step."""

    mfm: list[torch.Tensor]
    glcl: list[torch.Tensor]
    koleo: list[torch.Tensor]


def total_loss(parts: LossParts, cfg: DistillConfig) -> tuple[torch.Tensor, dict]:
    """Combine terms per the training objective; anchors are averaged, not summed."""
    if not parts.mfm or not parts.glcl:
        raise ValidationError("need at least one anchor direction")
    mfm = torch.stack(list(parts.mfm)).mean()
    glcl = torch.stack(list(parts.glcl)).mean()
    if parts.koleo:
        koleo = torch.stack(list(parts.koleo)).mean()
    else:
        koleo = torch.zeros((), dtype=mfm.dtype, device=mfm.device)
    total = mfm + cfg.lambda_glcl * glcl + cfg.koleo_weight * koleo
    metrics = {
        "mfm": float(mfm.detach()),
        "glcl": float(glcl.detach()),
        "koleo": float(koleo.detach()),
        "total": float(total.detach()),
    }
    return total, metrics


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, tau: float):
    """teacher <- tau * teacher + (1 - tau) * student, elementwise over parameters."""
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValidationError("teacher and student parameter sets differ")
    for name, tp in t_params.items():
        sp = s_params[name]
        if tp.shape != sp.shape:
            raise ValidationError(f"shape mismatch for {name}")
        tp.mul_(tau).add_(sp.detach(), alpha=1.0 - tau)
