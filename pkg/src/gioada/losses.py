"""Loss terms of the adaptation objective.

Adversarial losses take raw discriminator logits; the log-sigmoid is applied
here. The "real" side is the target domain for both discriminators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .core import IGNORE_INDEX, LossWeights

GAN_LOSSES = ("nonsaturating", "minimax", "least_squares")


class NonFiniteLossError(FloatingPointError):
    pass


class EmptyMaskWarning(UserWarning):
    pass


@dataclass
class LossReport:
    seg: float = 0.0
    depth: float = 0.0
    adv_image_g: float | None = None
    adv_image_d: float | None = None
    adv_output_g: float | None = None
    adv_output_d: float | None = None
    total_g: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def check_finite(self) -> None:
        for k, v in self.to_dict().items():
            if v is not None and not math.isfinite(v):
                raise NonFiniteLossError(f"loss term {k!r} is not finite ({v})")


def seg_loss(logits: torch.Tensor, labels: torch.Tensor, ignore_index: int = IGNORE_INDEX) -> torch.Tensor:
    """Mean per-pixel cross-entropy over non-ignored pixels.

    ``logits`` is NxCxHxW, ``labels`` NxHxW. Returns a (differentiable) zero
    and emits ``EmptyMaskWarning`` when every pixel is ignored.
    """
    if torch.isnan(logits).any():
        raise NonFiniteLossError("NaN in segmentation logits")
    labels = labels.long()
    valid = labels != ignore_index
    if not valid.any():
        warnings.warn("all pixels ignored; segmentation loss is 0", EmptyMaskWarning, stacklevel=2)
        return logits.sum() * 0.0
    return F.cross_entropy(logits, labels, ignore_index=ignore_index, reduction="mean")


def depth_loss(pred: torch.Tensor, gt: torch.Tensor, valid_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean absolute error over valid pixels (normalized depth units)."""
    if pred.shape != gt.shape:
        raise ValueError(f"depth shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    diff = (pred - gt).abs()
    if valid_mask is None:
        return diff.mean()
    valid_mask = valid_mask.bool()
    if not valid_mask.any():
        warnings.warn("empty depth mask; depth loss is 0", EmptyMaskWarning, stacklevel=2)
        return pred.sum() * 0.0
    return diff[valid_mask].mean()


def adv_disc_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor, mode: str = "nonsaturating") -> torch.Tensor:
    """Discriminator loss: -[mean log s(real) + mean log(1 - s(fake))]."""
    if mode == "least_squares":
        return ((real_scores - 1) ** 2).mean() + (fake_scores ** 2).mean()
    _check_mode(mode)
    return -(F.logsigmoid(real_scores).mean() + F.logsigmoid(-fake_scores).mean())


def adv_gen_loss(fake_scores: torch.Tensor, mode: str = "nonsaturating",
                 real_scores: torch.Tensor | None = None) -> torch.Tensor:
    """Generator side of the adversarial game.

    ``fake_scores`` are the discriminator's logits on generated (source) maps;
    the generator wants them scored real. If ``real_scores`` is given the
    generator also controls the real-side input (output-level alignment, where
    the target predictions come from the same task network) and is pushed to
    make those look fake.
    """
    _check_mode(mode)
    if mode == "nonsaturating":
        loss = -F.logsigmoid(fake_scores).mean()
        if real_scores is not None:
            loss = loss - F.logsigmoid(-real_scores).mean()
    elif mode == "minimax":
        # the literal min over G of log(1 - s(fake)) + log s(real)
        loss = F.logsigmoid(-fake_scores).mean()
        if real_scores is not None:
            loss = loss + F.logsigmoid(real_scores).mean()
    else:
        loss = ((fake_scores - 1) ** 2).mean()
        if real_scores is not None:
            loss = loss + (real_scores ** 2).mean()
    return loss


def _check_mode(mode):
    if mode not in GAN_LOSSES:
        raise ValueError(f"gan_loss must be one of {GAN_LOSSES}, got {mode!r}")


def output_concat(seg_logits: torch.Tensor, depth_pred: torch.Tensor | None,
                  use_softmax: bool = True, seg: bool = True) -> torch.Tensor:
    """[softmax(seg) (C), depth (1)] along the channel axis of NxCxHxW maps."""
    parts = []
    if seg:
        parts.append(F.softmax(seg_logits, dim=1) if use_softmax else seg_logits)
    if depth_pred is not None:
        if depth_pred.shape[-2:] != seg_logits.shape[-2:]:
            raise ValueError("segmentation and depth maps differ in spatial size")
        parts.append(depth_pred.unsqueeze(1) if depth_pred.ndim == 3 else depth_pred)
    return torch.cat(parts, dim=1)


def total_generator_loss(seg, depth, adv_image_g, adv_output_g, w: LossWeights = LossWeights()):
    """seg + l_depth*depth + l_image*adv_image + l_output*adv_output (absent terms count as 0)."""
    total = seg
    for lam, term in ((w.lambda_depth, depth), (w.lambda_image, adv_image_g), (w.lambda_output, adv_output_g)):
        if term is not None:
            total = total + lam * term
    return total
