"""Loss terms for the synthesis objective.

Every term is a pure function of tensors so it can be checked against
closed forms and finite differences.  Images may be (H, W), (C, H, W) or
(N, C, H, W); values are averaged over every element so batch size does
not change the scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import NumericsError, ValidationError
from .patches import DEFAULT_PATCH_SPECS, template_crop_frontal

PROB_EPS = 1e-8

LAPLACIAN_KERNEL = ((0.0, 1.0, 0.0), (1.0, -4.0, 1.0), (0.0, 1.0, 0.0))


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective and its internal sub-terms."""

    alpha: float = 1e-3        # identity cross-entropy
    lambda1: float = 0.3       # symmetry
    lambda2: float = 1e-3      # adversarial
    lambda3: float = 3e-3      # identity preserving
    lambda4: float = 1e-4      # total variation
    w_global: float = 1.0      # pixel loss at the global-pathway head
    w_local: float = 1.0       # pixel loss at each local patch
    w_multiscale: float = 1.0  # pixel loss at each downscaled head
    lap_weight: float = 1.0    # Laplacian-space share of the symmetry loss

    def __post_init__(self):
        for name in ("alpha", "lambda1", "lambda2", "lambda3", "lambda4",
                     "w_global", "w_local", "w_multiscale", "lap_weight"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name} must be >= 0")


def _as_nchw(t: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.is_tensor(t):
        raise ValidationError(f"{name}: expected a torch tensor")
    if t.dim() == 2:
        return t.unsqueeze(0).unsqueeze(0)
    if t.dim() == 3:
        return t.unsqueeze(0)
    if t.dim() == 4:
        return t
    raise ValidationError(f"{name}: expected 2-4 dims, got shape {tuple(t.shape)}")


def pixel_l1(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over every pixel, channel, and batch entry."""
    if not torch.is_tensor(pred) or not torch.is_tensor(gt):
        raise ValidationError("pixel_l1: expected torch tensors")
    if pred.shape != gt.shape:
        raise ValidationError(f"pixel_l1: shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).abs().mean()


def laplacian(image: torch.Tensor) -> torch.Tensor:
    """3x3 Laplacian filter with replicate border padding, per channel."""
    x = _as_nchw(image, "laplacian")
    c = x.shape[1]
    kernel = torch.tensor(LAPLACIAN_KERNEL, dtype=x.dtype, device=x.device)
    weight = kernel.expand(c, 1, 3, 3).contiguous()
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    out = F.conv2d(padded, weight, groups=c)
    return out.view(image.shape)


def _one_sided_pairs(image: torch.Tensor):
    """(left detached, right mirrored) halves; gradient reaches only the right."""
    w = image.shape[-1]
    if w % 2:
        raise ValidationError(f"symmetry loss needs an even width, got {w}")
    left = image[..., : w // 2].detach()
    right = image[..., w // 2:]
    return left, right.flip(-1)


def symmetry_loss(pred: torch.Tensor, lap_weight: float = 1.0) -> torch.Tensor:
    """Mirror discrepancy in pixel space plus `lap_weight` times the same
    discrepancy in Laplacian space.

    Column x (1-indexed) is compared with column W-(x-1); the left half is
    treated as a constant so only the occluded right half is pulled.
    Expects a flip-canonicalized prediction (occluded side on the right).
    """
    x = _as_nchw(pred, "symmetry_loss")
    left, right_m = _one_sided_pairs(x)
    pixel_term = (left - right_m).abs().mean()
    if lap_weight == 0.0:
        return pixel_term
    w = x.shape[-1]
    mixed = torch.cat([x[..., : w // 2].detach(), x[..., w // 2:]], dim=-1)
    lap = laplacian(mixed)
    lap_left, lap_right_m = _one_sided_pairs(lap)
    lap_term = (lap_left - lap_right_m).abs().mean()
    return pixel_term + lap_weight * lap_term


def tv_loss(pred: torch.Tensor) -> torch.Tensor:
    """Anisotropic total variation, averaged per offset direction."""
    x = _as_nchw(pred, "tv_loss")
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ValidationError(f"tv_loss: image must be at least 2x2, got {tuple(x.shape[-2:])}")
    dx = (x[..., :, 1:] - x[..., :, :-1]).abs().mean()
    dy = (x[..., 1:, :] - x[..., :-1, :]).abs().mean()
    return dx + dy


def _check_probs(scores: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.is_tensor(scores):
        raise ValidationError(f"{name}: expected a torch tensor")
    if not torch.isfinite(scores).all():
        raise NumericsError(f"{name}: non-finite probability")
    return scores


def adversarial_g_loss(scores: torch.Tensor) -> torch.Tensor:
    """Mean of -log D over all map cells of the synthesized batch."""
    scores = _check_probs(scores, "adversarial_g_loss")
    return -torch.log(scores.clamp(min=PROB_EPS)).mean()


def adversarial_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """-mean log D(real) - mean log (1 - D(fake)), cell and batch averaged."""
    real_scores = _check_probs(real_scores, "adversarial_d_loss(real)")
    fake_scores = _check_probs(fake_scores, "adversarial_d_loss(fake)")
    if real_scores.shape != fake_scores.shape:
        raise ValidationError(
            f"adversarial_d_loss: shape mismatch {tuple(real_scores.shape)} "
            f"vs {tuple(fake_scores.shape)}"
        )
    real_term = -torch.log(real_scores.clamp(min=PROB_EPS)).mean()
    fake_term = -torch.log((1.0 - fake_scores).clamp(min=PROB_EPS)).mean()
    return real_term + fake_term


def identity_loss(pred: torch.Tensor, gt_frontal, embed_fn) -> torch.Tensor:
    """Feature-space distance under a frozen embedder.

    `embed_fn(images)` must return the embedder's exposed activations
    (final feature map, embedding); each activation contributes the mean
    absolute difference normalized by its own size.  `gt_frontal` may be
    an image tensor or precomputed activations.
    """
    pred_acts = embed_fn(pred)
    gt_acts = gt_frontal if isinstance(gt_frontal, (tuple, list)) else embed_fn(gt_frontal)
    if len(pred_acts) != len(gt_acts):
        raise ValidationError("identity_loss: activation count mismatch")
    total = None
    for a, b in zip(pred_acts, gt_acts):
        if a.shape != b.shape:
            raise ValidationError(
                f"identity_loss: activation shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}"
            )
        term = (a - b).abs().mean()
        total = term if total is None else total + term
    return total


def cross_entropy_id(v_id: torch.Tensor, labels: torch.Tensor, head) -> torch.Tensor:
    """Softmax cross-entropy of the identity head applied to v_id."""
    if v_id.dim() == 1:
        v_id = v_id.unsqueeze(0)
    labels = torch.as_tensor(labels)
    if labels.dim() == 0:
        labels = labels.unsqueeze(0)
    num_classes = head.out_features
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValidationError(
            f"identity label out of range [0, {num_classes}): {labels.tolist()}"
        )
    return F.cross_entropy(head(v_id), labels.long())


def pixel_loss_total(output, frontal: torch.Tensor, weights: LossWeights,
                     specs=DEFAULT_PATCH_SPECS) -> torch.Tensor:
    """Pixel L1 summed over every supervised site.

    Sites: the fused output (weight 1), the global-pathway head, the four
    local patches against template crops of the ground truth, and each
    multi-scale head against an area-downsampled ground truth.
    """
    total = pixel_l1(output.fused_image, frontal)
    total = total + weights.w_global * pixel_l1(output.global_image, frontal)
    if output.local_images:
        gt_patches = template_crop_frontal(frontal, specs)
        for spec in specs:
            total = total + weights.w_local * pixel_l1(
                output.local_images[spec.name], gt_patches[spec.name]
            )
    for ms in output.multiscale_images:
        size = ms.shape[-2:]
        gt_ms = F.interpolate(frontal, size=size, mode="area")
        total = total + weights.w_multiscale * pixel_l1(ms, gt_ms)
    return total


@dataclass
class LossReport:
    """Per-batch record of every term, its weight, and the weighted total."""

    pixel: float
    symmetry: float
    adversarial: float
    identity: float
    tv: float
    cross_entropy: float
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 1
    step: int = 0

    @property
    def total_syn(self) -> float:
        w = self.weights
        return (self.pixel + w.lambda1 * self.symmetry + w.lambda2 * self.adversarial
                + w.lambda3 * self.identity + w.lambda4 * self.tv)

    @property
    def joint(self) -> float:
        return self.total_syn + self.weights.alpha * self.cross_entropy

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "batch_size": self.batch_size,
                "pixel": self.pixel,
                "symmetry": self.symmetry,
                "adversarial": self.adversarial,
                "identity": self.identity,
                "tv": self.tv,
                "cross_entropy": self.cross_entropy,
                "total_syn": self.total_syn,
                "joint": self.joint,
            },
            sort_keys=True,
        )


def _part_value(value, name: str) -> float:
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise NumericsError(f"loss term {name!r} is non-finite ({v})")
    return v


def total_synthesis_loss(parts: dict, weights: LossWeights,
                         batch_size: int = 1, step: int = 0):
    """Weighted sum of the synthesis terms plus the identity cross-entropy.

    `parts` maps {pixel, symmetry, adversarial, identity, tv,
    cross_entropy} to tensors (or 0.0 for disabled terms).  Returns
    (joint objective tensor for backward, LossReport).
    """
    names = ("pixel", "symmetry", "adversarial", "identity", "tv", "cross_entropy")
    values = {n: _part_value(parts.get(n, 0.0), n) for n in names}
    w = weights
    total = (parts.get("pixel", 0.0)
             + w.lambda1 * parts.get("symmetry", 0.0)
             + w.lambda2 * parts.get("adversarial", 0.0)
             + w.lambda3 * parts.get("identity", 0.0)
             + w.lambda4 * parts.get("tv", 0.0))
    joint = total + w.alpha * parts.get("cross_entropy", 0.0)
    if not torch.is_tensor(joint):
        joint = torch.tensor(float(joint))
    report = LossReport(
        pixel=values["pixel"],
        symmetry=values["symmetry"],
        adversarial=values["adversarial"],
        identity=values["identity"],
        tv=values["tv"],
        cross_entropy=values["cross_entropy"],
        weights=weights,
        batch_size=batch_size,
        step=step,
    )
    return joint, report
