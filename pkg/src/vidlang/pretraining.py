"""Pretraining objectives and the combined training step.

Three losses: masked word-token recovery (cross-entropy over the text
vocabulary at masked positions), visual-text matching (binary classification
of aligned vs mismatched pairs from the [CLS] feature), and masked
visual-token recovery (cross-entropy over the codebook at masked patches,
averaged per frame and summed over frames). A feature-regression variant of
the visual objective (smooth-L1 to frozen tokenizer encoder features) is
selectable as a baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .cross_modal import JointFeatures, attended_scores
from .errors import ConfigError
from .masking import (MASK_RATE, MaskPlan, apply_video_mask_to_frames,
                      plan_for_strategy)
from .model import VidLangModel
from .vq import VisualTokenizer

MVM_VARIANTS = ("mvm", "mfm", "off")


@dataclass
class PretrainConfig:
    strategy: str = "bm+am"
    mask_rate: float = MASK_RATE
    lambda_mlm: float = 1.0
    lambda_vtm: float = 1.0
    lambda_mvm: float = 1.0
    mvm_variant: str = "mvm"

    def __post_init__(self):
        if self.mvm_variant not in MVM_VARIANTS:
            raise ConfigError(f"unknown mvm variant {self.mvm_variant!r}")

    @property
    def mvm_active(self) -> bool:
        """Zero weight behaves exactly like the variant being off: no video
        corruption and no tokenizer requirement."""
        return self.mvm_variant != "off" and self.lambda_mvm != 0.0


@dataclass
class LossReport:
    l_mlm: float
    l_vtm: float
    l_mvm: float
    total: float
    n_text_masked: int
    n_video_masked: int
    mvm_token_accuracy: float

    def as_dict(self) -> dict:
        return {
            "l_mlm": self.l_mlm, "l_vtm": self.l_vtm, "l_mvm": self.l_mvm,
            "total": self.total, "n_text_masked": self.n_text_masked,
            "n_video_masked": self.n_video_masked,
            "mvm_token_accuracy": self.mvm_token_accuracy,
        }


@dataclass
class PairBatch:
    """Aligned clips and captions, ready for the model."""

    frames: torch.Tensor      # (B, T, H_px, W_px, 3) float
    text_ids: torch.Tensor    # (B, L) long
    text_flags: torch.Tensor  # (B, L) bool
    clip_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.frames.shape[0]


def masked_token_loss(logits: torch.Tensor, targets: torch.Tensor,
                      mask: torch.Tensor) -> torch.Tensor:
    """Per-example mean cross-entropy over masked positions, batch-averaged.

    Examples with an empty mask contribute zero. logits: (B, L, V);
    targets: (B, L); mask: (B, L) bool.
    """
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    masked = mask.to(logits.dtype)
    counts = masked.sum(dim=1)
    per_example = -(picked * masked).sum(dim=1) / counts.clamp(min=1)
    return per_example.sum() / logits.shape[0]


def mlm_loss(text_features: torch.Tensor, mask: torch.Tensor,
             original_ids: torch.Tensor, head: torch.nn.Module) -> torch.Tensor:
    """Masked word-token recovery loss; targets are the original ids."""
    if not bool(mask.any()):
        return text_features.sum() * 0.0
    return masked_token_loss(head(text_features), original_ids, mask)


def vtm_loss(pos_logits: torch.Tensor, neg_logits: torch.Tensor) -> torch.Tensor:
    """-E[log b_pos + log(1 - b_neg)] with b = sigmoid(logit)."""
    return (F.softplus(-pos_logits) + F.softplus(neg_logits)).mean()


def mvm_loss(video_features: torch.Tensor, mask: torch.Tensor,
             token_grid: torch.Tensor, head: torch.nn.Module):
    """Masked visual-token recovery loss plus masked-token accuracy.

    video_features: (B, T, HW, d); mask: (B, T, HW) bool; token_grid:
    (B, T, HW) target ids computed on the unmasked frames. Frames with an
    empty mask contribute zero; per-frame means are summed over frames.
    """
    if video_features.shape[:3] != token_grid.shape or mask.shape != token_grid.shape:
        raise ConfigError("video features, mask, and token grid dims disagree")
    if not bool(mask.any()):
        return video_features.sum() * 0.0, 0.0
    logits = head(video_features)
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, token_grid.unsqueeze(-1)).squeeze(-1)
    masked = mask.to(logits.dtype)
    counts = masked.sum(dim=2)  # (B, T)
    per_frame = -(picked * masked).sum(dim=2) / counts.clamp(min=1)
    loss = per_frame.sum(dim=1).sum() / logits.shape[0]
    with torch.no_grad():
        hits = (logits.argmax(dim=-1) == token_grid) & mask
        accuracy = float(hits.sum()) / float(mask.sum())
    return loss, accuracy


def mfm_loss(video_features: torch.Tensor, mask: torch.Tensor,
             target_features: torch.Tensor, head: torch.nn.Module) -> torch.Tensor:
    """Feature-regression baseline: smooth-L1 to frozen encoder features."""
    if not bool(mask.any()):
        return video_features.sum() * 0.0
    predicted = head(video_features)
    return F.smooth_l1_loss(predicted[mask], target_features[mask])


def build_mask_plans(batch: PairBatch, grid_dims: tuple[int, int, int],
                     cfg: PretrainConfig, vocab_size: int,
                     rng: np.random.Generator,
                     model: VidLangModel | None = None):
    """Per-example mask plans; runs the intact scoring pass when needed.

    Returns (masked_frames, masked_ids, plans, video_mask_tensor).
    """
    t, h, w = grid_dims
    needs_scores = cfg.strategy in ("am", "bm+am")
    video_scores = text_scores = None
    if needs_scores:
        if model is None:
            raise ConfigError(f"strategy {cfg.strategy!r} needs a model for attention scores")
        with torch.no_grad():
            _, maps = model(batch.frames, batch.text_ids, batch.text_flags,
                            return_attention=True)
            v_sc, t_sc = attended_scores(maps, t * h * w, batch.text_flags)
            video_scores, text_scores = v_sc.numpy(), t_sc.numpy()

    ids_np = batch.text_ids.numpy()
    flags_np = batch.text_flags.numpy()
    plans: list[MaskPlan] = []
    masked_ids = np.empty_like(ids_np)
    video_mask = np.zeros((len(batch), t, h, w), dtype=bool)
    for b in range(len(batch)):
        masked_b, plan = plan_for_strategy(
            cfg.strategy, grid_dims, ids_np[b], flags_np[b], vocab_size, rng,
            rate=cfg.mask_rate,
            video_scores=None if video_scores is None else video_scores[b],
            text_scores=None if text_scores is None else text_scores[b])
        masked_ids[b] = masked_b
        video_mask[b] = plan.video.mask
        plans.append(plan)

    if not cfg.mvm_active:
        video_mask[:] = False
    mask_t = torch.from_numpy(video_mask)
    masked_frames = apply_video_mask_to_frames(
        batch.frames, mask_t, batch.frames.shape[2] // h)
    return masked_frames, torch.from_numpy(masked_ids), plans, mask_t


def pretrain_losses(model: VidLangModel, batch: PairBatch,
                    masked_frames: torch.Tensor, masked_ids: torch.Tensor,
                    video_mask: torch.Tensor, plans: list[MaskPlan],
                    neg_shift: int, cfg: PretrainConfig,
                    tokenizer: VisualTokenizer | None):
    """Differentiable joint loss for fixed mask plans and negative pairing.

    The positive pass reuses the masked inputs for all three objectives; the
    negative pass pairs each masked video with another example's masked
    caption (rolled by neg_shift), so both match branches see identically
    corrupted text.
    """
    b = len(batch)
    t, h, w = video_mask.shape[1:]

    text_mask = torch.zeros_like(batch.text_ids, dtype=torch.bool)
    for i, plan in enumerate(plans):
        text_mask[i, plan.text.indices] = True

    features = model(masked_frames, masked_ids, batch.text_flags)
    l_mlm = mlm_loss(features.text, text_mask, batch.text_ids, model.head_mlm)

    if not cfg.mvm_active or tokenizer is None:
        l_mvm, mvm_acc = features.video.sum() * 0.0, 0.0
    else:
        h_v = features.video.reshape(b, t, h * w, -1)
        mask_flat = video_mask.reshape(b, t, h * w)
        if cfg.mvm_variant == "mvm":
            grid = tokenizer.tokenize_batch(batch.frames).reshape(b, t, h * w)
            l_mvm, mvm_acc = mvm_loss(h_v, mask_flat, grid, model.head_mvm)
        else:
            target = tokenizer.encode_features(batch.frames).reshape(b, t, h * w, -1)
            l_mvm = mfm_loss(h_v, mask_flat, target.to(h_v.dtype), model.head_mfm)
            mvm_acc = 0.0

    if b < 2:
        warnings.warn("batch of size 1: no in-batch negative, skipping the match loss")
        l_vtm = features.cls.sum() * 0.0
    else:
        neg_ids = torch.roll(masked_ids, shifts=neg_shift, dims=0)
        neg_flags = torch.roll(batch.text_flags, shifts=neg_shift, dims=0)
        neg_features = model(masked_frames, neg_ids, neg_flags)
        l_vtm = vtm_loss(model.match_logits(features), model.match_logits(neg_features))

    total = cfg.lambda_mlm * l_mlm + cfg.lambda_vtm * l_vtm + cfg.lambda_mvm * l_mvm
    report = LossReport(
        l_mlm=float(l_mlm.detach()), l_vtm=float(l_vtm.detach()),
        l_mvm=float(l_mvm.detach()), total=float(total.detach()),
        n_text_masked=int(text_mask.sum()), n_video_masked=int(video_mask.sum()),
        mvm_token_accuracy=mvm_acc)
    return total, report


def pretrain_step(model: VidLangModel, batch: PairBatch, cfg: PretrainConfig,
                  optimizer: torch.optim.Optimizer,
                  tokenizer: VisualTokenizer | None,
                  rng: np.random.Generator) -> LossReport:
    """One optimizer update over the combined pretraining loss."""
    if cfg.mvm_active and tokenizer is None:
        raise ConfigError("masked visual modeling enabled but no tokenizer given")
    grid = model.cfg.grid_size
    dims = (batch.frames.shape[1], grid, grid)
    masked_frames, masked_ids, plans, video_mask = build_mask_plans(
        batch, dims, cfg, model.cfg.vocab_size, rng, model=model)
    neg_shift = int(rng.integers(1, len(batch))) if len(batch) > 1 else 0
    total, report = pretrain_losses(model, batch, masked_frames, masked_ids,
                                    video_mask, plans, neg_shift, cfg, tokenizer)
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return report
