"""Masking strategies for the text and video pretraining objectives.

Four strategies: uniform random, blockwise (contiguous spatio-temporal boxes
of video patches until the budget is exceeded), attended (top-15% positions
by cross-modal attention, per modality), and their combination (union of the
blockwise and attended video picks; attended text picks topped up randomly
to the budget floor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .text import BLANK_ID, CLS_ID, MASK_ID, PAD_ID, SEP_ID, RESERVED

STRATEGIES = ("random", "bm", "am", "bm+am")
MASK_RATE = 0.15
ACTION_PROBS = (0.8, 0.1, 0.1)  # [MASK] / random in-vocab token / keep

# Tokens that carry structure rather than content; never selected for masking.
NEVER_MASK_IDS = frozenset({PAD_ID, CLS_ID, SEP_ID, MASK_ID, BLANK_ID})


@dataclass
class TextMaskPlan:
    """Masked text positions with their replacement actions already resolved."""

    indices: np.ndarray        # (k,) ascending positions
    actions: np.ndarray        # (k,) 0=[MASK], 1=random token, 2=keep
    original_ids: np.ndarray   # (k,)
    replacement_ids: np.ndarray  # (k,) the ids actually written

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class VideoMaskPlan:
    """Boolean patch mask over (T, H, W), plus the sampled boxes when blockwise."""

    mask: np.ndarray  # (T, H, W) bool
    blocks: list[tuple[int, int, int, int, int, int]] | None = None  # (t0,t1,y0,y1,x0,x1)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def frame_index_sets(self) -> list[np.ndarray]:
        """Per-frame flat spatial indices, aligned with the token grid."""
        t = self.mask.shape[0]
        flat = self.mask.reshape(t, -1)
        return [np.nonzero(flat[i])[0] for i in range(t)]


@dataclass
class MaskPlan:
    text: TextMaskPlan
    video: VideoMaskPlan


def maskable_positions(ids: np.ndarray, flags: np.ndarray) -> np.ndarray:
    keep = flags.astype(bool) & ~np.isin(ids, list(NEVER_MASK_IDS))
    return np.nonzero(keep)[0]


def _resolve_actions(indices: np.ndarray, ids: np.ndarray, vocab_size: int,
                     rng: np.random.Generator,
                     action_probs=ACTION_PROBS) -> TextMaskPlan:
    p_mask, p_random, _ = action_probs
    u = rng.random(len(indices))
    actions = np.where(u < p_mask, 0, np.where(u < p_mask + p_random, 1, 2))
    replacements = ids[indices].copy()
    replacements[actions == 0] = MASK_ID
    n_rand = int((actions == 1).sum())
    if n_rand:
        replacements[actions == 1] = rng.integers(len(RESERVED), vocab_size, size=n_rand)
    return TextMaskPlan(indices, actions, ids[indices].copy(), replacements)


def mask_text(ids: np.ndarray, flags: np.ndarray, vocab_size: int,
              rng: np.random.Generator, rate: float = MASK_RATE,
              action_probs=ACTION_PROBS,
              forced_indices: np.ndarray | None = None):
    """Select ceil(rate * eligible) non-special positions and resolve actions.

    Returns (masked ids, TextMaskPlan). With forced_indices given (attended
    masking), the selection step is skipped and only actions are resolved.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if forced_indices is not None:
        chosen = np.sort(np.asarray(forced_indices, dtype=np.int64))
    else:
        eligible = maskable_positions(ids, np.asarray(flags))
        k = math.ceil(rate * len(eligible))
        chosen = np.sort(rng.choice(eligible, size=k, replace=False)) if k else \
            np.empty(0, dtype=np.int64)
    plan = _resolve_actions(chosen, ids, vocab_size, rng, action_probs)
    masked = ids.copy()
    masked[plan.indices] = plan.replacement_ids
    return masked, plan


def random_video_mask(dims: tuple[int, int, int], rng: np.random.Generator,
                      rate: float = MASK_RATE) -> VideoMaskPlan:
    """Mask exactly ceil(rate * N) patches, uniformly without replacement."""
    t, h, w = dims
    n = t * h * w
    k = math.ceil(rate * n)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return VideoMaskPlan(mask.reshape(t, h, w))


def blockwise_video_mask(dims: tuple[int, int, int], rng: np.random.Generator,
                         rate: float = MASK_RATE,
                         max_spatial: int = 4,
                         max_temporal: int | None = None) -> VideoMaskPlan:
    """Union of spatio-temporal boxes sampled until the masked fraction
    exceeds rate.

    Block heights/widths are uniform on [1, min(max_spatial, dim)] and depths
    on [1, max_temporal or T]; anchors are uniform over the grid and clamped
    so the box fits. A candidate box that would push the total past
    floor(rate*N) + max_volume - 1 is resampled, which keeps the overshoot
    strictly below one maximal block.
    """
    t, h, w = dims
    n = t * h * w
    bh, bw = min(max_spatial, h), min(max_spatial, w)
    bt = min(max_temporal, t) if max_temporal else t
    max_volume = bh * bw * bt
    cap = math.floor(rate * n) + max_volume - 1
    mask = np.zeros((t, h, w), dtype=bool)
    blocks: list[tuple[int, int, int, int, int, int]] = []

    while mask.sum() <= rate * n:
        for _ in range(1000):
            dt = int(rng.integers(1, bt + 1))
            dh = int(rng.integers(1, bh + 1))
            dw = int(rng.integers(1, bw + 1))
            t0 = min(int(rng.integers(0, t)), t - dt)
            y0 = min(int(rng.integers(0, h)), h - dh)
            x0 = min(int(rng.integers(0, w)), w - dw)
            box = (t0, t0 + dt, y0, y0 + dh, x0, x0 + dw)
            new = int((~mask[box[0]:box[1], box[2]:box[3], box[4]:box[5]]).sum())
            if mask.sum() + new <= cap:
                break
        else:
            # Overshoot cap kept rejecting: fall back to one unmasked cell.
            flat = np.nonzero(~mask.reshape(-1))[0]
            cell = int(flat[0])
            t0, rest = divmod(cell, h * w)
            y0, x0 = divmod(rest, w)
            box = (t0, t0 + 1, y0, y0 + 1, x0, x0 + 1)
        mask[box[0]:box[1], box[2]:box[3], box[4]:box[5]] = True
        blocks.append(box)
    return VideoMaskPlan(mask, blocks)


def top_k_by_score(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties broken by lower index."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=np.float64)))
    return np.sort(order[:k])


def attended_video_mask(scores: np.ndarray, dims: tuple[int, int, int],
                        rate: float = MASK_RATE) -> VideoMaskPlan:
    """Mask the top ceil(rate * N) most-attended patches."""
    t, h, w = dims
    n = t * h * w
    flat = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(flat) != n:
        raise ValueError(f"expected {n} scores, got {len(flat)}")
    mask = np.zeros(n, dtype=bool)
    mask[top_k_by_score(flat, math.ceil(rate * n))] = True
    return VideoMaskPlan(mask.reshape(t, h, w))


def attended_text_indices(scores: np.ndarray, ids: np.ndarray, flags: np.ndarray,
                          rate: float = MASK_RATE) -> np.ndarray:
    """Top ceil(rate * eligible) non-special positions by attention score."""
    eligible = maskable_positions(np.asarray(ids), np.asarray(flags))
    if len(eligible) == 0:
        return np.empty(0, dtype=np.int64)
    k = math.ceil(rate * len(eligible))
    ranked = top_k_by_score(np.asarray(scores, dtype=np.float64)[eligible], k)
    return eligible[ranked]


def top_up_text_indices(indices: np.ndarray, ids: np.ndarray, flags: np.ndarray,
                        rng: np.random.Generator,
                        rate: float = MASK_RATE) -> np.ndarray:
    """Randomly extend a pick set up to the ceil(rate * eligible) floor."""
    eligible = maskable_positions(np.asarray(ids), np.asarray(flags))
    floor_k = math.ceil(rate * len(eligible))
    if len(indices) >= floor_k:
        return np.sort(indices)
    pool = np.setdiff1d(eligible, indices)
    extra = rng.choice(pool, size=floor_k - len(indices), replace=False)
    return np.sort(np.concatenate([indices, extra]))


def union_video_masks(a: VideoMaskPlan, b: VideoMaskPlan) -> VideoMaskPlan:
    return VideoMaskPlan(a.mask | b.mask, None)


def plan_for_strategy(strategy: str, dims: tuple[int, int, int],
                      ids: np.ndarray, flags: np.ndarray, vocab_size: int,
                      rng: np.random.Generator, rate: float = MASK_RATE,
                      video_scores: np.ndarray | None = None,
                      text_scores: np.ndarray | None = None):
    """Build one example's (masked text ids, MaskPlan) under a strategy."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown masking strategy {strategy!r}")
    needs_scores = strategy in ("am", "bm+am")
    if needs_scores and (video_scores is None or text_scores is None):
        raise ValueError(f"strategy {strategy!r} requires attention scores")

    if strategy == "random":
        video = random_video_mask(dims, rng, rate)
    elif strategy == "bm":
        video = blockwise_video_mask(dims, rng, rate)
    elif strategy == "am":
        video = attended_video_mask(video_scores, dims, rate)
    else:
        video = union_video_masks(blockwise_video_mask(dims, rng, rate),
                                  attended_video_mask(video_scores, dims, rate))

    if needs_scores:
        picks = attended_text_indices(text_scores, ids, flags, rate)
        if strategy == "bm+am":
            picks = top_up_text_indices(picks, ids, flags, rng, rate)
        masked_ids, text_plan = mask_text(ids, flags, vocab_size, rng,
                                          rate, forced_indices=picks)
    else:
        masked_ids, text_plan = mask_text(ids, flags, vocab_size, rng, rate)
    return masked_ids, MaskPlan(text_plan, video)


def apply_video_mask_to_grid(patches: np.ndarray, plan: VideoMaskPlan) -> np.ndarray:
    """Zero masked patches of a (T, H, W, P, P, 3) patch grid."""
    t, h, w = patches.shape[:3]
    if plan.mask.shape != (t, h, w):
        raise ValueError(f"plan dims {plan.mask.shape} do not match grid {(t, h, w)}")
    out = patches.copy()
    out[plan.mask] = 0.0
    return out


def apply_video_mask_to_frames(frames: torch.Tensor, mask: torch.Tensor,
                               patch_size: int) -> torch.Tensor:
    """Zero masked patches' pixels in (B, T, H_px, W_px, 3) frames.

    mask: (B, T, H, W) bool over the patch grid.
    """
    pixel_mask = mask.repeat_interleave(patch_size, dim=2).repeat_interleave(patch_size, dim=3)
    return frames * (~pixel_mask[..., None]).to(frames.dtype)
