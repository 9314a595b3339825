"""The full video-language model: encoders, fusion, and prediction heads."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .cross_modal import CrossModalEncoder, FusionConfig, JointFeatures
from .errors import ConfigError
from .text import TextEmbedder
from .video_encoder import (PatchProjector, PositionEmbeddings, VideoEncoder,
                            VideoEncoderConfig, patchify_frames)


@dataclass
class ModelConfig:
    width: int = 128
    patch_size: int = 8
    grid_size: int = 8
    t_max: int = 8
    l_max: int = 32
    vocab_size: int = 512
    codebook_size: int = 256
    code_dim: int = 32
    video_depth: int = 4
    video_heads: int = 4
    window: tuple[int, int, int] = (2, 2, 2)
    shift: bool = True
    variant: str = "vt"
    fusion_depth: int = 4
    fusion_heads: int = 4
    mlp_ratio: int = 4
    use_segment_embeddings: bool = True

    def video_config(self) -> VideoEncoderConfig:
        return VideoEncoderConfig(
            width=self.width, depth=self.video_depth, heads=self.video_heads,
            window=self.window, shift=self.shift, variant=self.variant,
            mlp_ratio=self.mlp_ratio, patch_size=self.patch_size,
            grid_size=self.grid_size, t_max=self.t_max)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(
            width=self.width, depth=self.fusion_depth, heads=self.fusion_heads,
            mlp_ratio=self.mlp_ratio,
            use_segment_embeddings=self.use_segment_embeddings)


class VidLangModel(nn.Module):
    """Composed model with pretraining heads and optional task heads.

    Pretraining heads: word-token classifier over the text vocabulary,
    scalar match head on the [CLS] feature, visual-token classifier over the
    codebook, and a regression head onto frozen tokenizer features for the
    feature-regression baseline.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_proj = PatchProjector(cfg.patch_size, cfg.width)
        self.positions = PositionEmbeddings(cfg.grid_size, cfg.t_max, cfg.l_max, cfg.width)
        self.video_encoder = VideoEncoder(cfg.video_config())
        self.text_embedder = TextEmbedder(cfg.vocab_size, cfg.width)
        self.fusion = CrossModalEncoder(cfg.fusion_config())
        self.head_mlm = nn.Linear(cfg.width, cfg.vocab_size)
        self.head_vtm = nn.Linear(cfg.width, 1)
        self.head_mvm = nn.Linear(cfg.width, cfg.codebook_size)
        self.head_mfm = nn.Linear(cfg.width, cfg.code_dim)
        self.task_heads = nn.ModuleDict()

    def add_task_head(self, name: str, out_dim: int) -> nn.Linear:
        head = nn.Linear(self.cfg.width, out_dim)
        self.task_heads[name] = head
        return head

    def init_retrieval_head_from_vtm(self) -> nn.Linear:
        """Create the retrieval scorer initialized from the match head."""
        head = self.add_task_head("t2v", 1)
        with torch.no_grad():
            head.weight.copy_(self.head_vtm.weight)
            head.bias.copy_(self.head_vtm.bias)
        return head

    def encode_video(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, H_px, W_px, 3) pixels -> (B, T, H, W, d) features."""
        patches = patchify_frames(frames, self.cfg.patch_size)
        u = self.patch_proj(patches)
        # The mean variant must not see temporal order anywhere before pooling.
        include_temporal = self.cfg.variant != "mean"
        u = self.positions.add_to_video(u, include_temporal=include_temporal)
        return self.video_encoder(u)

    def forward(self, frames: torch.Tensor, text_ids: torch.Tensor,
                text_flags: torch.Tensor, return_attention: bool = False):
        """Full pathway to joint features (optionally with attention maps)."""
        v = self.encode_video(frames)
        b, t, h, w, d = v.shape
        v_rows = self.positions.add_to_video(v).reshape(b, t * h * w, d)
        w_rows = self.positions.add_to_text(self.text_embedder(text_ids))
        return self.fusion.fuse(v_rows, w_rows, text_flags, (t, h, w),
                                return_attention=return_attention)

    def match_logits(self, features: JointFeatures, head: str = "vtm") -> torch.Tensor:
        """(B,) raw pair-match logits from the [CLS] feature."""
        if head == "vtm":
            layer = self.head_vtm
        elif head in self.task_heads:
            layer = self.task_heads[head]
        else:
            raise ConfigError(f"unknown match head {head!r}")
        return layer(features.cls).squeeze(-1)

    def match_scores(self, frames, text_ids, text_flags, head: str = "vtm") -> torch.Tensor:
        """Sigmoid match score in (0, 1) per pair."""
        return torch.sigmoid(self.match_logits(self(frames, text_ids, text_flags), head))
