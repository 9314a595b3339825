"""Cross-modal fusion transformer.

Fuses positioned per-patch video features, a learned [CLS] slot, and
positioned word embeddings into one joint sequence. Exposes per-layer
attention maps so the attended-masking strategy can score which video
patches and text tokens matter most.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError


@dataclass
class FusionConfig:
    width: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    use_segment_embeddings: bool = True

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError("fusion width must be divisible by heads")


@dataclass
class JointFeatures:
    """Joint sequence partitioned into (video rows, cls row, text rows)."""

    video: torch.Tensor  # (B, T*H*W, d)
    cls: torch.Tensor    # (B, d)
    text: torch.Tensor   # (B, L, d)
    video_dims: tuple[int, int, int]

    @property
    def n_video(self) -> int:
        return self.video.shape[1]

    def concat(self) -> torch.Tensor:
        """Restore the full joint sequence in input order."""
        return torch.cat([self.video, self.cls[:, None, :], self.text], dim=1)


class FusionAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, attend: torch.Tensor):
        # x: (B, S, d); attend: (B, S) bool, False rows are masked out as keys.
        b, s, c = x.shape
        qkv = self.qkv(x).reshape(b, s, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.head_dim**-0.5
        bias = torch.zeros(b, 1, 1, s, dtype=x.dtype, device=x.device)
        bias.masked_fill_(~attend[:, None, None, :], -1e9)
        attn = (attn + bias).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s, c)
        return self.proj(out), attn


class FusionBlock(nn.Module):
    def __init__(self, width, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = FusionAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x, attend):
        h, maps = self.attn(self.norm1(x), attend)
        x = x + h
        x = x + self.mlp(self.norm2(x))
        return x, maps


class CrossModalEncoder(nn.Module):
    """Transformer over [video rows, CLS, text rows].

    Video and text are distinguished by their positional embeddings; an
    optional learned 2-value segment embedding is added on top (an extension
    over positions alone, on by default).
    """

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.cls_token = nn.Parameter(torch.empty(1, 1, cfg.width))
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        if cfg.use_segment_embeddings:
            self.segments = nn.Embedding(2, cfg.width)
            nn.init.trunc_normal_(self.segments.weight, std=0.02)
        else:
            self.segments = None
        self.blocks = nn.ModuleList(
            FusionBlock(cfg.width, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))

    def fuse(self, video_rows: torch.Tensor, text_rows: torch.Tensor,
             text_flags: torch.Tensor, video_dims: tuple[int, int, int],
             return_attention: bool = False):
        """Run fusion; inputs already carry their positional embeddings.

        video_rows: (B, N, d) flattened patch features; text_rows: (B, L, d);
        text_flags: (B, L) bool, False marks padding. Returns JointFeatures,
        and the per-layer attention maps when return_attention is set.
        """
        if video_rows.shape[-1] != text_rows.shape[-1]:
            raise ConfigError("video and text widths differ")
        b, n_video, _ = video_rows.shape
        if self.segments is not None:
            video_rows = video_rows + self.segments.weight[0]
            text_rows = text_rows + self.segments.weight[1]
        cls = self.cls_token.to(video_rows.dtype).expand(b, -1, -1)
        x = torch.cat([video_rows, cls, text_rows], dim=1)
        attend = torch.cat([
            torch.ones(b, n_video + 1, dtype=torch.bool, device=x.device),
            text_flags.bool(),
        ], dim=1)

        maps = []
        for block in self.blocks:
            x, attn = block(x, attend)
            if return_attention:
                maps.append(attn)
        features = JointFeatures(
            video=x[:, :n_video],
            cls=x[:, n_video],
            text=x[:, n_video + 1:],
            video_dims=video_dims,
        )
        if return_attention:
            return features, maps
        return features


def attended_scores(maps: list[torch.Tensor], n_video: int, text_flags: torch.Tensor,
                    layer: int = -1, query_row: int | None = None):
    """Importance of each video patch / text token from the attention maps.

    Score of position j = the chosen layer's head-averaged attention from the
    [CLS] row (by default) to j, computed on intact inputs. Returns
    (video_scores (B, N), text_scores (B, L)) with padding scored 0.
    """
    if not maps:
        raise ConfigError("no attention maps captured (zero-depth fusion stack)")
    att = maps[layer].mean(dim=1)  # (B, S, S)
    row = n_video if query_row is None else query_row
    scores = att[:, row, :]
    video_scores = scores[:, :n_video]
    text_scores = scores[:, n_video + 1:] * text_flags.to(scores.dtype)
    return video_scores, text_scores
