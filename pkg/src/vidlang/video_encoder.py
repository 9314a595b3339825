"""Spatio-temporal video encoder.

Patch projection, learnable spatial/temporal position embeddings, and
self-attention inside 3D (temporal x spatial) windows that alternate between
regular and cyclically shifted placements. No temporal downsampling: the
output keeps one feature row per input patch so masked-token prediction can
index patches and features identically.

Two ablation variants share the blocks but restrict temporal mixing:
"mean" encodes frames independently and broadcasts their temporal average
(destroying order by construction); "concat" encodes frames independently
and keeps them in sequence order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

VARIANTS = ("vt", "mean", "concat")


@dataclass
class VideoEncoderConfig:
    width: int = 128
    depth: int = 4
    heads: int = 4
    window: tuple[int, int, int] = (2, 2, 2)
    shift: bool = True
    variant: str = "vt"
    mlp_ratio: int = 4
    patch_size: int = 8
    grid_size: int = 8
    t_max: int = 8
    allow_padding: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown video encoder variant {self.variant!r}")
        if self.width % self.heads:
            raise ConfigError("width must be divisible by heads")


def patchify_frames(frames: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, T, H_px, W_px, 3) pixels -> (B, T, H, W, P*P*3) flattened patches."""
    b, t, h_px, w_px, c = frames.shape
    if h_px % patch_size or w_px % patch_size:
        raise ValueError(f"frame dims {h_px}x{w_px} not divisible by {patch_size}")
    h, w = h_px // patch_size, w_px // patch_size
    x = frames.reshape(b, t, h, patch_size, w, patch_size, c)
    return x.permute(0, 1, 2, 4, 3, 5, 6).reshape(b, t, h, w, patch_size * patch_size * c)


class PatchProjector(nn.Module):
    """Linear projection of flattened pixel patches to model width."""

    def __init__(self, patch_size: int, width: int):
        super().__init__()
        self.in_dim = patch_size * patch_size * 3
        self.proj = nn.Linear(self.in_dim, width)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        if patches.shape[-1] != self.in_dim:
            raise ConfigError(
                f"patch dim {patches.shape[-1]} does not match projection input {self.in_dim}")
        return self.proj(patches)


class PositionEmbeddings(nn.Module):
    """Learnable spatial-grid, temporal-order, and text-order embeddings.

    Every patch of frame t receives the same temporal row, and every patch at
    a spatial site receives that site's spatial embedding, so the combined
    video position is their broadcast sum. The same video positions are
    reused at fusion time; text rows get their own order embeddings.
    """

    def __init__(self, grid_size: int, t_max: int, l_max: int, width: int):
        super().__init__()
        self.t_max = t_max
        self.l_max = l_max
        self.spatial = nn.Parameter(torch.empty(grid_size, grid_size, width))
        self.temporal = nn.Parameter(torch.empty(t_max, width))
        self.text = nn.Parameter(torch.empty(l_max, width))
        nn.init.trunc_normal_(self.spatial, std=0.02)
        nn.init.trunc_normal_(self.temporal, std=0.02)
        nn.init.trunc_normal_(self.text, std=0.02)

    def combined(self, t: int, include_temporal: bool = True) -> torch.Tensor:
        """(T, H, W, d) broadcast sum of spatial and temporal embeddings."""
        if t > self.t_max:
            raise ConfigError(f"clip length {t} exceeds maximum {self.t_max}")
        pos = self.spatial[None].expand(t, -1, -1, -1)
        if include_temporal:
            pos = pos + self.temporal[:t, None, None, :]
        return pos

    def add_to_video(self, u: torch.Tensor, include_temporal: bool = True) -> torch.Tensor:
        return u + self.combined(u.shape[1], include_temporal)

    def add_to_text(self, w: torch.Tensor) -> torch.Tensor:
        length = w.shape[-2]
        if length > self.l_max:
            raise ConfigError(f"text length {length} exceeds maximum {self.l_max}")
        return w + self.text[:length]


def clamp_window(dims, window, shift):
    """Shrink window axes to the grid and zero their shift where they cover it."""
    window, shift = list(window), list(shift)
    for i in range(3):
        if dims[i] <= window[i]:
            window[i] = dims[i]
            shift[i] = 0
    return tuple(window), tuple(shift)


def window_partition_3d(x: torch.Tensor, window, shift=(0, 0, 0)):
    """Cyclic-shift, pad, and partition (B, T, H, W, C) into 3D windows.

    Returns (windows, meta): windows is (B * n_windows, prod(window), C) and
    meta carries what window_reverse_3d needs to restore the input bit-exactly.
    """
    b, t, h, w, c = x.shape
    wt, wh, ww = window
    st, sh, sw = shift
    if st >= wt or sh >= wh or sw >= ww:
        raise ValueError("shift offsets must be smaller than window dims")
    if any(shift):
        x = torch.roll(x, shifts=(-st, -sh, -sw), dims=(1, 2, 3))
    pt, ph, pw = (-t) % wt, (-h) % wh, (-w) % ww
    if pt or ph or pw:
        x = F.pad(x, (0, 0, 0, pw, 0, ph, 0, pt))
    tp, hp, wp = t + pt, h + ph, w + pw
    nt, nh, nw = tp // wt, hp // wh, wp // ww
    x = x.view(b, nt, wt, nh, wh, nw, ww, c)
    windows = x.permute(0, 1, 3, 5, 2, 4, 6, 7).reshape(b * nt * nh * nw, wt * wh * ww, c)
    meta = (b, (t, h, w), (tp, hp, wp), window, shift)
    return windows, meta


def window_reverse_3d(windows: torch.Tensor, meta) -> torch.Tensor:
    """Inverse of window_partition_3d."""
    b, (t, h, w), (tp, hp, wp), (wt, wh, ww), (st, sh, sw) = meta
    c = windows.shape[-1]
    x = windows.view(b, tp // wt, hp // wh, wp // ww, wt, wh, ww, c)
    x = x.permute(0, 1, 4, 2, 5, 3, 6, 7).reshape(b, tp, hp, wp, c)
    x = x[:, :t, :h, :w, :]
    if st or sh or sw:
        x = torch.roll(x, shifts=(st, sh, sw), dims=(1, 2, 3))
    return x.contiguous()


def window_attention_mask(dims, padded_dims, window, shift,
                          dtype=torch.float32) -> torch.Tensor | None:
    """Additive (n_windows, vol, vol) mask blocking cross-boundary attention.

    Positions wrapped in by the cyclic shift and positions created by padding
    get region labels distinct from their window neighbors; attention between
    different regions is suppressed with a large negative value.
    """
    t, h, w = dims
    tp, hp, wp = padded_dims
    wt, wh, ww = window
    st, sh, sw = shift
    if not any(shift) and (tp, hp, wp) == (t, h, w):
        return None
    labels = torch.zeros(tp, hp, wp)
    if any(shift):
        region = 0
        axis_slices = []
        for size, win, s in ((tp, wt, st), (hp, wh, sh), (wp, ww, sw)):
            if s:
                axis_slices.append((slice(0, size - win), slice(size - win, size - s),
                                    slice(size - s, None)))
            else:
                axis_slices.append((slice(0, size),))
        for ts in axis_slices[0]:
            for hs in axis_slices[1]:
                for ws in axis_slices[2]:
                    labels[ts, hs, ws] = region
                    region += 1
    if (tp, hp, wp) != (t, h, w):
        pad = torch.ones(tp, hp, wp, dtype=torch.bool)
        pad[:t, :h, :w] = False
        if any(shift):
            pad = torch.roll(pad, shifts=(-st, -sh, -sw), dims=(0, 1, 2))
        labels[pad] = -1.0
    lab_windows, _ = window_partition_3d(labels[None, ..., None], window)
    lab_windows = lab_windows.squeeze(-1)
    diff = lab_windows.unsqueeze(1) - lab_windows.unsqueeze(2)
    mask = torch.zeros_like(diff, dtype=dtype)
    mask[diff != 0] = -1e9
    return mask


class WindowAttention3D(nn.Module):
    """Multi-head self-attention inside (possibly shifted) 3D windows."""

    def __init__(self, width: int, heads: int, window, shift, allow_padding=True):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.window = window
        self.shift = shift
        self.allow_padding = allow_padding
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, h, w, c = x.shape
        window, shift = clamp_window((t, h, w), self.window, self.shift)
        if not self.allow_padding:
            if t % window[0] or h % window[1] or w % window[2]:
                raise ConfigError(
                    f"grid {(t, h, w)} not divisible by window {window} and padding disabled")
        windows, meta = window_partition_3d(x, window, shift)
        mask = window_attention_mask((t, h, w), meta[2], window, shift, dtype=x.dtype)

        n, vol, _ = windows.shape
        qkv = self.qkv(windows).reshape(n, vol, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.head_dim**-0.5
        if mask is not None:
            n_win = mask.shape[0]
            attn = attn.view(n // n_win, n_win, self.heads, vol, vol)
            attn = attn + mask.unsqueeze(0).unsqueeze(2)
            attn = attn.view(n, self.heads, vol, vol)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, vol, c)
        return window_reverse_3d(self.proj(out), meta)


class EncoderBlock(nn.Module):
    """Pre-norm residual block: windowed attention then MLP."""

    def __init__(self, width, heads, window, shift, mlp_ratio=4, allow_padding=True):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = WindowAttention3D(width, heads, window, shift, allow_padding)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class VideoEncoder(nn.Module):
    """Stack of windowed blocks; behavior depends on the configured variant."""

    def __init__(self, cfg: VideoEncoderConfig):
        super().__init__()
        self.cfg = cfg
        wt, wh, ww = cfg.window
        if cfg.variant in ("mean", "concat"):
            # Frame-independent encoding: spatial-only windows, no temporal mixing.
            window = (1, wh, ww)
        else:
            window = (wt, wh, ww)
        blocks = []
        for i in range(cfg.depth):
            if cfg.shift and i % 2 == 1:
                shift = (window[0] // 2, window[1] // 2, window[2] // 2)
            else:
                shift = (0, 0, 0)
            blocks.append(EncoderBlock(cfg.width, cfg.heads, window, shift,
                                       cfg.mlp_ratio, cfg.allow_padding))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, u_pos: torch.Tensor) -> torch.Tensor:
        """(B, T, H, W, d) positioned patch embeddings -> same-shape features."""
        x = u_pos
        for block in self.blocks:
            x = block(x)
        if self.cfg.variant == "mean":
            x = x.mean(dim=1, keepdim=True).expand_as(x)
        return x
