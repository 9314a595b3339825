import numpy as np
import pytest
import torch

from vidlang.errors import ConfigError
from vidlang.video_encoder import (EncoderBlock, PatchProjector,
                                   PositionEmbeddings, VideoEncoder,
                                   VideoEncoderConfig, WindowAttention3D,
                                   clamp_window, patchify_frames,
                                   window_attention_mask, window_partition_3d,
                                   window_reverse_3d)


def _cfg(variant="vt", **kw):
    base = dict(width=32, depth=2, heads=4, window=(2, 2, 2), shift=True,
                variant=variant, patch_size=8, grid_size=4, t_max=4)
    base.update(kw)
    return VideoEncoderConfig(**base)


def test_patchify_frames_shape():
    frames = torch.rand(2, 4, 32, 32, 3)
    patches = patchify_frames(frames, 8)
    assert patches.shape == (2, 4, 4, 4, 192)


def test_patch_projection_linearity():
    proj = PatchProjector(8, 16)
    with torch.no_grad():
        proj.proj.bias.zero_()
    x = torch.rand(1, 2, 2, 2, 192)
    assert torch.equal(proj(torch.zeros_like(x)), torch.zeros(1, 2, 2, 2, 16))
    assert torch.allclose(proj(3.0 * x), 3.0 * proj(x), atol=1e-6)


def test_patch_projection_shape_and_dim_check():
    proj = PatchProjector(8, 128)
    u = proj(torch.rand(1, 4, 7, 7, 192))
    assert u.shape == (1, 4, 7, 7, 128)
    with pytest.raises(ConfigError):
        proj(torch.rand(1, 4, 7, 7, 100))


def test_positions_zero_input_gives_broadcast_sum():
    pos = PositionEmbeddings(2, 3, 8, 16)
    u = torch.zeros(1, 3, 2, 2, 16)
    out = pos.add_to_video(u)
    expected = pos.spatial[None] + pos.temporal[:3, None, None, :]
    assert torch.allclose(out[0], expected)


def test_positions_same_frame_cancellation():
    # Two patches of the same frame differ by exactly their spatial rows.
    pos = PositionEmbeddings(2, 3, 8, 16)
    u = torch.rand(1, 3, 2, 2, 16)
    out = pos.add_to_video(u)
    diff = (out[0, 1, 0, 0] - out[0, 1, 1, 1]) - (u[0, 1, 0, 0] - u[0, 1, 1, 1])
    assert torch.allclose(diff, pos.spatial[0, 0] - pos.spatial[1, 1], atol=1e-6)


def test_positions_same_site_cancellation():
    # Same spatial site across frames differs by the temporal rows alone.
    pos = PositionEmbeddings(2, 3, 8, 16)
    u = torch.rand(1, 3, 2, 2, 16)
    out = pos.add_to_video(u)
    diff = (out[0, 0, 1, 0] - out[0, 2, 1, 0]) - (u[0, 0, 1, 0] - u[0, 2, 1, 0])
    assert torch.allclose(diff, pos.temporal[0] - pos.temporal[2], atol=1e-6)


def test_positions_reject_overlong_clip():
    pos = PositionEmbeddings(2, 3, 8, 16)
    with pytest.raises(ConfigError):
        pos.add_to_video(torch.zeros(1, 4, 2, 2, 16))


def test_window_partition_inverse_identity():
    x = torch.rand(2, 4, 4, 4, 8)
    for shift in [(0, 0, 0), (1, 1, 1), (0, 1, 0)]:
        windows, meta = window_partition_3d(x, (2, 2, 2), shift)
        assert torch.equal(window_reverse_3d(windows, meta), x)


def test_window_partition_inverse_identity_with_padding():
    x = torch.rand(1, 3, 5, 5, 4)
    windows, meta = window_partition_3d(x, (2, 2, 2), (1, 1, 1))
    assert torch.equal(window_reverse_3d(windows, meta), x)


def test_window_partition_counts():
    # Zero shift, 4x4 spatial grid, window 2 -> 4 spatial windows per frame group.
    x = torch.rand(1, 2, 4, 4, 8)
    windows, _ = window_partition_3d(x, (2, 2, 2), (0, 0, 0))
    assert windows.shape == (1 * 1 * 2 * 2, 8, 8)


def test_window_shift_relocates_cyclically():
    t, h, w = 2, 4, 4
    x = torch.arange(t * h * w, dtype=torch.float32).reshape(1, t, h, w, 1)
    windows, meta = window_partition_3d(x, (2, 2, 2), (1, 1, 1))
    # Rebuild the shifted grid from the windows and compare with torch.roll.
    b, dims, padded, window, shift = meta
    shifted = window_reverse_3d(windows, (b, dims, padded, window, (0, 0, 0)))
    expected = torch.roll(x, shifts=(-1, -1, -1), dims=(1, 2, 3))
    assert torch.equal(shifted, expected)


def test_clamp_window_zeroes_shift():
    window, shift = clamp_window((1, 4, 4), (2, 2, 2), (1, 1, 1))
    assert window == (1, 2, 2)
    assert shift == (0, 1, 1)


def test_attention_mask_blocks_cross_region():
    mask = window_attention_mask((4, 4, 4), (4, 4, 4), (2, 2, 2), (1, 1, 1))
    assert mask is not None
    assert mask.shape[1:] == (8, 8)
    assert (mask == 0).any() and (mask < -1e8).any()
    assert window_attention_mask((4, 4, 4), (4, 4, 4), (2, 2, 2), (0, 0, 0)) is None


def test_attention_mask_isolates_padding():
    # 3 frames padded to 4: padded cells must not exchange attention with real.
    mask = window_attention_mask((3, 2, 2), (4, 2, 2), (2, 2, 2), (0, 0, 0))
    # Window covering frames 2..3 holds 4 real cells (frame 2) and 4 padded.
    last = mask[-1]
    assert (last[:4, 4:] < -1e8).all()
    assert (last[4:, :4] < -1e8).all()
    assert (last[:4, :4] == 0).all()


def test_encoder_output_shape_and_temporal_preservation():
    for variant in ("vt", "mean", "concat"):
        enc = VideoEncoder(_cfg(variant))
        x = torch.rand(2, 4, 4, 4, 32)
        out = enc(x)
        assert out.shape == x.shape


def test_encoder_static_image_path():
    for variant in ("vt", "mean", "concat"):
        enc = VideoEncoder(_cfg(variant))
        out = enc(torch.rand(1, 1, 4, 4, 32))
        assert out.shape == (1, 1, 4, 4, 32)


def test_mean_variant_is_permutation_invariant():
    enc = VideoEncoder(_cfg("mean"))
    x = torch.rand(1, 4, 4, 4, 32)
    perm = x[:, [2, 0, 3, 1]]
    assert torch.allclose(enc(x), enc(perm), atol=1e-5)


def test_vt_variant_is_permutation_sensitive():
    enc = VideoEncoder(_cfg("vt"))
    x = torch.rand(1, 4, 4, 4, 32)
    perm = x[:, [2, 0, 3, 1]]
    assert not torch.allclose(enc(x), enc(perm), atol=1e-4)


def test_concat_variant_no_cross_frame_mixing():
    # Changing one frame leaves every other frame's features untouched.
    enc = VideoEncoder(_cfg("concat", shift=True))
    x = torch.rand(1, 4, 4, 4, 32)
    y = x.clone()
    y[:, 2] = torch.rand(4, 4, 32)
    out_x, out_y = enc(x), enc(y)
    for t in (0, 1, 3):
        assert torch.allclose(out_x[:, t], out_y[:, t], atol=1e-6)
    assert not torch.allclose(out_x[:, 2], out_y[:, 2], atol=1e-4)


def test_padding_disabled_raises():
    attn = WindowAttention3D(32, 4, (2, 2, 2), (0, 0, 0), allow_padding=False)
    with pytest.raises(ConfigError):
        attn(torch.rand(1, 3, 4, 4, 32))


def test_block_gradients_flow():
    block = EncoderBlock(32, 4, (2, 2, 2), (1, 1, 1))
    x = torch.rand(1, 2, 4, 4, 32, requires_grad=True)
    block(x).sum().backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()
