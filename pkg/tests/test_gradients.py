"""Analytic gradients vs central finite differences.

The oracle re-evaluates the loss at theta +/- h per sampled coordinate and
never touches autograd, so the two sides are independent. All checks run in
float64 on micro configs.
"""

import numpy as np
import pytest
import torch

from vidlang.cross_modal import CrossModalEncoder, FusionConfig
from vidlang.model import ModelConfig, VidLangModel
from vidlang.pretraining import (PretrainConfig, build_mask_plans,
                                 pretrain_losses)
from vidlang.tasks import clips_to_batch
from vidlang.text import build_vocab
from vidlang.video_encoder import VideoEncoder, VideoEncoderConfig
from vidlang.data import generate_synthetic_corpus
from vidlang.vq import train_tokenizer

H_STEP = 1e-5
REL_TOL = 1e-4


def central_difference_check(loss_fn, module, rng, coords_per_tensor=3,
                             unused=()):
    """Compare autograd gradients with central differences per parameter.

    Parameters whose names contain an entry of `unused` may legitimately
    receive no gradient (heads not active under the checked variant); every
    other parameter must. Returns the worst relative error.
    """
    params = [(name, p) for name, p in module.named_parameters() if p.requires_grad]
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for name, p in params:
        if any(tag in name for tag in unused):
            continue
        assert p.grad is not None, f"no gradient reached {name}"
        flat = p.detach().reshape(-1)
        grad = p.grad.detach().reshape(-1)
        n = flat.numel()
        picks = rng.choice(n, size=min(coords_per_tensor, n), replace=False)
        for idx in picks:
            idx = int(idx)
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + H_STEP
                up = float(loss_fn())
                flat[idx] = orig - H_STEP
                down = float(loss_fn())
                flat[idx] = orig
            fd = (up - down) / (2 * H_STEP)
            an = float(grad[idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            assert rel < REL_TOL, (
                f"{name}[{idx}]: analytic {an:.3e} vs central-diff {fd:.3e} "
                f"(rel {rel:.2e})")
            worst = max(worst, rel)
    return worst


def test_video_encoder_gradients():
    torch.manual_seed(0)
    cfg = VideoEncoderConfig(width=16, depth=2, heads=2, window=(2, 2, 2),
                             shift=True, variant="vt", grid_size=2, t_max=2)
    enc = VideoEncoder(cfg).double()
    x = torch.rand(1, 2, 2, 2, 16, dtype=torch.float64)
    weights = torch.rand(1, 2, 2, 2, 16, dtype=torch.float64)

    def loss_fn():
        return (enc(x) * weights).sum()

    rng = np.random.default_rng(1)
    central_difference_check(loss_fn, enc, rng, coords_per_tensor=2)


def test_fusion_gradients():
    torch.manual_seed(0)
    enc = CrossModalEncoder(FusionConfig(width=16, depth=2, heads=2)).double()
    video = torch.rand(1, 4, 16, dtype=torch.float64)
    text = torch.rand(1, 3, 16, dtype=torch.float64)
    flags = torch.tensor([[True, True, False]])
    weights = torch.rand(1, 8, 16, dtype=torch.float64)

    def loss_fn():
        return (enc.fuse(video, text, flags, (1, 2, 2)).concat() * weights).sum()

    rng = np.random.default_rng(2)
    central_difference_check(loss_fn, enc, rng, coords_per_tensor=2)


@pytest.fixture(scope="module")
def micro_setup():
    # d=16, T=2, 2x2 patch grid, L=4, K=8.
    corpus = generate_synthetic_corpus(4, 2, 16, seed=31, n_shapes_range=(1, 1))
    vocab = build_vocab([c.caption for c in corpus], 64)
    frames = np.concatenate([c.frames for c in corpus])
    tokenizer, _ = train_tokenizer(frames, 8, 60, seed=5, patch_size=8,
                                   code_dim=8, hidden=16)
    torch.manual_seed(3)
    cfg = ModelConfig(width=16, patch_size=8, grid_size=2, t_max=2, l_max=4,
                      vocab_size=len(vocab), codebook_size=8, code_dim=8,
                      video_depth=2, video_heads=2, window=(2, 2, 2),
                      fusion_depth=2, fusion_heads=2)
    model = VidLangModel(cfg).double()
    batch = clips_to_batch(corpus, vocab, 2, 4)
    batch.frames = batch.frames.double()
    return model, batch, vocab, tokenizer


@pytest.mark.parametrize("mvm_variant", ["mvm", "mfm"])
def test_full_pretraining_loss_gradients(micro_setup, mvm_variant):
    model, batch, vocab, tokenizer = micro_setup
    cfg = PretrainConfig(strategy="bm+am", mvm_variant=mvm_variant)
    rng = np.random.default_rng(7)
    masked_frames, masked_ids, plans, video_mask = build_mask_plans(
        batch, (2, 2, 2), cfg, len(vocab), rng, model=model)

    def loss_fn():
        total, _ = pretrain_losses(model, batch, masked_frames, masked_ids,
                                   video_mask, plans, 1, cfg, tokenizer)
        return total

    # The two variants jointly cover every head; each leaves the other's
    # visual head untouched.
    unused = ("head_mfm",) if mvm_variant == "mvm" else ("head_mvm",)
    worst = central_difference_check(loss_fn, model, np.random.default_rng(8),
                                     coords_per_tensor=3, unused=unused)
    assert worst < REL_TOL
