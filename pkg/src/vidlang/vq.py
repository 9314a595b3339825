"""Vector-quantized frame tokenizer.

A small convolutional autoencoder whose bottleneck is snapped to the nearest
entry of a learned codebook (straight-through gradient). Frames map to grids
of discrete token ids, one per visual patch, and ids decode back to pixels.
Trained locally on the synthetic corpus; frozen afterwards.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

CHECKPOINT_VERSION = 1


class _FrameEncoder(nn.Module):
    """Downsamples (B, 3, H, W) by the patch factor to (B, code_dim, h, w)."""

    def __init__(self, patch_size: int, code_dim: int, hidden: int = 64):
        super().__init__()
        n_halvings = patch_size.bit_length() - 1
        if 2 ** n_halvings != patch_size:
            raise ConfigError(f"patch size {patch_size} must be a power of two")
        layers: list[nn.Module] = []
        ch_in = 3
        for i in range(n_halvings):
            ch_out = hidden if i < n_halvings - 1 else code_dim
            layers += [nn.Conv2d(ch_in, ch_out, 4, stride=2, padding=1)]
            if i < n_halvings - 1:
                layers += [nn.ReLU()]
            ch_in = ch_out
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class _FrameDecoder(nn.Module):
    def __init__(self, patch_size: int, code_dim: int, hidden: int = 64):
        super().__init__()
        n_doublings = patch_size.bit_length() - 1
        layers: list[nn.Module] = []
        ch_in = code_dim
        for i in range(n_doublings):
            ch_out = 3 if i == n_doublings - 1 else hidden
            layers += [nn.ConvTranspose2d(ch_in, ch_out, 4, stride=2, padding=1)]
            if i < n_doublings - 1:
                layers += [nn.ReLU()]
            ch_in = ch_out
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class _Quantizer(nn.Module):
    """Nearest-codebook-entry assignment; equidistant ties go to the lowest index."""

    def __init__(self, codebook_size: int, code_dim: int):
        super().__init__()
        if codebook_size < 2:
            raise ConfigError("codebook size must be >= 2")
        self.codebook = nn.Parameter(torch.empty(codebook_size, code_dim))
        nn.init.uniform_(self.codebook, -1.0 / codebook_size, 1.0 / codebook_size)

    def assign(self, z_flat: torch.Tensor) -> torch.Tensor:
        d = (
            z_flat.pow(2).sum(1, keepdim=True)
            - 2.0 * z_flat @ self.codebook.t()
            + self.codebook.pow(2).sum(1)
        )
        return d.argmin(dim=1)

    def forward(self, z: torch.Tensor):
        # z: (B, D, h, w)
        b, d, h, w = z.shape
        flat = z.permute(0, 2, 3, 1).reshape(-1, d)
        ids = self.assign(flat)
        quantized = self.codebook[ids].reshape(b, h, w, d).permute(0, 3, 1, 2)
        codebook_loss = F.mse_loss(quantized, z.detach())
        commit_loss = F.mse_loss(z, quantized.detach())
        quantized = z + (quantized - z).detach()
        return quantized, ids.reshape(b, h, w), codebook_loss, commit_loss


class VisualTokenizer(nn.Module):
    """Frozen tokenize/reconstruct artifact: frames <-> discrete token grids."""

    def __init__(self, codebook_size: int, patch_size: int, resolution: int,
                 code_dim: int = 32, hidden: int = 64, seed: int = 0):
        super().__init__()
        if resolution % patch_size:
            raise ConfigError("resolution must be divisible by patch size")
        self.codebook_size = codebook_size
        self.patch_size = patch_size
        self.resolution = resolution
        self.code_dim = code_dim
        self.hidden = hidden
        self.seed = seed
        self.encoder = _FrameEncoder(patch_size, code_dim, hidden)
        self.decoder = _FrameDecoder(patch_size, code_dim, hidden)
        self.quantizer = _Quantizer(codebook_size, code_dim)

    @property
    def grid_size(self) -> int:
        return self.resolution // self.patch_size

    def _check_resolution(self, frames: torch.Tensor) -> None:
        if frames.shape[-3] != self.resolution or frames.shape[-2] != self.resolution:
            raise ValueError(
                f"frame resolution {tuple(frames.shape[-3:-1])} does not match "
                f"trained resolution {self.resolution}")

    def forward(self, frames: torch.Tensor):
        # frames: (B, H, W, 3) in [0, 1]
        z = self.encoder(frames.permute(0, 3, 1, 2))
        quantized, ids, codebook_loss, commit_loss = self.quantizer(z)
        recon = self.decoder(quantized).permute(0, 2, 3, 1)
        return recon, ids, codebook_loss, commit_loss

    @torch.no_grad()
    def tokenize(self, frame: np.ndarray | torch.Tensor) -> np.ndarray:
        """Map one (H, W, 3) frame to an (h, w) grid of token ids."""
        t = torch.as_tensor(np.asarray(frame), dtype=torch.float32)
        self._check_resolution(t)
        z = self.encoder(t[None].permute(0, 3, 1, 2))
        ids = self.quantizer.assign(z.permute(0, 2, 3, 1).reshape(-1, self.code_dim))
        g = self.grid_size
        return ids.reshape(g, g).numpy()

    @torch.no_grad()
    def tokenize_batch(self, frames: torch.Tensor) -> torch.Tensor:
        """(..., H, W, 3) float frames -> (..., h, w) int64 token ids."""
        lead = frames.shape[:-3]
        flat = frames.reshape(-1, *frames.shape[-3:]).to(torch.float32)
        self._check_resolution(flat)
        z = self.encoder(flat.permute(0, 3, 1, 2))
        ids = self.quantizer.assign(z.permute(0, 2, 3, 1).reshape(-1, self.code_dim))
        g = self.grid_size
        return ids.reshape(*lead, g, g)

    @torch.no_grad()
    def encode_features(self, frames: torch.Tensor) -> torch.Tensor:
        """Pre-quantization encoder features, (..., h, w, code_dim)."""
        lead = frames.shape[:-3]
        flat = frames.reshape(-1, *frames.shape[-3:]).to(torch.float32)
        self._check_resolution(flat)
        z = self.encoder(flat.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        g = self.grid_size
        return z.reshape(*lead, g, g, self.code_dim)

    @torch.no_grad()
    def reconstruct(self, ids: np.ndarray | torch.Tensor) -> np.ndarray:
        """Decode an (h, w) grid of token ids to an (H, W, 3) frame in [0, 1]."""
        ids_t = torch.as_tensor(np.asarray(ids), dtype=torch.int64)
        if ids_t.numel() and (ids_t.min() < 0 or ids_t.max() >= self.codebook_size):
            raise ValueError("token id outside codebook range")
        z = self.quantizer.codebook[ids_t].permute(2, 0, 1)[None]
        frame = self.decoder(z)[0].permute(1, 2, 0)
        return frame.clamp(0.0, 1.0).numpy()


def _distinct_patch_count(frames: np.ndarray, patch_size: int) -> int:
    n, h, w, _ = frames.shape
    g_h, g_w = h // patch_size, w // patch_size
    tiles = frames.reshape(n, g_h, patch_size, g_w, patch_size, 3)
    tiles = tiles.transpose(0, 1, 3, 2, 4, 5).reshape(-1, patch_size * patch_size * 3)
    return len({t.tobytes() for t in tiles})


def train_tokenizer(frames: np.ndarray, codebook_size: int, steps: int, seed: int,
                    patch_size: int = 8, code_dim: int = 32, hidden: int = 64,
                    lr: float = 2e-3, batch_size: int = 16,
                    commitment_weight: float = 0.25):
    """Train the quantizing autoencoder; returns (frozen tokenizer, loss history).

    frames: (N, H, W, 3) float32 in [0, 1]. Codes unused for a full pass over
    the data are re-seeded to a random encoder output to avoid collapse.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[0] < 1:
        raise ValueError("need at least one (H, W, 3) frame")
    if codebook_size > _distinct_patch_count(frames, patch_size):
        warnings.warn("codebook size exceeds distinct-patch diversity of the corpus")

    torch.manual_seed(seed)
    model = VisualTokenizer(codebook_size, patch_size, frames.shape[1],
                            code_dim=code_dim, hidden=hidden, seed=seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    data = torch.from_numpy(frames)
    # Reseed window: at least one pass over the data, and long enough that
    # rare-but-real codes (shape edges) are not churned away on tiny corpora.
    epoch_len = max(200, (len(frames) + batch_size - 1) // batch_size)
    usage = torch.zeros(codebook_size, dtype=torch.int64)
    history = []

    for step in range(steps):
        idx = rng.integers(0, len(frames), size=min(batch_size, len(frames)))
        batch = data[idx]
        recon, ids, codebook_loss, commit_loss = model(batch)
        recon_loss = F.mse_loss(recon, batch)
        loss = recon_loss + codebook_loss + commitment_weight * commit_loss
        opt.zero_grad()
        loss.backward()
        opt.step()
        usage += torch.bincount(ids.reshape(-1), minlength=codebook_size)
        history.append(float(recon_loss.detach()))

        if (step + 1) % epoch_len == 0:
            dead = (usage == 0).nonzero(as_tuple=True)[0]
            if len(dead):
                with torch.no_grad():
                    z = model.encoder(batch.permute(0, 3, 1, 2))
                    pool = z.permute(0, 2, 3, 1).reshape(-1, code_dim)
                    pick = torch.as_tensor(
                        rng.integers(0, len(pool), size=len(dead)), dtype=torch.int64)
                    model.quantizer.codebook.data[dead] = pool[pick]
            usage.zero_()

    model.eval()
    model.requires_grad_(False)
    return model, history


def reconstruction_mse(model: VisualTokenizer, frames: np.ndarray) -> float:
    """Mean squared error of tokenize-then-reconstruct over frames."""
    total = 0.0
    for frame in np.asarray(frames, dtype=np.float32):
        recon = model.reconstruct(model.tokenize(frame))
        total += float(np.mean((recon - frame) ** 2))
    return total / len(frames)


def save_tokenizer(model: VisualTokenizer, path: str | Path) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "kind": "visual_tokenizer",
        "codebook_size": model.codebook_size,
        "patch_size": model.patch_size,
        "resolution": model.resolution,
        "code_dim": model.code_dim,
        "hidden": model.hidden,
        "seed": model.seed,
        "state": model.state_dict(),
    }, path)


def load_tokenizer(path: str | Path) -> VisualTokenizer:
    blob = torch.load(path, weights_only=True)
    if blob.get("kind") != "visual_tokenizer":
        raise ConfigError(f"{path} is not a visual tokenizer checkpoint")
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported tokenizer checkpoint version {blob.get('format_version')}")
    model = VisualTokenizer(blob["codebook_size"], blob["patch_size"], blob["resolution"],
                            code_dim=blob["code_dim"], hidden=blob["hidden"],
                            seed=blob["seed"])
    model.load_state_dict(blob["state"])
    model.eval()
    model.requires_grad_(False)
    return model
