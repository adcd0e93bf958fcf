"""Frame encoder/decoder pair working in a downsampled latent space.

The encoder maps a 3 x H x W frame to a d x H/f x W/f latent; the decoder
takes 2d channels (reference latent concatenated with a content latent) and
reconstructs a frame in [0, 1]. Trained from scratch with a reconstruction
loss plus a perceptual loss against a fixed random convolutional pyramid.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .nnutil import module_dtype


class FrameCodec(nn.Module):
    """Convolutional encoder/decoder; decoder input channels are exactly 2d."""

    def __init__(self, d: int = 8, f: int = 4, base_channels: int = 32):
        super().__init__()
        n_down = int(round(math.log2(f)))
        if 2**n_down != f or n_down < 1:
            raise ValueError(f"downsample factor f={f} must be a power of 2, >= 2")
        self.d = d
        self.f = f
        enc = []
        ch = 3
        width = base_channels
        for _ in range(n_down):
            enc += [nn.Conv2d(ch, width, 3, stride=2, padding=1), nn.SiLU()]
            ch = width
            width *= 2
        enc.append(nn.Conv2d(ch, d, 3, padding=1))
        self.encoder = nn.Sequential(*enc)
        dec = [nn.Conv2d(2 * d, ch, 3, padding=1), nn.SiLU()]
        for _ in range(n_down):
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, max(ch // 2, base_channels // 2), 3, padding=1),
                nn.SiLU(),
            ]
            ch = max(ch // 2, base_channels // 2)
        dec += [nn.Conv2d(ch, 3, 3, padding=1), nn.Sigmoid()]
        self.decoder = nn.Sequential(*dec)

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) frames -> (B, d, H/f, W/f) latents."""
        if frames.shape[-1] % self.f or frames.shape[-2] % self.f:
            raise ValueError(f"frame sides must be divisible by f={self.f}")
        return self.encoder(frames)

    def decode(self, reference: torch.Tensor, content: torch.Tensor) -> torch.Tensor:
        """Concatenate [reference || content] latents channelwise and decode."""
        if reference.shape != content.shape:
            raise ValueError(
                f"latent shapes differ: {tuple(reference.shape)} vs {tuple(content.shape)}"
            )
        return self.decoder(torch.cat([reference, content], dim=-3))


def encode(frame: np.ndarray, codec: FrameCodec) -> np.ndarray:
    """Encode one 3 x H x W frame in [0, 1] to a d x h x w latent."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W frame, got {frame.shape}")
    with torch.no_grad():
        z = codec.encode(torch.as_tensor(frame, dtype=module_dtype(codec))[None])
    return z[0].double().numpy()


def decode(reference_latent: np.ndarray, content_latent: np.ndarray, codec: FrameCodec) -> np.ndarray:
    """Decode a (reference, content) latent pair to one frame in [0, 1]."""
    ref = np.asarray(reference_latent, dtype=np.float64)
    con = np.asarray(content_latent, dtype=np.float64)
    if ref.shape != con.shape:
        raise ValueError(f"latent shapes differ: {ref.shape} vs {con.shape}")
    dtype = module_dtype(codec)
    with torch.no_grad():
        out = codec.decode(
            torch.as_tensor(ref, dtype=dtype)[None], torch.as_tensor(con, dtype=dtype)[None]
        )
    return out[0].double().numpy()


class RandomFeaturePyramid(nn.Module):
    """Fixed random-weight 3-level conv pyramid used as the perceptual extractor.

    Weights are drawn once from a pinned seed and frozen; the same pyramid
    also supplies features for the Frechet-distance metric.
    """

    LEVELS = (8, 16, 32)

    def __init__(self, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        ch = 3
        for out_ch in self.LEVELS:
            conv = nn.Conv2d(ch, out_ch, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) / math.sqrt(9 * ch)
                )
                conv.bias.zero_()
            convs.append(conv)
            ch = out_ch
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = torch.tanh(conv(h))
            feats.append(h)
        return feats

    def feature_vector(self, x: torch.Tensor) -> torch.Tensor:
        """Per-image descriptor: channel-wise global means of each level, concatenated."""
        return torch.cat([f.mean(dim=(-2, -1)) for f in self(x)], dim=-1)


def _paired_reconstruction(f1: torch.Tensor, f2: torch.Tensor, codec: FrameCodec) -> torch.Tensor:
    return codec.decode(codec.encode(f1), codec.encode(f2))


def reconstruction_loss(f1: torch.Tensor, f2: torch.Tensor, codec: FrameCodec) -> torch.Tensor:
    """Mean squared error between f2 and its decode from [E(f1), E(f2)]."""
    if f1.shape != f2.shape:
        raise ValueError("frames must share a shape")
    recon = _paired_reconstruction(f1, f2, codec)
    return ((f2 - recon) ** 2).mean()


def perceptual_loss(
    f1: torch.Tensor, f2: torch.Tensor, codec: FrameCodec, extractor: RandomFeaturePyramid
) -> torch.Tensor:
    """Mean absolute feature difference between f2 and its reconstruction."""
    recon = _paired_reconstruction(f1, f2, codec)
    target_feats = extractor(f2)
    recon_feats = extractor(recon)
    diffs = [torch.abs(a - b).reshape(a.shape[0], -1) for a, b in zip(target_feats, recon_feats)]
    return torch.cat(diffs, dim=1).mean()


def codec_loss(
    f1: torch.Tensor,
    f2: torch.Tensor,
    codec: FrameCodec,
    extractor: RandomFeaturePyramid,
    lam_rec: float = 1.0,
    lam_per: float = 0.1,
) -> torch.Tensor:
    """Weighted sum of reconstruction and perceptual losses."""
    total = f1.new_zeros(())
    if lam_rec != 0.0:
        total = total + lam_rec * reconstruction_loss(f1, f2, codec)
    if lam_per != 0.0:
        total = total + lam_per * perceptual_loss(f1, f2, codec, extractor)
    return total
