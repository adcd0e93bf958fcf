"""Stage 2: conditional UNet denoising latent frames one frame at a time.

Every attention site carries two decoupled cross-attention layers: the
first attends to a single projected motion token (that frame's expression
and pose coefficients concatenated), the second to the reference-image
latent reshaped into positional-encoded tokens. A config flag fuses both
conditions into one token set through a single cross-attention (the
coupled-condition ablation arm).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from . import diffcore
from .latentcodec import FrameCodec, encode
from .motiongen import CoeffSequence
from .nnutil import CrossAttention, grid_positional_encoding, module_dtype, sinusoidal_embedding


def _tokens(feats: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) feature map to (B, H*W, C) tokens."""
    return feats.flatten(2).transpose(1, 2)


def _maps(tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return tokens.transpose(1, 2).reshape(tokens.shape[0], -1, h, w)


class MotionAttention(nn.Module):
    """Cross-attention onto the single projected motion token (residual)."""

    def __init__(self, channels: int, motion_dim: int, heads: int = 4):
        super().__init__()
        self.token_proj = nn.Linear(motion_dim, channels)
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.attn = CrossAttention(channels, channels, heads)

    def attend(self, feats: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        token = self.token_proj(motion)[:, None, :]
        q = _tokens(self.norm(feats))
        out = self.attn(q, token)
        return _maps(out, feats.shape[-2], feats.shape[-1])

    def forward(self, feats: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        return feats + self.attend(feats, motion)


class AppearanceAttention(nn.Module):
    """Cross-attention onto the reference-latent tokens (residual)."""

    def __init__(self, channels: int, latent_dim: int, heads: int = 4, use_pos: bool = True):
        super().__init__()
        self.use_pos = use_pos
        self.ref_proj = nn.Linear(latent_dim, channels)
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.attn = CrossAttention(channels, channels, heads)

    def context(self, ref_tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        ctx = self.ref_proj(ref_tokens)
        if self.use_pos:
            pe = grid_positional_encoding(
                grid[0], grid[1], ctx.shape[-1], dtype=ctx.dtype, device=ctx.device
            )
            ctx = ctx + pe[None]
        return ctx

    def attend(self, feats: torch.Tensor, ref_tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        q = _tokens(self.norm(feats))
        out = self.attn(q, self.context(ref_tokens, grid))
        return _maps(out, feats.shape[-2], feats.shape[-1])

    def forward(self, feats, ref_tokens, grid):
        return feats + self.attend(feats, ref_tokens, grid)


class FusedAttention(nn.Module):
    """Ablation arm: one cross-attention over [motion token || reference tokens]."""

    def __init__(self, channels: int, motion_dim: int, latent_dim: int, heads: int = 4, use_pos: bool = True):
        super().__init__()
        self.use_pos = use_pos
        self.token_proj = nn.Linear(motion_dim, channels)
        self.ref_proj = nn.Linear(latent_dim, channels)
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.attn = CrossAttention(channels, channels, heads)

    def forward(self, feats, motion, ref_tokens, grid):
        ctx_ref = self.ref_proj(ref_tokens)
        if self.use_pos:
            pe = grid_positional_encoding(
                grid[0], grid[1], ctx_ref.shape[-1], dtype=ctx_ref.dtype, device=ctx_ref.device
            )
            ctx_ref = ctx_ref + pe[None]
        ctx = torch.cat([self.token_proj(motion)[:, None, :], ctx_ref], dim=1)
        q = _tokens(self.norm(feats))
        out = self.attn(q, ctx)
        return feats + _maps(out, feats.shape[-2], feats.shape[-1])


class ConditionBlock(nn.Module):
    """Per-site conditioning: motion attention then appearance attention.

    phi1 and phi2 are distinct parameter sets at every site; the fused
    variant replaces the pair with a single attention over both contexts.
    """

    def __init__(self, channels, motion_dim, latent_dim, heads=4, fused=False, use_pos=True):
        super().__init__()
        self.fused = fused
        if fused:
            self.joint_attn = FusedAttention(channels, motion_dim, latent_dim, heads, use_pos)
        else:
            self.motion_attn = MotionAttention(channels, motion_dim, heads)
            self.app_attn = AppearanceAttention(channels, latent_dim, heads, use_pos)

    def forward(self, feats, motion, ref_tokens, grid):
        if self.fused:
            return self.joint_attn(feats, motion, ref_tokens, grid)
        m1 = self.motion_attn(feats, motion)
        return self.app_attn(m1, ref_tokens, grid)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(torch.nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class FrameDenoiser(nn.Module):
    """Two-resolution conditional UNet predicting the clean latent frame."""

    def __init__(
        self,
        latent_dim: int = 8,
        motion_dim: int = 70,
        channels: tuple[int, int] = (32, 64),
        heads: int = 4,
        time_dim: int = 128,
        fused_conditions: bool = False,
        use_pos: bool = True,
    ):
        super().__init__()
        c0, c1 = channels
        self.latent_dim = latent_dim
        self.motion_dim = motion_dim
        self.time_dim = time_dim
        self.fused_conditions = fused_conditions
        self.time_mlp = nn.Sequential(nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))

        def cond(ch):
            return ConditionBlock(ch, motion_dim, latent_dim, heads, fused_conditions, use_pos)

        self.in_conv = nn.Conv2d(latent_dim, c0, 3, padding=1)
        self.down_res = ResBlock(c0, c0, time_dim)
        self.down_cond = cond(c0)
        self.downsample = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.mid_res1 = ResBlock(c1, c1, time_dim)
        self.mid_cond = cond(c1)
        self.mid_res2 = ResBlock(c1, c1, time_dim)
        self.upsample = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c1, c0, 3, padding=1)
        )
        self.up_res = ResBlock(2 * c0, c0, time_dim)
        self.up_cond = cond(c0)
        self.out_norm = nn.GroupNorm(min(8, c0), c0)
        self.out_conv = nn.Conv2d(c0, latent_dim, 3, padding=1)

    def forward(self, j_t: torch.Tensor, t, motion: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
        if j_t.ndim != 4 or j_t.shape[1] != self.latent_dim:
            raise ValueError(f"expected (B, {self.latent_dim}, h, w) latents, got {tuple(j_t.shape)}")
        if motion.shape[-1] != self.motion_dim:
            raise ValueError(f"motion dim {motion.shape[-1]}, model expects {self.motion_dim}")
        if reference.shape != j_t.shape:
            raise ValueError("reference latent must match the noisy latent's shape")
        grid = (reference.shape[-2], reference.shape[-1])
        ref_tokens = _tokens(reference)
        temb = self.time_mlp(
            sinusoidal_embedding(float(t), self.time_dim, dtype=j_t.dtype, device=j_t.device)
        ).expand(j_t.shape[0], -1)
        h0 = self.in_conv(j_t)
        h0 = self.down_res(h0, temb)
        h0 = self.down_cond(h0, motion, ref_tokens, grid)
        h = self.downsample(h0)
        h = self.mid_res1(h, temb)
        h = self.mid_cond(h, motion, ref_tokens, grid)
        h = self.mid_res2(h, temb)
        h = self.upsample(h)
        h = self.up_res(torch.cat([h, h0], dim=1), temb)
        h = self.up_cond(h, motion, ref_tokens, grid)
        return self.out_conv(torch.nn.functional.silu(self.out_norm(h)))


def motion_vector(beta_row, pose_row) -> np.ndarray:
    """Per-frame condition input: expression and pose coefficients concatenated."""
    return np.concatenate([np.asarray(beta_row, dtype=np.float64).ravel(),
                           np.asarray(pose_row, dtype=np.float64).ravel()])


def denoise_frame(j_t, t: int, beta_row, pose_row, reference_latent, model: FrameDenoiser) -> np.ndarray:
    """Predict the clean latent for one frame from its noisy latent."""
    j_t = np.asarray(j_t, dtype=np.float64)
    ref = np.asarray(reference_latent, dtype=np.float64)
    motion = motion_vector(beta_row, pose_row)
    dtype = module_dtype(model)
    with torch.no_grad():
        out = model(
            torch.as_tensor(j_t, dtype=dtype)[None],
            t,
            torch.as_tensor(motion, dtype=dtype)[None],
            torch.as_tensor(ref, dtype=dtype)[None],
        )
    return out[0].double().numpy()


def _frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def generate_frames(
    beta0: CoeffSequence,
    p0: CoeffSequence,
    reference: np.ndarray,
    model: FrameDenoiser,
    codec: FrameCodec,
    schedule: diffcore.NoiseSchedule,
    steps: int,
    seed: int = 0,
    eta: float = 0.0,
    parallel: bool = False,
) -> np.ndarray:
    """Generate all frames of a video, one independent latent sample per frame.

    Per-frame sampling seeds derive from (seed, frame index), so the serial
    and batched paths consume identical noise streams and agree to batching
    roundoff.
    """
    if beta0.num_frames != p0.num_frames:
        raise ValueError(
            f"coefficient frame counts differ: {beta0.num_frames} vs {p0.num_frames}"
        )
    F = beta0.num_frames
    x = encode(reference, codec)
    dtype = module_dtype(model)
    ref_t = torch.as_tensor(x, dtype=dtype)[None]
    motions = np.stack([motion_vector(beta0.values[i], p0.values[i]) for i in range(F)])

    if not parallel:
        frames = []
        for i in range(F):
            motion_t = torch.as_tensor(motions[i], dtype=dtype)[None]

            def denoise(x_t, t, _cond):
                with torch.no_grad():
                    out = model(torch.as_tensor(x_t, dtype=dtype)[None], t, motion_t, ref_t)
                return out[0].double().numpy()

            j0 = diffcore.sample(
                denoise, x.shape, None, schedule, steps, eta=eta, rng=_frame_rng(seed, i)
            )
            frames.append(_decode_one(x, j0, codec))
        return np.stack(frames)

    # batched path: same per-frame noise streams, shared model evaluations
    rngs = [_frame_rng(seed, i) for i in range(F)]
    latents = np.stack([rng.standard_normal(x.shape) for rng in rngs])
    motion_t = torch.as_tensor(motions, dtype=dtype)
    ref_batch = ref_t.expand(F, -1, -1, -1)
    ts = diffcore.subsample_timesteps(schedule.T, steps)
    for i, t in enumerate(ts):
        t = int(t)
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        with torch.no_grad():
            x0_hat = model(torch.as_tensor(latents, dtype=dtype), t, motion_t, ref_batch)
        x0_hat = x0_hat.double().numpy()
        sigma = diffcore.sampling_sigma(eta, schedule.alpha_bar[t], schedule.alpha_bar[t_prev])
        eps = np.stack([rng.standard_normal(x.shape) for rng in rngs]) if sigma > 0 else None
        latents = diffcore.denoise_step(
            latents, x0_hat, t, schedule, sigma_t=sigma, eps=eps, t_prev=t_prev
        )
    return np.stack([_decode_one(x, latents[i], codec) for i in range(F)])


def _decode_one(reference_latent, content_latent, codec: FrameCodec) -> np.ndarray:
    dtype = module_dtype(codec)
    with torch.no_grad():
        out = codec.decode(
            torch.as_tensor(reference_latent, dtype=dtype)[None],
            torch.as_tensor(content_latent, dtype=dtype)[None],
        )
    return out[0].double().numpy()
