"""Stage 1: sequence-to-sequence denoisers for expression and pose coefficients.

Two structurally identical transformers (one per coefficient kind) predict
the clean coefficient sequence from its noisy version, conditioned on
per-frame audio features through banded cross-attention: frame i may only
attend to audio rows j with |i - j| <= k, which keeps generated motion
aligned with the local audio content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import diffcore
from .audiofeat import AudioFeatureSequence
from .nnutil import CrossAttention, FeedForward, module_dtype, sinusoidal_embedding

KINDS = ("expression", "pose")


@dataclass
class CoeffSequence:
    """F x D coefficient sequence of one kind (expression or pose)."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be an F x D matrix")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def alignment_mask(F: int, k: int) -> np.ndarray:
    """Boolean F x F band: entry (i, j) is True iff |i - j| <= k."""
    if F < 1 or k < 0:
        raise ValueError("need F >= 1 and k >= 0")
    idx = np.arange(F)
    return np.abs(idx[:, None] - idx[None, :]) <= k


class MotionDenoiser(nn.Module):
    """Transformer predicting the clean coefficient sequence from a noisy one.

    Each layer runs self-attention over the sequence, cross-attention onto
    the projected (timestep, audio) condition, and a feed-forward block,
    all pre-normalized with residuals. The alignment mask bands both
    attention stages; disabling it (the ablation arm) leaves them full.
    """

    def __init__(
        self,
        dim: int,
        audio_dim: int,
        width: int = 32,
        layers: int = 6,
        heads: int = 4,
        window_radius: int = 3,
        time_dim: int = 128,
        use_alignment_mask: bool = True,
    ):
        super().__init__()
        if layers < 1:
            raise ValueError("need at least one layer")
        self.dim = dim
        self.audio_dim = audio_dim
        self.width = width
        self.window_radius = window_radius
        self.time_dim = time_dim
        self.use_alignment_mask = use_alignment_mask
        self.in_proj = nn.Linear(dim, width)
        self.cond_proj = nn.Linear(time_dim + audio_dim, width)
        self.blocks = nn.ModuleList()
        for _ in range(layers):
            self.blocks.append(
                nn.ModuleDict(
                    {
                        "norm_self": nn.LayerNorm(width),
                        "self_attn": CrossAttention(width, width, heads),
                        "norm_cross": nn.LayerNorm(width),
                        "cross_attn": CrossAttention(width, width, heads),
                        "norm_ff": nn.LayerNorm(width),
                        "ff": FeedForward(width),
                    }
                )
            )
        self.out_norm = nn.LayerNorm(width)
        self.out_proj = nn.Linear(width, dim)

    @property
    def num_layers(self) -> int:
        return len(self.blocks)

    def build_condition(self, audio: torch.Tensor, t: int) -> torch.Tensor:
        """Project [timestep embedding || audio row] to one condition row per frame."""
        if audio.shape[1] != self.audio_dim:
            raise ValueError(f"audio dim {audio.shape[1]}, model expects {self.audio_dim}")
        temb = sinusoidal_embedding(
            float(t), self.time_dim, dtype=audio.dtype, device=audio.device
        )
        stacked = torch.cat([temb.expand(audio.shape[0], -1), audio], dim=1)
        return self.cond_proj(stacked)

    def _mask(self, F: int, device) -> torch.Tensor | None:
        if not self.use_alignment_mask:
            return None
        return torch.from_numpy(alignment_mask(F, self.window_radius)).to(device)

    def forward(self, x: torch.Tensor, t: int, audio: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected F x {self.dim} input, got {tuple(x.shape)}")
        if audio.shape[0] != x.shape[0]:
            raise ValueError(
                f"audio has {audio.shape[0]} rows, coefficient sequence has {x.shape[0]}"
            )
        mask = self._mask(x.shape[0], x.device)
        cond = self.build_condition(audio, t)[None]
        h = self.in_proj(x)[None]
        for blk in self.blocks:
            hn = blk["norm_self"](h)
            h = h + blk["self_attn"](hn, hn, mask)
            h = h + blk["cross_attn"](blk["norm_cross"](h), cond, mask)
            h = h + blk["ff"](blk["norm_ff"](h))
        return self.out_proj(self.out_norm(h))[0]


def build_condition(audio: AudioFeatureSequence, t: int, model: MotionDenoiser) -> np.ndarray:
    """Condition matrix (F x width) for a timestep, as float64 numpy."""
    rows = torch.as_tensor(audio.features, dtype=module_dtype(model))
    with torch.no_grad():
        return model.build_condition(rows, t).double().numpy()


def masked_cross_attention(queries, context, mask, attn: CrossAttention) -> np.ndarray:
    """Apply one banded cross-attention module to raw matrices (no residual)."""
    dtype = module_dtype(attn)
    q = torch.as_tensor(np.asarray(queries), dtype=dtype)[None]
    ctx = torch.as_tensor(np.asarray(context), dtype=dtype)[None]
    if mask is not None:
        if mask.shape != (q.shape[1], ctx.shape[1]):
            raise ValueError(f"mask shape {mask.shape} does not match F x F")
        mask = torch.from_numpy(np.asarray(mask, dtype=bool))
    with torch.no_grad():
        return attn(q, ctx, mask)[0].double().numpy()


def denoise_motion(
    x_t: CoeffSequence, t: int, audio: AudioFeatureSequence, model: MotionDenoiser
) -> CoeffSequence:
    """Predict the clean coefficient sequence from a noisy one."""
    if x_t.dim != model.dim:
        raise ValueError(f"sequence dim {x_t.dim}, model expects {model.dim}")
    if x_t.num_frames != audio.num_frames:
        raise ValueError(
            f"sequence has {x_t.num_frames} frames, audio has {audio.num_frames}"
        )
    dtype = module_dtype(model)
    with torch.no_grad():
        out = model(
            torch.as_tensor(x_t.values, dtype=dtype),
            t,
            torch.as_tensor(audio.features, dtype=dtype),
        )
    return CoeffSequence(out.double().numpy(), x_t.kind)


def _numpy_denoiser(model: MotionDenoiser, audio: AudioFeatureSequence):
    dtype = module_dtype(model)
    audio_rows = torch.as_tensor(audio.features, dtype=dtype)

    def denoise(x_t, t, _condition):
        with torch.no_grad():
            out = model(torch.as_tensor(x_t, dtype=dtype), t, audio_rows)
        return out.double().numpy()

    return denoise


def generate_motion(
    audio: AudioFeatureSequence,
    exp_model: MotionDenoiser,
    pose_model: MotionDenoiser,
    schedule: diffcore.NoiseSchedule,
    steps: int,
    seed: int = 0,
    eta: float = 0.0,
) -> tuple[CoeffSequence, CoeffSequence]:
    """Sample expression and pose sequences along decoupled denoising paths."""
    F = audio.num_frames
    exp_seed, pose_seed = np.random.SeedSequence(seed).spawn(2)
    beta = diffcore.sample(
        _numpy_denoiser(exp_model, audio),
        (F, exp_model.dim),
        None,
        schedule,
        steps,
        eta=eta,
        rng=np.random.default_rng(exp_seed),
    )
    pose = diffcore.sample(
        _numpy_denoiser(pose_model, audio),
        (F, pose_model.dim),
        None,
        schedule,
        steps,
        eta=eta,
        rng=np.random.default_rng(pose_seed),
    )
    return CoeffSequence(beta, "expression"), CoeffSequence(pose, "pose")
