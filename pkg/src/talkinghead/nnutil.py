"""Shared neural building blocks: attention, embeddings, feed-forward."""

from __future__ import annotations

import math

import torch
from torch import nn

MASK_NEG = -1e9  # logit for masked attention positions


def sinusoidal_embedding(t, dim: int, dtype=None, device=None) -> torch.Tensor:
    """Sinusoidal embedding of one or more timesteps.

    Scalar t gives a (dim,) vector; a length-B tensor gives (B, dim).
    """
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    scalar = not torch.is_tensor(t) or t.dim() == 0
    t = torch.as_tensor(t, dtype=dtype or torch.get_default_dtype(), device=device)
    if scalar:
        t = t.reshape(1)
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb[0] if scalar else emb


def grid_positional_encoding(h: int, w: int, dim: int, dtype=None, device=None) -> torch.Tensor:
    """2-D sinusoidal positional encoding over an h x w grid, flattened to (h*w, dim).

    Half the channels encode the row index, half the column index.
    """
    if dim % 2 != 0:
        raise ValueError("positional encoding dim must be even")
    rows = sinusoidal_embedding(torch.arange(h), dim // 2, dtype=dtype, device=device)
    cols = sinusoidal_embedding(torch.arange(w), dim // 2, dtype=dtype, device=device)
    pe = torch.cat(
        [
            rows[:, None, :].expand(h, w, dim // 2),
            cols[None, :, :].expand(h, w, dim // 2),
        ],
        dim=-1,
    )
    return pe.reshape(h * w, dim)


class CrossAttention(nn.Module):
    """Multi-head attention: queries from the input, keys/values from a context.

    Passing the input itself as context gives self-attention. An optional
    boolean (Tq, Tc) mask restricts which context positions each query may
    attend to (True = allowed); masked logits are set to a large negative
    value before the softmax, so every row remains a probability
    distribution as long as it has at least one allowed position.
    """

    def __init__(self, q_dim: int, ctx_dim: int, heads: int = 4):
        super().__init__()
        if q_dim % heads != 0:
            raise ValueError(f"width {q_dim} not divisible by head count {heads}")
        self.heads = heads
        self.head_dim = q_dim // heads
        self.to_q = nn.Linear(q_dim, q_dim)
        self.to_k = nn.Linear(ctx_dim, q_dim)
        self.to_v = nn.Linear(ctx_dim, q_dim)
        self.to_out = nn.Linear(q_dim, q_dim)

    def attention_weights(self, x: torch.Tensor, ctx: torch.Tensor, mask=None) -> torch.Tensor:
        """(B, heads, Tq, Tc) row-stochastic attention maps."""
        b, tq, _ = x.shape
        tc = ctx.shape[1]
        q = self.to_q(x).reshape(b, tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.to_k(ctx).reshape(b, tc, self.heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            logits = torch.where(mask[None, None], logits, torch.full_like(logits, MASK_NEG))
        return torch.softmax(logits, dim=-1)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor, mask=None) -> torch.Tensor:
        b, tq, _ = x.shape
        tc = ctx.shape[1]
        weights = self.attention_weights(x, ctx, mask)
        v = self.to_v(ctx).reshape(b, tc, self.heads, self.head_dim).transpose(1, 2)
        out = (weights @ v).transpose(1, 2).reshape(b, tq, -1)
        return self.to_out(out)


class FeedForward(nn.Module):
    """Two-layer GELU MLP with 4x hidden expansion."""

    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, 4 * dim),
            nn.GELU(),
            nn.Linear(4 * dim, dim),
        )

    def forward(self, x):
        return self.net(x)


def module_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype
