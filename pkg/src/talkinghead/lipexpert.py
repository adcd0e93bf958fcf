"""Lip-sync scorer: paired mouth-motion and audio window encoders.

Two small perceptrons embed a window of mouth vertex motion and the
matching window of audio features into a shared space; the cosine of the
two embeddings is the sync probability and its negative log is the sync
loss. The expert is trained contrastively on aligned vs. time-shifted
pairs, then frozen while it scores the motion-stage predictions.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

SYNC_CLAMP = 1e-6  # floor on the sync probability so -log stays finite


class SyncExpert(nn.Module):
    """Mouth and audio window encoders with a shared embedding size."""

    def __init__(self, mouth_dim: int, audio_dim: int, window: int = 5, embed_dim: int = 32, hidden: int = 64):
        super().__init__()
        self.mouth_dim = mouth_dim
        self.audio_dim = audio_dim
        self.window = window
        self.embed_dim = embed_dim
        self.mouth_encoder = nn.Sequential(
            nn.Linear(window * mouth_dim, hidden),
            nn.Tanh(),
            nn.Linear(hidden, embed_dim),
        )
        self.audio_encoder = nn.Sequential(
            nn.Linear(window * audio_dim, hidden),
            nn.Tanh(),
            nn.Linear(hidden, embed_dim),
        )

    def embed_mouth(self, window: torch.Tensor) -> torch.Tensor:
        """Embed a (window, mouth_dim) or batched (B, window, mouth_dim) motion window."""
        return self.mouth_encoder(window.reshape(*window.shape[:-2], -1))

    def embed_audio(self, window: torch.Tensor) -> torch.Tensor:
        return self.audio_encoder(window.reshape(*window.shape[:-2], -1))


def embed_mouth(window, expert: SyncExpert) -> np.ndarray:
    w = torch.as_tensor(np.asarray(window, dtype=np.float64), dtype=next(expert.parameters()).dtype)
    if w.shape != (expert.window, expert.mouth_dim):
        raise ValueError(f"expected ({expert.window}, {expert.mouth_dim}) window, got {tuple(w.shape)}")
    with torch.no_grad():
        return expert.embed_mouth(w).double().numpy()


def embed_audio(window, expert: SyncExpert) -> np.ndarray:
    w = torch.as_tensor(np.asarray(window, dtype=np.float64), dtype=next(expert.parameters()).dtype)
    if w.shape != (expert.window, expert.audio_dim):
        raise ValueError(f"expected ({expert.window}, {expert.audio_dim}) window, got {tuple(w.shape)}")
    with torch.no_grad():
        return expert.embed_audio(w).double().numpy()


def sync_probability(v, a, eps: float = 1e-8):
    """Cosine agreement of the two embeddings, clamped to [SYNC_CLAMP, 1].

    Works on numpy arrays (returns float) or torch tensors (differentiable,
    batched over the leading dimensions).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if torch.is_tensor(v) or torch.is_tensor(a):
        dot = (v * a).sum(dim=-1)
        norms = torch.linalg.vector_norm(v, dim=-1) * torch.linalg.vector_norm(a, dim=-1)
        cos = dot / torch.clamp(norms, min=eps)
        return torch.clamp(cos, min=SYNC_CLAMP, max=1.0)
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if v.shape != a.shape:
        raise ValueError(f"embedding shapes differ: {v.shape} vs {a.shape}")
    cos = float(v @ a / max(np.linalg.norm(v) * np.linalg.norm(a), eps))
    return float(np.clip(cos, SYNC_CLAMP, 1.0))


def sync_loss(p_sync):
    """-log of the sync probability; zero when perfectly synchronized."""
    if torch.is_tensor(p_sync):
        return -torch.log(p_sync)
    return float(-np.log(p_sync))


def windows_of(rows: np.ndarray, window: int) -> np.ndarray:
    """All length-`window` frame windows of an (F, D) array, shape (F-window+1, window, D)."""
    F = rows.shape[0]
    if F < window:
        raise ValueError(f"need at least {window} frames, got {F}")
    return np.stack([rows[i : i + window] for i in range(F - window + 1)])


def expert_loss(expert: SyncExpert, pos_mouth, pos_audio, neg_mouth, neg_audio) -> torch.Tensor:
    """Contrastive objective: pull aligned pairs to cosine 1, push shifted pairs down."""
    p_pos = sync_probability(expert.embed_mouth(pos_mouth), expert.embed_audio(pos_audio))
    p_neg = sync_probability(expert.embed_mouth(neg_mouth), expert.embed_audio(neg_audio))
    return (-torch.log(p_pos)).mean() + (-torch.log(1.0 - p_neg + SYNC_CLAMP)).mean()


def train_expert(
    positives: tuple[np.ndarray, np.ndarray],
    negatives: tuple[np.ndarray, np.ndarray],
    expert: SyncExpert,
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
) -> SyncExpert:
    """Train the expert contrastively; zero epochs leaves parameters untouched.

    positives/negatives are (mouth_windows, audio_windows) batches of shape
    (B, window, dim); negatives pair mouth windows with time-shifted audio.
    """
    if positives[0].shape[0] < 1 or negatives[0].shape[0] < 1:
        raise ValueError("need at least one positive and one negative pair")
    if epochs == 0:
        return expert
    torch.manual_seed(seed)
    dtype = next(expert.parameters()).dtype
    pos_mouth = torch.as_tensor(positives[0], dtype=dtype)
    pos_audio = torch.as_tensor(positives[1], dtype=dtype)
    neg_mouth = torch.as_tensor(negatives[0], dtype=dtype)
    neg_audio = torch.as_tensor(negatives[1], dtype=dtype)
    opt = torch.optim.Adam(expert.parameters(), lr=lr)
    for _ in range(epochs):
        opt.zero_grad()
        loss = expert_loss(expert, pos_mouth, pos_audio, neg_mouth, neg_audio)
        loss.backward()
        opt.step()
    return expert
