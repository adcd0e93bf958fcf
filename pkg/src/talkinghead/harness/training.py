"""Training loops for the sync expert, motion transformers, codec, and frame UNet.

All loops draw data through a seeded numpy generator and initialize modules
under torch.manual_seed, so a (config, corpus) pair reproduces bit-identical
runs. Each step appends a loss-decomposition dict to the returned history.
"""

from __future__ import annotations

import numpy as np
import torch

from .. import diffcore
from ..audiofeat import centered_features
from ..face3d import mouth_linear_map
from ..framegen import FrameDenoiser
from ..latentcodec import FrameCodec, RandomFeaturePyramid, codec_loss
from ..lipexpert import SyncExpert, sync_probability, train_expert, windows_of
from ..motiongen import CoeffSequence, MotionDenoiser
from .config import TrainConfig
from .corpus import POSE_DIM, SyntheticCorpus


class ConfigurationError(Exception):
    """A training stage was invoked without its prerequisites."""


def history_decrease_ratio(history, key: str = "total", k: int = 10) -> float:
    """Fractional loss decrease from the first k steps to the last k."""
    values = [h[key] for h in history]
    if len(values) < 2 * k:
        k = max(1, len(values) // 4)
    head = float(np.mean(values[:k]))
    tail = float(np.mean(values[-k:]))
    if head <= 0:
        return 0.0
    return (head - tail) / head


def _sync_windows(motion: torch.Tensor, window: int) -> torch.Tensor:
    """Differentiable (B, window, dim) sliding windows of an (F, dim) tensor."""
    F = motion.shape[0]
    return torch.stack([motion[i : i + window] for i in range(F - window + 1)])


def prediction_sync_probabilities(
    pred_beta: torch.Tensor,
    audio_windows: torch.Tensor,
    offset: torch.Tensor,
    weights: torch.Tensor,
    expert: SyncExpert,
) -> torch.Tensor:
    """P_sync of every aligned window of a predicted expression sequence."""
    motion = offset[None, :] + pred_beta @ weights.T
    v = expert.embed_mouth(_sync_windows(motion, expert.window))
    a = expert.embed_audio(audio_windows)
    return sync_probability(v, a)


def expert_dataset(
    corpus: SyntheticCorpus,
    window: int = 5,
    shift: int = 5,
    corrupted_negatives: bool = True,
    seed: int = 0,
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Aligned (positive) and misaligned (negative) mouth/audio window pairs.

    Negatives pair each mouth window with audio shifted by `shift` frames in
    both directions. With corrupted_negatives, noise-perturbed mouth windows
    against their own aligned audio are added, which teaches the expert to
    score off-manifold motion low: without them, the frozen expert has cheap
    adversarial directions and the downstream sync loss pushes predictions
    away from the data manifold instead of toward true synchronization.
    """
    rng = np.random.default_rng(seed)
    pos_m, pos_a, neg_m, neg_a = [], [], [], []
    for clip in corpus.clips:
        offset, weights = mouth_linear_map(corpus.basis, clip.alpha)
        motion = offset[None, :] + clip.beta.values @ weights.T
        m_w = windows_of(motion, window)
        a_w = windows_of(centered_features(clip.audio.features), window)
        pos_m.append(m_w)
        pos_a.append(a_w)
        n = m_w.shape[0]
        if n > shift:
            neg_m.append(m_w[: n - shift])
            neg_a.append(a_w[shift:])
            neg_m.append(m_w[shift:])
            neg_a.append(a_w[: n - shift])
        if corrupted_negatives:
            motion_std = float(motion.std(axis=0).mean())
            for scale in (1.0, 3.0):
                neg_m.append(m_w + rng.normal(0.0, scale * motion_std, size=m_w.shape))
                neg_a.append(a_w)
    return (
        (np.concatenate(pos_m), np.concatenate(pos_a)),
        (np.concatenate(neg_m), np.concatenate(neg_a)),
    )


def train_expert_on_corpus(corpus: SyntheticCorpus, config: TrainConfig) -> SyncExpert:
    torch.manual_seed(config.seed)
    mouth_dim = 3 * corpus.basis.mouth_indices.shape[0]
    expert = SyncExpert(
        mouth_dim=mouth_dim,
        audio_dim=corpus.d_audio,
        window=config.expert_window,
        embed_dim=config.expert_embed,
        hidden=config.expert_hidden,
    )
    positives, negatives = expert_dataset(corpus, window=config.expert_window)
    return train_expert(
        positives, negatives, expert, epochs=config.epochs, lr=config.expert_lr, seed=config.seed
    )


def sync_separation(expert: SyncExpert, corpus: SyntheticCorpus, shift: int = 5) -> tuple[float, float]:
    """(mean aligned P_sync, mean shifted P_sync) over a corpus."""
    positives, negatives = expert_dataset(
        corpus, window=expert.window, shift=shift, corrupted_negatives=False
    )
    dtype = next(expert.parameters()).dtype
    with torch.no_grad():
        p_pos = sync_probability(
            expert.embed_mouth(torch.as_tensor(positives[0], dtype=dtype)),
            expert.embed_audio(torch.as_tensor(positives[1], dtype=dtype)),
        )
        p_neg = sync_probability(
            expert.embed_mouth(torch.as_tensor(negatives[0], dtype=dtype)),
            expert.embed_audio(torch.as_tensor(negatives[1], dtype=dtype)),
        )
    return float(p_pos.mean()), float(p_neg.mean())


def sequence_sync_score(
    beta: CoeffSequence, alpha, audio_features: np.ndarray, corpus_basis, expert: SyncExpert
) -> float:
    """Mean aligned P_sync of an expression sequence against its audio."""
    offset, weights = mouth_linear_map(corpus_basis, alpha)
    motion = offset[None, :] + beta.values @ weights.T
    dtype = next(expert.parameters()).dtype
    with torch.no_grad():
        p = sync_probability(
            expert.embed_mouth(torch.as_tensor(windows_of(motion, expert.window), dtype=dtype)),
            expert.embed_audio(
                torch.as_tensor(
                    windows_of(centered_features(audio_features), expert.window), dtype=dtype
                )
            ),
        )
    return float(p.mean())


def build_stage1_models(config: TrainConfig, d_beta: int, d_audio: int) -> dict[str, MotionDenoiser]:
    common = dict(
        audio_dim=d_audio,
        width=config.width,
        layers=config.layers,
        heads=config.heads,
        window_radius=config.window_radius,
        use_alignment_mask=not config.no_alignment_mask,
    )
    if config.single_transformer:
        return {"joint": MotionDenoiser(dim=d_beta + POSE_DIM, **common)}
    return {
        "exp": MotionDenoiser(dim=d_beta, **common),
        "pose": MotionDenoiser(dim=POSE_DIM, **common),
    }


def train_stage1(
    corpus: SyntheticCorpus, config: TrainConfig, expert: SyncExpert | None = None
) -> tuple[dict[str, MotionDenoiser], list[dict]]:
    """Stage-1 training: weighted expression + pose MSE plus the sync loss.

    With single_transformer one denoiser predicts the concatenated
    (expression || pose) sequence; the per-kind losses are its slices.
    """
    lam_exp, lam_pose = config.lambda_exp, config.lambda_pose
    lam_sync = config.effective_lambda_sync
    if lam_sync > 0 and expert is None:
        raise ConfigurationError("sync loss requires a trained expert (train-expert first)")
    torch.manual_seed(config.seed)
    d_beta = corpus.d_beta
    models = build_stage1_models(config, d_beta, corpus.d_audio)
    params = [p for m in models.values() for p in m.parameters()]
    if expert is not None:
        for p in expert.parameters():
            p.requires_grad_(False)
    schedule = diffcore.build_schedule(config.T)
    rng = np.random.default_rng(config.seed)
    clips = corpus.clips
    audio_t = [torch.as_tensor(c.audio.features, dtype=torch.float32) for c in clips]
    beta0 = [c.beta.values for c in clips]
    pose0 = [c.pose.values for c in clips]
    mouth_maps = []
    audio_windows = []
    if lam_sync > 0:
        for c in clips:
            offset, weights = mouth_linear_map(corpus.basis, c.alpha)
            mouth_maps.append(
                (
                    torch.as_tensor(offset, dtype=torch.float32),
                    torch.as_tensor(weights, dtype=torch.float32),
                )
            )
            audio_windows.append(
                torch.as_tensor(
                    windows_of(centered_features(c.audio.features), expert.window),
                    dtype=torch.float32,
                )
            )
    opt = torch.optim.Adam(params, lr=config.lr)
    history: list[dict] = []
    for _ in range(config.epochs * len(clips)):
        ci = int(rng.integers(len(clips)))
        t = int(rng.integers(1, config.T + 1))
        entry = {"exp": 0.0, "pose": 0.0, "sync": 0.0}
        terms = []
        if config.single_transformer:
            x0 = np.concatenate([beta0[ci], pose0[ci]], axis=1)
            x_t = diffcore.forward_diffuse(x0, t, rng.standard_normal(x0.shape), schedule)
            pred = models["joint"](
                torch.as_tensor(x_t, dtype=torch.float32), t, audio_t[ci]
            )
            pred_beta, pred_pose = pred[:, :d_beta], pred[:, d_beta:]
            target_beta = torch.as_tensor(beta0[ci], dtype=torch.float32)
            target_pose = torch.as_tensor(pose0[ci], dtype=torch.float32)
        else:
            b_t = diffcore.forward_diffuse(
                beta0[ci], t, rng.standard_normal(beta0[ci].shape), schedule
            )
            p_t = diffcore.forward_diffuse(
                pose0[ci], t, rng.standard_normal(pose0[ci].shape), schedule
            )
            pred_beta = models["exp"](torch.as_tensor(b_t, dtype=torch.float32), t, audio_t[ci])
            pred_pose = models["pose"](torch.as_tensor(p_t, dtype=torch.float32), t, audio_t[ci])
            target_beta = torch.as_tensor(beta0[ci], dtype=torch.float32)
            target_pose = torch.as_tensor(pose0[ci], dtype=torch.float32)
        if lam_exp > 0:
            loss_exp = ((pred_beta - target_beta) ** 2).mean()
            entry["exp"] = loss_exp.item()
            terms.append(lam_exp * loss_exp)
        if lam_pose > 0:
            loss_pose = ((pred_pose - target_pose) ** 2).mean()
            entry["pose"] = loss_pose.item()
            terms.append(lam_pose * loss_pose)
        sync_term = None
        if lam_sync > 0:
            offset, weights = mouth_maps[ci]
            p_sync = prediction_sync_probabilities(
                pred_beta, audio_windows[ci], offset, weights, expert
            )
            loss_sync = (-torch.log(p_sync)).mean()
            entry["sync"] = loss_sync.item()
            sync_term = lam_sync * loss_sync
        entry["contrib_exp"] = lam_exp * entry["exp"]
        entry["contrib_pose"] = lam_pose * entry["pose"]
        entry["contrib_sync"] = lam_sync * entry["sync"]
        if sync_term is not None:
            terms.append(sync_term)
        if not terms:
            entry["total"] = 0.0
            history.append(entry)
            continue
        total = terms[0]
        for term in terms[1:]:
            total = total + term
        opt.zero_grad()
        total.backward()
        # the sync loss has a 1/P gradient near the probability clamp;
        # clipping keeps single bad windows from erasing learned structure
        torch.nn.utils.clip_grad_norm_(params, 5.0)
        opt.step()
        entry["total"] = total.item()
        history.append(entry)
    return models, history


def train_codec(
    corpus: SyntheticCorpus, config: TrainConfig
) -> tuple[FrameCodec, RandomFeaturePyramid, list[dict]]:
    """Fit the codec on random same-clip frame pairs under the combined loss."""
    torch.manual_seed(config.seed)
    codec = FrameCodec(config.codec_d, config.codec_f, config.codec_channels)
    extractor = RandomFeaturePyramid()
    rng = np.random.default_rng(config.seed)
    frames = [torch.as_tensor(c.frames, dtype=torch.float32) for c in corpus.clips]
    opt = torch.optim.Adam(codec.parameters(), lr=config.codec_lr)
    history: list[dict] = []
    for _ in range(config.epochs * len(frames)):
        ci = int(rng.integers(len(frames)))
        F = frames[ci].shape[0]
        i1 = rng.integers(0, F, size=config.batch_size)
        i2 = rng.integers(0, F, size=config.batch_size)
        f1 = frames[ci][torch.as_tensor(i1)]
        f2 = frames[ci][torch.as_tensor(i2)]
        loss = codec_loss(f1, f2, codec, extractor, config.lambda_rec, config.lambda_per)
        if loss.requires_grad:
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append({"total": loss.item()})
    return codec, extractor, history


def _stage2_coefficients(
    corpus: SyntheticCorpus,
    config: TrainConfig,
    motion_models: dict[str, MotionDenoiser] | None,
    schedule: diffcore.NoiseSchedule,
) -> list[np.ndarray]:
    """Per-clip (F, D_beta + D_p) conditioning rows: ground truth or sampled."""
    from ..motiongen import generate_motion

    rows = []
    for ci, clip in enumerate(corpus.clips):
        if config.stage2_coeff_source == "gt":
            beta, pose = clip.beta, clip.pose
        else:
            if motion_models is None or "exp" not in motion_models:
                raise ConfigurationError(
                    "stage2_coeff_source=sampled requires trained exp/pose transformers"
                )
            beta, pose = generate_motion(
                clip.audio,
                motion_models["exp"],
                motion_models["pose"],
                schedule,
                config.steps,
                seed=config.seed + ci,
            )
        rows.append(np.concatenate([beta.values, pose.values], axis=1))
    return rows


def train_stage2(
    corpus: SyntheticCorpus,
    config: TrainConfig,
    codec: FrameCodec,
    motion_models: dict[str, MotionDenoiser] | None = None,
) -> tuple[FrameDenoiser, list[dict]]:
    """Fit the frame UNet on noisy-latent -> clean-latent prediction."""
    torch.manual_seed(config.seed)
    schedule = diffcore.build_schedule(config.T)
    unet = FrameDenoiser(
        latent_dim=codec.d,
        motion_dim=corpus.d_beta + POSE_DIM,
        channels=(config.unet_c0, config.unet_c1),
        heads=config.heads,
        fused_conditions=config.concat_unet_conditions,
    )
    for p in codec.parameters():
        p.requires_grad_(False)
    motions = _stage2_coefficients(corpus, config, motion_models, schedule)
    with torch.no_grad():
        latents = [
            codec.encode(torch.as_tensor(c.frames, dtype=torch.float32)) for c in corpus.clips
        ]
    refs = [lat[0:1] for lat in latents]  # first frame is the reference image
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(unet.parameters(), lr=config.unet_lr)
    history: list[dict] = []
    for _ in range(config.epochs * len(corpus.clips)):
        ci = int(rng.integers(len(corpus.clips)))
        F = latents[ci].shape[0]
        idx = rng.integers(0, F, size=config.batch_size)
        t = int(rng.integers(1, config.T + 1))
        j0 = latents[ci][torch.as_tensor(idx)]
        eps = torch.as_tensor(
            rng.standard_normal(tuple(j0.shape)), dtype=torch.float32
        )
        ab = schedule.alpha_bar[t]
        j_t = np.sqrt(ab) * j0 + np.sqrt(1.0 - ab) * eps
        motion_b = torch.as_tensor(motions[ci][idx], dtype=torch.float32)
        ref_b = refs[ci].expand(len(idx), -1, -1, -1)
        pred = unet(j_t, t, motion_b, ref_b)
        loss = ((pred - j0) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"total": loss.item(), "t": t})
    return unet, history
