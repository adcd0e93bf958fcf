import math

import numpy as np
import pytest
import torch

from talkinghead import diffcore
from talkinghead.audiofeat import AudioFeatureSequence
from talkinghead.motiongen import (
    CoeffSequence,
    MotionDenoiser,
    alignment_mask,
    build_condition,
    denoise_motion,
    generate_motion,
    masked_cross_attention,
)

from fdcheck import gradient_relative_error


def test_mask_single_frame():
    np.testing.assert_array_equal(alignment_mask(1, 0), [[True]])
    np.testing.assert_array_equal(alignment_mask(1, 5), [[True]])


def test_mask_default_radius_is_three():
    import inspect

    sig = inspect.signature(MotionDenoiser.__init__)
    assert sig.parameters["window_radius"].default == 3


def test_default_depth_is_six_layers():
    import inspect

    sig = inspect.signature(MotionDenoiser.__init__)
    assert sig.parameters["layers"].default == 6


def test_mask_tridiagonal():
    mask = alignment_mask(5, 1)
    expected = np.zeros((5, 5), dtype=bool)
    for i in range(5):
        for j in range(5):
            expected[i, j] = j - 1 <= i <= j + 1
    np.testing.assert_array_equal(mask, expected)


def test_mask_matches_enumeration_all_small_cases():
    for F in range(1, 9):
        for k in range(0, 5):
            mask = alignment_mask(F, k)
            for i in range(F):
                for j in range(F):
                    assert mask[i, j] == (j - k <= i <= j + k)
            assert mask.all() == (k >= F - 1) or k < F - 1
            np.testing.assert_array_equal(mask, mask.T)
            assert mask.diagonal().all()


def _naive_attention(x, ctx, mask, attn):
    """Double-loop masked multi-head attention oracle."""
    wq, bq = attn.to_q.weight.detach().numpy(), attn.to_q.bias.detach().numpy()
    wk, bk = attn.to_k.weight.detach().numpy(), attn.to_k.bias.detach().numpy()
    wv, bv = attn.to_v.weight.detach().numpy(), attn.to_v.bias.detach().numpy()
    wo, bo = attn.to_out.weight.detach().numpy(), attn.to_out.bias.detach().numpy()
    q = x @ wq.T + bq
    k = ctx @ wk.T + bk
    v = ctx @ wv.T + bv
    tq, tc = x.shape[0], ctx.shape[0]
    hd = attn.head_dim
    out = np.zeros((tq, q.shape[1]))
    for h in range(attn.heads):
        qs = q[:, h * hd : (h + 1) * hd]
        ks = k[:, h * hd : (h + 1) * hd]
        vs = v[:, h * hd : (h + 1) * hd]
        for i in range(tq):
            allowed = [j for j in range(tc) if mask is None or mask[i, j]]
            logits = np.array([qs[i] @ ks[j] / math.sqrt(hd) for j in allowed])
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            for w, j in zip(weights, allowed):
                out[i, h * hd : (h + 1) * hd] += w * vs[j]
    return out @ wo.T + bo


def test_masked_attention_matches_naive_oracle():
    from talkinghead.nnutil import CrossAttention

    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    attn = CrossAttention(8, 6, heads=2).double()
    x = rng.standard_normal((4, 8))
    ctx = rng.standard_normal((4, 6))
    mask = alignment_mask(4, 1)
    out = masked_cross_attention(x, ctx, mask, attn)
    np.testing.assert_allclose(out, _naive_attention(x, ctx, mask, attn), atol=1e-10)


def test_full_window_equals_unmasked():
    from talkinghead.nnutil import CrossAttention

    torch.manual_seed(1)
    rng = np.random.default_rng(1)
    attn = CrossAttention(8, 8, heads=4).double()
    x = rng.standard_normal((5, 8))
    ctx = rng.standard_normal((5, 8))
    full = masked_cross_attention(x, ctx, alignment_mask(5, 4), attn)
    unmasked = masked_cross_attention(x, ctx, None, attn)
    np.testing.assert_allclose(full, unmasked, atol=1e-12)


def test_diagonal_mask_attends_only_self_row():
    from talkinghead.nnutil import CrossAttention

    torch.manual_seed(2)
    attn = CrossAttention(4, 4, heads=2).double()
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 4))
    ctx = rng.standard_normal((6, 4))
    mask = alignment_mask(6, 0)
    with torch.no_grad():
        weights = attn.attention_weights(
            torch.as_tensor(x)[None], torch.as_tensor(ctx)[None], torch.from_numpy(mask)
        )[0]
    for h in range(2):
        np.testing.assert_allclose(weights[h].numpy(), np.eye(6), atol=1e-12)


def test_attention_rows_are_distributions():
    from talkinghead.nnutil import CrossAttention

    torch.manual_seed(3)
    attn = CrossAttention(8, 8, heads=2).double()
    rng = np.random.default_rng(3)
    x = torch.as_tensor(rng.standard_normal((7, 8)))[None]
    ctx = torch.as_tensor(rng.standard_normal((7, 8)))[None]
    with torch.no_grad():
        weights = attn.attention_weights(x, ctx, torch.from_numpy(alignment_mask(7, 2)))
    w = weights[0].numpy()
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)


@pytest.fixture
def small_model():
    torch.manual_seed(4)
    return MotionDenoiser(dim=3, audio_dim=5, width=8, layers=2, heads=2, window_radius=1)


def test_build_condition_zero_weights_zero_output(small_model):
    with torch.no_grad():
        small_model.cond_proj.weight.zero_()
        small_model.cond_proj.bias.zero_()
    audio = AudioFeatureSequence(np.zeros((4, 5)))
    np.testing.assert_array_equal(build_condition(audio, 3, small_model), np.zeros((4, 8)))


def test_build_condition_distinct_timesteps_differ(small_model):
    audio = AudioFeatureSequence(np.random.default_rng(5).standard_normal((4, 5)))
    c1 = build_condition(audio, 1, small_model)
    c2 = build_condition(audio, 500, small_model)
    assert np.abs(c1 - c2).max() > 1e-6


def test_build_condition_row_permutation_equivariant(small_model):
    rng = np.random.default_rng(6)
    rows = rng.standard_normal((6, 5))
    perm = rng.permutation(6)
    c = build_condition(AudioFeatureSequence(rows), 7, small_model)
    cp = build_condition(AudioFeatureSequence(rows[perm]), 7, small_model)
    np.testing.assert_allclose(cp, c[perm], atol=1e-6)


def test_denoise_motion_zero_output_projection(small_model):
    with torch.no_grad():
        small_model.out_proj.weight.zero_()
        small_model.out_proj.bias.zero_()
    seq = CoeffSequence(np.random.default_rng(7).standard_normal((4, 3)), "expression")
    audio = AudioFeatureSequence(np.random.default_rng(8).standard_normal((4, 5)))
    out = denoise_motion(seq, 2, audio, small_model)
    np.testing.assert_array_equal(out.values, np.zeros((4, 3)))
    assert out.kind == "expression"


def test_denoise_motion_deterministic(small_model):
    seq = CoeffSequence(np.random.default_rng(9).standard_normal((4, 3)), "expression")
    audio = AudioFeatureSequence(np.random.default_rng(10).standard_normal((4, 5)))
    a = denoise_motion(seq, 5, audio, small_model)
    b = denoise_motion(seq, 5, audio, small_model)
    np.testing.assert_array_equal(a.values, b.values)


def test_denoise_motion_shape_mismatch(small_model):
    audio = AudioFeatureSequence(np.zeros((5, 5)))
    with pytest.raises(ValueError):
        denoise_motion(CoeffSequence(np.zeros((4, 3)), "expression"), 1, audio, small_model)
    with pytest.raises(ValueError):
        denoise_motion(CoeffSequence(np.zeros((5, 4)), "expression"), 1, audio, small_model)


def test_audio_locality_band():
    # k=1, L=2: audio row 4 may only influence output rows within distance 2
    torch.manual_seed(11)
    model = MotionDenoiser(dim=3, audio_dim=5, width=16, layers=2, heads=2, window_radius=1)
    rng = np.random.default_rng(11)
    x = torch.as_tensor(rng.standard_normal((9, 3)), dtype=torch.float32)
    audio = rng.standard_normal((9, 5))
    audio_pert = audio.copy()
    audio_pert[4] += 1.0
    with torch.no_grad():
        base = model(x, 3, torch.as_tensor(audio, dtype=torch.float32)).numpy()
        pert = model(x, 3, torch.as_tensor(audio_pert, dtype=torch.float32)).numpy()
    changed = np.abs(pert - base).max(axis=1) > 1e-9
    np.testing.assert_array_equal(changed, [False, False, True, True, True, True, True, False, False])


def test_generate_motion_shapes_and_determinism():
    torch.manual_seed(12)
    exp = MotionDenoiser(dim=4, audio_dim=5, width=8, layers=1, heads=2)
    pose = MotionDenoiser(dim=6, audio_dim=5, width=8, layers=1, heads=2)
    audio = AudioFeatureSequence(np.random.default_rng(12).standard_normal((7, 5)))
    sched = diffcore.build_schedule(20)
    b1, p1 = generate_motion(audio, exp, pose, sched, steps=5, seed=3)
    b2, p2 = generate_motion(audio, exp, pose, sched, steps=5, seed=3)
    assert b1.values.shape == (7, 4) and p1.values.shape == (7, 6)
    assert b1.kind == "expression" and p1.kind == "pose"
    np.testing.assert_array_equal(b1.values, b2.values)
    np.testing.assert_array_equal(p1.values, p2.values)


def test_generate_motion_decoupled_paths():
    torch.manual_seed(13)
    exp = MotionDenoiser(dim=4, audio_dim=5, width=8, layers=1, heads=2)
    pose_a = MotionDenoiser(dim=6, audio_dim=5, width=8, layers=1, heads=2)
    torch.manual_seed(99)
    pose_b = MotionDenoiser(dim=6, audio_dim=5, width=8, layers=1, heads=2)
    audio = AudioFeatureSequence(np.random.default_rng(13).standard_normal((6, 5)))
    sched = diffcore.build_schedule(16)
    b1, p1 = generate_motion(audio, exp, pose_a, sched, steps=4, seed=0)
    b2, p2 = generate_motion(audio, exp, pose_b, sched, steps=4, seed=0)
    np.testing.assert_array_equal(b1.values, b2.values)  # swap of pose params leaves beta alone
    assert np.abs(p1.values - p2.values).max() > 1e-9


def test_exp_pose_models_share_no_parameters():
    torch.manual_seed(14)
    exp = MotionDenoiser(dim=4, audio_dim=5, width=8, layers=1, heads=2)
    pose = MotionDenoiser(dim=6, audio_dim=5, width=8, layers=1, heads=2)
    exp_ids = {id(p) for p in exp.parameters()}
    pose_ids = {id(p) for p in pose.parameters()}
    assert exp_ids.isdisjoint(pose_ids)


def test_mse_gradient_matches_finite_differences():
    # tiny model, 64-bit, step 1e-5, relative error <= 1e-4
    torch.manual_seed(15)
    model = MotionDenoiser(dim=3, audio_dim=4, width=8, layers=1, heads=2, time_dim=8).double()
    rng = np.random.default_rng(15)
    x_t = torch.as_tensor(rng.standard_normal((4, 3)))
    target = torch.as_tensor(rng.standard_normal((4, 3)))
    audio = torch.as_tensor(rng.standard_normal((4, 4)))

    def loss_fn():
        return ((model(x_t, 2, audio) - target) ** 2).mean()

    assert gradient_relative_error(model, loss_fn, max_coords=400) <= 1e-4


def test_coeff_sequence_validation():
    with pytest.raises(ValueError):
        CoeffSequence(np.zeros((3, 2)), "velocity")
    with pytest.raises(ValueError):
        CoeffSequence(np.zeros(5), "pose")
