import math

import numpy as np
import pytest
import torch

from talkinghead.lipexpert import (
    SYNC_CLAMP,
    SyncExpert,
    embed_audio,
    embed_mouth,
    sync_loss,
    sync_probability,
    train_expert,
    windows_of,
)

from fdcheck import gradient_relative_error


@pytest.fixture
def expert():
    torch.manual_seed(0)
    return SyncExpert(mouth_dim=6, audio_dim=4, window=3, embed_dim=5, hidden=8)


def _zero_params(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def test_zero_weights_zero_embeddings(expert):
    _zero_params(expert)
    assert np.all(embed_mouth(np.ones((3, 6)), expert) == 0.0)
    assert np.all(embed_audio(np.ones((3, 4)), expert) == 0.0)


def test_embeddings_deterministic(expert):
    w = np.random.default_rng(0).standard_normal((3, 6))
    np.testing.assert_array_equal(embed_mouth(w, expert), embed_mouth(w, expert))


def test_embedding_window_shape_checked(expert):
    with pytest.raises(ValueError):
        embed_mouth(np.zeros((2, 6)), expert)
    with pytest.raises(ValueError):
        embed_audio(np.zeros((3, 6)), expert)


def test_toy_network_hand_computation():
    # 1-coordinate window of 2 frames, hidden 2, embedding 1: hand arithmetic
    expert = SyncExpert(mouth_dim=1, audio_dim=1, window=2, embed_dim=1, hidden=2)
    with torch.no_grad():
        expert.mouth_encoder[0].weight.copy_(torch.tensor([[0.5, -1.0], [2.0, 0.25]]))
        expert.mouth_encoder[0].bias.copy_(torch.tensor([0.1, -0.2]))
        expert.mouth_encoder[2].weight.copy_(torch.tensor([[1.5, -0.5]]))
        expert.mouth_encoder[2].bias.copy_(torch.tensor([0.3]))
    window = np.array([[0.4], [-0.6]])
    h1 = math.tanh(0.5 * 0.4 + (-1.0) * (-0.6) + 0.1)
    h2 = math.tanh(2.0 * 0.4 + 0.25 * (-0.6) - 0.2)
    expected = 1.5 * h1 - 0.5 * h2 + 0.3
    out = embed_mouth(window, expert)
    np.testing.assert_allclose(out, [expected], atol=1e-6)


def test_sync_probability_perfect_alignment():
    v = np.array([0.3, -1.2, 0.7])
    assert sync_probability(v, v) == pytest.approx(1.0)


def test_sync_probability_orthogonal_clamped():
    v = np.array([1.0, 0.0])
    a = np.array([0.0, 1.0])
    assert sync_probability(v, a) == SYNC_CLAMP


def test_sync_probability_hand_cosine():
    v = np.array([1.0, 0.0])
    a = np.array([1.0, 1.0])
    assert sync_probability(v, a) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-12)


def test_sync_probability_scale_invariant():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(8)
    a = rng.standard_normal(8)
    for c in (0.5, 3.0, 1e3):
        assert sync_probability(c * v, a) == pytest.approx(sync_probability(v, a), rel=1e-12)


def test_sync_probability_torch_matches_numpy():
    rng = np.random.default_rng(2)
    v = rng.standard_normal(6)
    a = rng.standard_normal(6)
    t = sync_probability(torch.as_tensor(v), torch.as_tensor(a))
    assert float(t) == pytest.approx(sync_probability(v, a), abs=1e-12)


def test_sync_probability_eps_validation():
    with pytest.raises(ValueError):
        sync_probability(np.ones(2), np.ones(2), eps=0.0)


def test_sync_loss_values():
    assert sync_loss(1.0) == 0.0
    assert sync_loss(1e-6) == pytest.approx(13.8155, abs=1e-3)
    assert sync_loss(0.5) == pytest.approx(math.log(2.0), abs=1e-12)


def test_sync_loss_monotone_decreasing():
    ps = np.linspace(1e-6, 1.0, 50)
    losses = [sync_loss(p) for p in ps]
    assert all(x > y for x, y in zip(losses, losses[1:]))


def test_windows_of():
    rows = np.arange(12).reshape(6, 2)
    w = windows_of(rows, 3)
    assert w.shape == (4, 3, 2)
    np.testing.assert_array_equal(w[0], rows[:3])
    np.testing.assert_array_equal(w[-1], rows[3:])
    with pytest.raises(ValueError):
        windows_of(rows, 7)


def test_train_expert_zero_epochs_no_op(expert):
    before = [p.detach().clone() for p in expert.parameters()]
    pos = (np.zeros((2, 3, 6)), np.zeros((2, 3, 4)))
    neg = (np.zeros((2, 3, 6)), np.zeros((2, 3, 4)))
    train_expert(pos, neg, expert, epochs=0)
    for p, b in zip(expert.parameters(), before):
        torch.testing.assert_close(p, b, rtol=0, atol=0)


def test_train_expert_requires_pairs(expert):
    with pytest.raises(ValueError):
        train_expert(
            (np.zeros((0, 3, 6)), np.zeros((0, 3, 4))),
            (np.zeros((1, 3, 6)), np.zeros((1, 3, 4))),
            expert,
        )


def test_train_expert_deterministic():
    rng = np.random.default_rng(3)
    pos = (rng.standard_normal((6, 3, 6)), rng.standard_normal((6, 3, 4)))
    neg = (rng.standard_normal((6, 3, 6)), rng.standard_normal((6, 3, 4)))

    def run():
        torch.manual_seed(4)
        expert = SyncExpert(mouth_dim=6, audio_dim=4, window=3, embed_dim=5, hidden=8)
        train_expert(pos, neg, expert, epochs=20, seed=4)
        return [p.detach().clone() for p in expert.parameters()]

    for a, b in zip(run(), run()):
        torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_sync_loss_gradient_through_both_encoders():
    torch.manual_seed(20)
    expert = SyncExpert(mouth_dim=3, audio_dim=2, window=2, embed_dim=4, hidden=6).double()
    rng = np.random.default_rng(101)
    mouth = torch.as_tensor(rng.standard_normal((2, 3)))
    audio = torch.as_tensor(rng.standard_normal((2, 2)))

    def loss_fn():
        p = sync_probability(expert.embed_mouth(mouth), expert.embed_audio(audio))
        return sync_loss(p)

    # the probe must land strictly inside the clamp, else gradients vanish
    with torch.no_grad():
        probe = float(sync_probability(expert.embed_mouth(mouth), expert.embed_audio(audio)))
    assert 1e-5 < probe < 1.0 - 1e-5
    assert gradient_relative_error(expert, loss_fn) <= 1e-4
