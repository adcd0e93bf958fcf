import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from talkinghead.diffcore import (
    NoiseSchedule,
    build_schedule,
    denoise_step,
    forward_diffuse,
    sample,
    subsample_timesteps,
    x0_objective,
)


def test_single_step_schedule():
    sched = build_schedule(1, 0.5, 0.5)
    np.testing.assert_allclose(sched.alpha_bar, [1.0, 0.5])


def test_two_step_hand_product():
    sched = build_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(sched.alpha_bar, [1.0, 0.9, 0.72], atol=1e-15)


def test_default_thousand_step_schedule():
    sched = build_schedule(1000)
    # direct product oracle
    betas = np.linspace(1e-4, 2e-2, 1000)
    prod = 1.0
    for b in betas:
        prod *= 1.0 - b
    assert sched.alpha_bar[1000] == pytest.approx(prod, rel=1e-12)
    assert sched.alpha_bar[1000] < 1e-4
    assert np.all(np.diff(sched.alpha_bar) < 0)


def test_schedule_rebuild_bit_identical():
    a = build_schedule(50)
    b = build_schedule(50)
    np.testing.assert_array_equal(a.alpha_bar, b.alpha_bar)
    np.testing.assert_array_equal(a.betas, b.betas)


def test_schedule_invalid_ranges():
    with pytest.raises(ValueError):
        build_schedule(0)
    with pytest.raises(ValueError):
        build_schedule(10, 0.2, 0.1)
    with pytest.raises(ValueError):
        build_schedule(10, 0.0, 0.1)


def test_forward_diffuse_t0_is_identity():
    sched = build_schedule(10)
    x0 = np.random.default_rng(0).standard_normal((3, 4))
    out = forward_diffuse(x0, 0, np.ones_like(x0), sched)
    np.testing.assert_array_equal(out, x0)


def test_forward_diffuse_pure_noise_limit():
    # alpha_bar ~ 0 at the last step of a harsh schedule
    sched = build_schedule(200, 0.3, 0.9)
    x0 = np.full((5,), 7.0)
    eps = np.random.default_rng(1).standard_normal(5)
    out = forward_diffuse(x0, 200, eps, sched)
    np.testing.assert_allclose(out, eps, atol=1e-8)


def test_forward_diffuse_variance_monte_carlo():
    sched = build_schedule(100)
    t = 50
    rng = np.random.default_rng(2)
    n = 100_000
    x0 = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    xt = forward_diffuse(x0, t, eps, sched)
    # Var = ab * 1 + (1 - ab) * 1 = 1 for unit-variance signal and noise
    assert np.var(xt) == pytest.approx(1.0, rel=0.03)


def test_forward_diffuse_shape_mismatch():
    sched = build_schedule(10)
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(3), 1, np.zeros(4), sched)


def test_denoise_step_algebraic_substitution():
    # with the true x0 and sigma=0, stepping from t lands exactly on the
    # forward-diffused signal at t-1 with the same noise
    sched = build_schedule(64)
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((6, 2))
    eps = rng.standard_normal((6, 2))
    for t in (1, 17, 64):
        x_t = forward_diffuse(x0, t, eps, sched)
        stepped = denoise_step(x_t, x0, t, sched, sigma_t=0.0)
        expected = forward_diffuse(x0, t - 1, eps, sched)
        np.testing.assert_allclose(stepped, expected, atol=1e-8)


def test_denoise_step_identity_when_alpha_equal():
    # handmade schedule with alpha_bar[1] == alpha_bar[2]: the step is a no-op
    sched = NoiseSchedule(
        betas=np.array([0.4, 0.0]), alpha_bar=np.array([1.0, 0.6, 0.6])
    )
    rng = np.random.default_rng(4)
    x_t = rng.standard_normal(5)
    x0_hat = rng.standard_normal(5)
    out = denoise_step(x_t, x0_hat, 2, sched, sigma_t=0.0)
    np.testing.assert_allclose(out, x_t, atol=1e-12)


def test_denoise_step_terminal_returns_prediction():
    sched = build_schedule(5)
    x_t = np.random.default_rng(6).standard_normal(4)
    x0_hat = np.random.default_rng(7).standard_normal(4)
    out = denoise_step(x_t, x0_hat, 1, sched, sigma_t=0.0)  # t_prev = 0, ab_prev = 1
    np.testing.assert_allclose(out, x0_hat, atol=1e-12)


def test_denoise_step_sigma_budget():
    sched = build_schedule(5)
    x = np.zeros(3)
    budget = np.sqrt(1.0 - sched.alpha_bar[1])
    with pytest.raises(ValueError):
        denoise_step(x, x, 2, sched, sigma_t=budget * 1.5, eps=np.zeros(3))


def test_denoise_step_requires_eps_for_noise():
    sched = build_schedule(5)
    with pytest.raises(ValueError):
        denoise_step(np.zeros(3), np.zeros(3), 2, sched, sigma_t=0.1)


def test_subsample_full_schedule():
    np.testing.assert_array_equal(subsample_timesteps(4, 4), [4, 3, 2, 1])


def test_subsample_single_jump():
    np.testing.assert_array_equal(subsample_timesteps(10, 1), [10])


def test_subsample_1000_to_50():
    ts = subsample_timesteps(1000, 50)
    assert len(ts) == 50
    assert ts[0] == 1000 and ts[-1] == 1
    assert np.all(np.diff(ts) < 0)


def test_subsample_invalid():
    with pytest.raises(ValueError):
        subsample_timesteps(10, 11)
    with pytest.raises(ValueError):
        subsample_timesteps(10, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.data())
def test_subsample_properties(T, data):
    steps = data.draw(st.integers(1, T))
    ts = subsample_timesteps(T, steps)
    assert len(ts) == steps
    assert ts[0] == T
    assert np.all(ts >= 1)
    if steps > 1:
        assert ts[-1] == 1
        assert np.all(np.diff(ts) < 0)


def test_sample_constant_oracle_collapse():
    sched = build_schedule(20)
    c = 3.25

    def denoiser(x_t, t, cond):
        return np.full_like(x_t, c)

    out = sample(denoiser, (4, 2), None, sched, steps=10, eta=0.0, seed=0)
    np.testing.assert_allclose(out, np.full((4, 2), c), atol=1e-10)


def test_sample_deterministic_for_seed():
    sched = build_schedule(20)

    def denoiser(x_t, t, cond):
        return x_t * 0.5

    a = sample(denoiser, (3, 3), None, sched, steps=5, eta=0.0, seed=42)
    b = sample(denoiser, (3, 3), None, sched, steps=5, eta=0.0, seed=42)
    np.testing.assert_array_equal(a, b)


def test_sample_perfect_denoiser_recovers_signal():
    sched = build_schedule(40)
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal((5, 3))

    def oracle(x_t, t, cond):
        return x0

    out = sample(oracle, (5, 3), None, sched, steps=40, eta=0.0, seed=1)
    np.testing.assert_allclose(out, x0, atol=1e-6)


def test_forward_backward_consistency_randomized():
    sched = build_schedule(100)
    rng = np.random.default_rng(9)
    for _ in range(200):
        x0 = rng.standard_normal((2, 3))
        eps = rng.standard_normal((2, 3))
        t = int(rng.integers(1, 101))
        lhs = denoise_step(forward_diffuse(x0, t, eps, sched), x0, t, sched, sigma_t=0.0)
        rhs = forward_diffuse(x0, t - 1, eps, sched)
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


def test_x0_objective_zero_for_perfect_prediction():
    x = np.random.default_rng(10).standard_normal((4, 4))
    assert x0_objective(x, x) == 0.0
    assert x0_objective(x, x + 0.5) == pytest.approx(0.25)
