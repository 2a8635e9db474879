import numpy as np
import pytest

from spectral_diffusion.models.denoiser_model import DenoiserNet, TimeEmbedding
from spectral_diffusion.models.diffusion_model import (
    EDM,
    SamplerSpec,
    ddim_step,
    ddpm_step,
    edm_euler_step,
    edm_noise,
    edm_sigmas,
    forward_diffuse,
    make_schedule,
    respace,
    sample,
    sample_sigma_train,
    timestep_sequence,
)
from spectral_diffusion.utils.errors import ConfigurationError, UsageError


@pytest.fixture
def schedule():
    return make_schedule()


@pytest.fixture
def zero_net():
    return DenoiserNet((8,), channels=2, blocks=0, embedding=TimeEmbedding(8))


##################################################
# Schedules
##################################################

def test_single_step_schedule():
    assert make_schedule(betas=[0.5]).alpha_bars[0] == pytest.approx(0.5)


def test_alpha_bar_hand_product():
    s = make_schedule(betas=[0.1, 0.2, 0.3])
    assert np.allclose(s.alpha_bars, [0.9, 0.72, 0.504], atol=1e-12)
    assert s.alpha_bar(0) == 1.0


def test_default_schedule_ends_near_pure_noise(schedule):
    assert schedule.T == 200
    assert schedule.alpha_bars[-1] < 0.05
    assert np.all(np.diff(schedule.alpha_bars) < 0)


def test_unscaled_betas_are_verbatim():
    s = make_schedule(T=200, scaled_betas=False)
    assert s.betas[0] == pytest.approx(1e-4)
    assert s.betas[-1] == pytest.approx(0.02)


@pytest.mark.parametrize("betas", [[0.2, 0.1], [0.0, 0.1], [0.5, 1.0]])
def test_invalid_betas(betas):
    with pytest.raises(ConfigurationError):
        make_schedule(betas=betas)


def test_edm_grid():
    s = make_schedule(EDM, steps=18)
    assert s.sigmas[0] == pytest.approx(80.0)
    assert s.sigmas[-1] == pytest.approx(0.002)
    assert np.all(np.diff(s.sigmas) < 0)


def test_timestep_sequence():
    seq = timestep_sequence(200, 50)
    assert seq[0] == 200 and seq[-1] == 1
    assert len(np.unique(seq)) == 50
    assert list(timestep_sequence(10, 1)) == [10]
    with pytest.raises(ConfigurationError):
        timestep_sequence(10, 11)


def test_respace_keeps_alpha_bars(schedule):
    kept = timestep_sequence(schedule.T, 20)
    short = respace(schedule, kept)
    assert short.T == 20
    assert np.allclose(short.alpha_bars, schedule.alpha_bar(np.sort(kept)), rtol=1e-12)
    assert list(short.timesteps) == sorted(kept)


##################################################
# Forward processes
##################################################

def test_forward_diffuse_matches_closed_form(schedule):
    x0, eps = np.ones((1, 4)), np.full((1, 4), 2.0)
    ab = schedule.alpha_bar(10)
    assert np.allclose(forward_diffuse(x0, eps, 10, schedule), np.sqrt(ab) + 2.0 * np.sqrt(1 - ab))


def test_forward_diffuse_range(schedule):
    with pytest.raises(UsageError):
        forward_diffuse(np.zeros(3), np.zeros(3), 0, schedule)
    with pytest.raises(UsageError):
        forward_diffuse(np.zeros(3), np.zeros(3), 201, schedule)


def test_forward_variance_monte_carlo(schedule):
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal(100_000)
    x_t = forward_diffuse(x0, rng.standard_normal(100_000), 60, schedule)
    ab = schedule.alpha_bar(60)
    assert np.var(x_t) == pytest.approx(ab * np.var(x0) + 1 - ab, rel=0.02)


def test_edm_noise():
    eps = np.array([1.0, -2.0])
    assert np.allclose(edm_noise(np.zeros(2), eps, 2.0), 2.0 * eps)
    assert np.allclose(edm_noise(np.ones(2), eps, 1e-12), np.ones(2))
    with pytest.raises(UsageError):
        edm_noise(np.zeros(2), eps, 0.0)


def test_edm_noise_monte_carlo():
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal(100_000)
    assert np.std(edm_noise(x0, rng.standard_normal(100_000), 0.7) - x0) == pytest.approx(0.7, rel=0.01)


def test_training_sigma_distribution():
    draws = sample_sigma_train(np.random.default_rng(2), 100_000)
    assert np.median(draws) == pytest.approx(np.exp(-1.2), rel=0.05)
    assert draws.min() >= 0.002 and draws.max() <= 80.0
    again = sample_sigma_train(np.random.default_rng(2), 100_000)
    assert np.array_equal(draws, again)


##################################################
# Reverse steps
##################################################

def test_ddpm_step_scalar_oracle():
    s = make_schedule(betas=[0.1, 0.2])
    x_t, eps, z = np.array([0.7]), np.array([0.3]), np.array([-1.1])
    alpha_bar = 0.9 * 0.8
    expected = (0.7 - 0.2 / np.sqrt(1 - alpha_bar) * 0.3) / np.sqrt(0.8) + np.sqrt(0.2) * -1.1
    assert ddpm_step(x_t, eps, 2, s, z)[0] == pytest.approx(expected, abs=1e-12)


def test_ddpm_final_step_ignores_noise():
    s = make_schedule(betas=[0.1, 0.2])
    a = ddpm_step(np.array([0.5]), np.array([0.1]), 1, s, z=np.array([10.0]))
    b = ddpm_step(np.array([0.5]), np.array([0.1]), 1, s)
    assert np.array_equal(a, b)


def test_ddpm_step_tiny_beta():
    s = make_schedule(betas=[1e-12])
    assert ddpm_step(np.array([0.4]), np.array([0.0]), 1, s)[0] == pytest.approx(0.4, abs=1e-9)


def test_ddim_step_follows_exact_trajectory(schedule):
    rng = np.random.default_rng(3)
    x0, eps = rng.standard_normal((2, 8)), rng.standard_normal((2, 8))
    x_t = forward_diffuse(x0, eps, 120, schedule)
    x_prev = ddim_step(x_t, eps, 120, 80, schedule)
    assert np.max(np.abs(x_prev - forward_diffuse(x0, eps, 80, schedule))) <= 1e-12


def test_ddim_step_to_zero_returns_x0_estimate(schedule):
    rng = np.random.default_rng(4)
    x0, eps = rng.standard_normal((1, 8)), rng.standard_normal((1, 8))
    x_t = forward_diffuse(x0, eps, 30, schedule)
    assert np.allclose(ddim_step(x_t, eps, 30, 0, schedule), x0, atol=1e-12)


def test_ddim_step_ordering(schedule):
    with pytest.raises(UsageError):
        ddim_step(np.zeros((1, 2)), np.zeros((1, 2)), 10, 10, schedule)


def test_edm_euler_step():
    x, eps = np.array([1.0]), np.array([0.5])
    assert np.array_equal(edm_euler_step(x, eps, 2.0, 2.0), x)
    assert edm_euler_step(x, eps, 2.0, 1.0)[0] == pytest.approx(1.0 - 0.5)
    x0 = np.array([0.3])
    assert edm_euler_step(x0 + 2.0 * eps, eps, 2.0, 0.0)[0] == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(UsageError):
        edm_euler_step(x, eps, 1.0, 2.0)


##################################################
# Samplers
##################################################

def test_ddim_sampling_is_deterministic(schedule, zero_net):
    spec = SamplerSpec("ddim", 10, seed=7)
    a = sample(zero_net, schedule, spec, 3)
    b = sample(zero_net, schedule, spec, 3)
    assert np.array_equal(a, b)
    assert a.shape == (3, 8)


def test_zero_net_ddim_scales_initial_noise(schedule, zero_net):
    """Test that with eps_pred = 0 the trajectory telescopes to x_T / sqrt(alpha_bar_T)."""
    out = sample(zero_net, schedule, SamplerSpec("ddim", 25, seed=1), 2)
    x_T = np.stack([np.random.default_rng(1 + i).standard_normal(8) for i in range(2)])
    assert np.allclose(out, x_T / np.sqrt(schedule.alpha_bar(schedule.T)), rtol=1e-10)


def test_samples_do_not_depend_on_chunking(schedule, zero_net):
    spec = SamplerSpec("ddpm", 20, seed=5)
    assert np.array_equal(sample(zero_net, schedule, spec, 5, chunk=2), sample(zero_net, schedule, spec, 5, chunk=5))


def test_ddpm_and_ddim_differ(schedule, zero_net):
    ddpm = sample(zero_net, schedule, SamplerSpec("ddpm", 20, seed=0), 2)
    ddim = sample(zero_net, schedule, SamplerSpec("ddim", 20, seed=0), 2)
    assert not np.array_equal(ddpm, ddim)


def test_edm_euler_sampling(zero_net):
    out = sample(zero_net, make_schedule(EDM), SamplerSpec("edm-euler", 12, seed=0), 2)
    assert out.shape == (2, 8)
    assert np.all(np.isfinite(out))
    # A zero predictor keeps x fixed until the last step lands on x0_hat = x
    x_T = np.stack([np.random.default_rng(i).standard_normal(8) for i in range(2)]) * 80.0
    assert np.allclose(out, x_T)


def test_sampler_validation(schedule, zero_net):
    with pytest.raises(ConfigurationError, match="exceeds"):
        sample(zero_net, schedule, SamplerSpec("ddim", 500), 1)
    with pytest.raises(ConfigurationError):
        sample(zero_net, schedule, SamplerSpec("edm-euler", 5), 1)
    with pytest.raises(ConfigurationError):
        SamplerSpec("heun", 5)


def test_edm_sigmas_single_step():
    assert list(edm_sigmas(0.002, 80.0, 7.0, 1)) == [80.0]


def test_eval_batch_from_environment(schedule, zero_net, monkeypatch):
    spec = SamplerSpec("ddim", 10, seed=2)
    expected = sample(zero_net, schedule, spec, 3, chunk=3)
    monkeypatch.setenv("SPDM_EVAL_BATCH", "1")
    assert np.array_equal(sample(zero_net, schedule, spec, 3), expected)


@pytest.mark.parametrize("value", ["many", "0"])
def test_bad_eval_batch_is_a_configuration_error(schedule, zero_net, monkeypatch, value):
    monkeypatch.setenv("SPDM_EVAL_BATCH", value)
    with pytest.raises(ConfigurationError, match="SPDM_EVAL_BATCH"):
        sample(zero_net, schedule, SamplerSpec("ddim", 10), 1)
