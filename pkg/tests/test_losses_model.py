import numpy as np
import pytest

from spectral_diffusion.models.diffusion_model import forward_diffuse, make_schedule
from spectral_diffusion.models.losses_model import (
    FOURIER_AMPLITUDE,
    WAVELET,
    SpectralLossKind,
    ddpm_loss,
    edm_loss,
    edm_supervision_target,
    edm_weight,
    fourier_amp_phase_loss,
    fourier_amplitude_loss,
    spectral_loss,
    spectral_supervision_target,
    total_loss,
    wavelet_loss,
)
from spectral_diffusion.models.tensor_model import Tensor
from spectral_diffusion.utils.errors import ConfigurationError, SingularScheduleError, UsageError


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    return rng.standard_normal((3, 8, 8)), rng.standard_normal((3, 8, 8))


##################################################
# Denoising objectives
##################################################

def test_ddpm_loss_value():
    eps = np.array([[1.0, 2.0], [0.0, 0.0]])
    pred = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert ddpm_loss(eps, pred).item() == pytest.approx((5.0 + 2.0) / 2)


def test_ddpm_loss_shape_mismatch():
    with pytest.raises(UsageError, match="Shape mismatch"):
        ddpm_loss(np.zeros((2, 4)), np.zeros((2, 5)))


def test_edm_weight_values():
    assert edm_weight(0.5) == pytest.approx(8.0)
    assert edm_weight(1.0, sigma_data=1.0) == pytest.approx(2.0)
    with pytest.raises(UsageError):
        edm_weight(0.0)


def test_edm_loss_scales_ddpm_loss(pair):
    eps, pred = pair
    sigma = np.array([0.5, 1.0, 2.0])
    per_sample = ddpm_loss(eps, pred, reduction="none").data
    expected = np.mean(edm_weight(sigma) * per_sample)
    assert edm_loss(eps, pred, sigma).item() == pytest.approx(expected, rel=1e-12)


##################################################
# Spectral regularizers
##################################################

@pytest.mark.parametrize("kind", [
    SpectralLossKind("fourier-amplitude"),
    SpectralLossKind("fourier-amp-phase"),
    SpectralLossKind(WAVELET, wavelet="haar", levels=3),
    SpectralLossKind(WAVELET, wavelet="bior13", levels=2),
])
def test_spectral_losses_vanish_at_equality(pair, kind):
    x, _ = pair
    assert abs(spectral_loss(kind, x, x.copy()).item()) <= 1e-12


def test_amplitude_loss_is_shift_invariant(pair):
    x, _ = pair
    shifted = np.roll(x, (2, 5), axis=(1, 2))
    assert fourier_amplitude_loss(x, shifted).item() <= 1e-9 * np.sum(np.abs(np.fft.fft2(x)))


def test_amp_phase_dominates_amplitude():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((1000, 8)), rng.standard_normal((1000, 8))
    amp = fourier_amplitude_loss(a, b, reduction="none").data
    amp_phase = fourier_amp_phase_loss(a, b, reduction="none").data
    assert np.all(amp_phase >= amp)


def test_amp_phase_exceeds_amplitude_on_perturbed_pair(pair):
    """Test that the phase factor adds to the loss once the phases differ."""
    x, noise = pair
    y = x + 0.1 * noise
    assert fourier_amp_phase_loss(x, y).item() > fourier_amplitude_loss(x, y).item()


def test_wavelet_gamma_zero_targets_bands():
    """Test that with only the approximation weighted, detail-only changes cost nothing."""
    x = np.zeros((1, 8, 8))
    y = x.copy()
    y[0, ::2, ::2] += 1.0
    y[0, 1::2, ::2] -= 1.0
    kind = SpectralLossKind(WAVELET, wavelet="haar", levels=1, gamma_approx=1.0, gamma_detail=0.0)
    assert wavelet_loss(x, y, kind).item() == pytest.approx(0.0, abs=1e-12)
    detail_kind = SpectralLossKind(WAVELET, wavelet="haar", levels=1, gamma_approx=0.0, gamma_detail=1.0)
    assert wavelet_loss(x, y, detail_kind).item() > 0.0


@pytest.mark.parametrize("kind", [
    SpectralLossKind("fourier-amplitude"),
    SpectralLossKind("fourier-amp-phase"),
    SpectralLossKind(WAVELET, wavelet="haar", levels=2),
    SpectralLossKind(WAVELET, wavelet="bior13", levels=2),
])
def test_spectral_losses_are_symmetric(pair, kind):
    x, y = pair
    forward = spectral_loss(kind, x, y, reduction="none").data
    backward = spectral_loss(kind, y, x, reduction="none").data
    assert np.allclose(forward, backward, rtol=1e-12, atol=1e-12), f"{kind.tag}: {forward} vs {backward}"


def test_amplitude_loss_of_impulse_is_bin_count():
    x0 = np.zeros((1, 4, 4))
    x0[0, 0, 0] = 1.0
    assert fourier_amplitude_loss(x0, np.zeros((1, 4, 4))).item() == pytest.approx(16.0, abs=1e-12)


def _naive_dft2(x):
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            for i in range(h):
                for j in range(w):
                    out[u, v] += x[i, j] * np.exp(-2j * np.pi * (u * i / h + v * j / w))
    return out


def test_amp_phase_scalar_oracle():
    """Test a random 4x4 pair against naive DFT, atan2 phases, wrapping and the product of totals."""
    rng = np.random.default_rng(3)
    x0, x0_hat = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    a, b = _naive_dft2(x0), _naive_dft2(x0_hat)
    amplitude = sum(abs(abs(p) - abs(q)) for p, q in zip(a.flat, b.flat))
    phase = 0.0
    for p, q in zip(a.flat, b.flat):
        d = np.arctan2(p.imag, p.real) - np.arctan2(q.imag, q.real)
        while d <= -np.pi:
            d += 2 * np.pi
        while d > np.pi:
            d -= 2 * np.pi
        phase += abs(d)
    expected = amplitude * (1.0 + phase)
    assert fourier_amp_phase_loss(x0[None], x0_hat[None]).item() == pytest.approx(expected, rel=1e-10)


def test_wavelet_loss_of_constants():
    """Test Haar on constants: details vanish and each of the N/2 approximations differs by sqrt(2)(c - c')."""
    kind = SpectralLossKind(WAVELET, wavelet="haar", levels=1, gamma_approx=1.5)
    x0, x0_hat = np.full((1, 8), 0.7), np.full((1, 8), -0.2)
    assert wavelet_loss(x0, x0_hat, kind).item() == pytest.approx(1.5 * 4 * np.sqrt(2.0) * 0.9, rel=1e-12)


def _haar_level_2d(x):
    s = 1.0 / np.sqrt(2.0)
    h, w = x.shape
    bands = {name: np.zeros((h // 2, w // 2)) for name in ("LL", "LH", "HL", "HH")}
    for i in range(h // 2):
        for j in range(w // 2):
            a, b = x[2 * i, 2 * j], x[2 * i, 2 * j + 1]
            c, d = x[2 * i + 1, 2 * j], x[2 * i + 1, 2 * j + 1]
            bands["LL"][i, j] = s * s * (a + b + c + d)
            bands["LH"][i, j] = s * s * (a - b + c - d)
            bands["HL"][i, j] = s * s * (a + b - c - d)
            bands["HH"][i, j] = s * s * (a - b - c + d)
    return bands


def test_wavelet_loss_band_by_band_oracle():
    rng = np.random.default_rng(4)
    x0, x0_hat = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    expected = 0.0
    ref, est = x0, x0_hat
    for _ in range(2):
        ref_bands, est_bands = _haar_level_2d(ref), _haar_level_2d(est)
        for name in ("LH", "HL", "HH"):
            expected += np.sum(np.abs(ref_bands[name] - est_bands[name]))
        ref, est = ref_bands["LL"], est_bands["LL"]
    expected += np.sum(np.abs(ref - est))
    kind = SpectralLossKind(WAVELET, wavelet="haar", levels=2)
    assert wavelet_loss(x0[None], x0_hat[None], kind).item() == pytest.approx(expected, rel=1e-12)


def test_negative_gamma_rejected():
    with pytest.raises(ConfigurationError, match="non-negative"):
        SpectralLossKind(WAVELET, gamma_detail=-1.0)


def test_wavelet_levels_must_fit():
    kind = SpectralLossKind(WAVELET, wavelet="haar", levels=4)
    with pytest.raises(ConfigurationError):
        wavelet_loss(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)), kind)


def test_from_choice():
    assert SpectralLossKind.from_choice("none") is None
    assert SpectralLossKind.from_choice("amp").tag == FOURIER_AMPLITUDE
    assert SpectralLossKind.from_choice("bior13", levels=3).levels == 3
    with pytest.raises(ConfigurationError):
        SpectralLossKind.from_choice("dct")


##################################################
# Combined objective
##################################################

def test_total_loss_lambda_zero_is_bitwise_baseline():
    breakdown = total_loss(0.123456789, 4.5, 0.0)
    assert breakdown.total == 0.123456789


def test_total_loss_combines():
    breakdown = total_loss(2.0, 3.0, 0.5)
    assert breakdown.total == pytest.approx(3.5)
    assert breakdown.lam == 0.5


def test_total_loss_small_lambda():
    assert total_loss(2.0, 3.0, 1e-4).total == pytest.approx(2.0003, abs=1e-15)


def test_total_loss_rejects_negative_lambda():
    with pytest.raises(ConfigurationError, match="non-negative"):
        total_loss(1.0, 1.0, -0.1)


def test_total_loss_per_sample_weights():
    """Test that the logged lambda keeps total = denoise + lambda * spectral."""
    spectral = Tensor(np.array([1.0, 3.0]))
    breakdown = total_loss(0.5, spectral, np.array([2.0, 4.0]))
    assert breakdown.total == pytest.approx(0.5 + (2.0 + 12.0) / 2)
    assert breakdown.total == pytest.approx(breakdown.denoise + breakdown.lam * breakdown.spectral, rel=1e-12)


def test_total_loss_backpropagates():
    eps_pred = Tensor(np.zeros((1, 4)), requires_grad=True)
    eps = np.ones((1, 4))
    breakdown = total_loss(ddpm_loss(eps, eps_pred), fourier_amplitude_loss(eps, eps_pred), 0.5)
    breakdown.objective.backward()
    assert eps_pred.grad is not None and np.all(np.isfinite(eps_pred.grad))


##################################################
# Clean-signal estimates
##################################################

def test_x0_estimate_inverts_forward_process():
    schedule = make_schedule()
    rng = np.random.default_rng(2)
    x0, eps = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
    t = np.array([1, 50, 150, 200])
    x_t = forward_diffuse(x0, eps, t, schedule)
    assert np.max(np.abs(spectral_supervision_target(x_t, eps, schedule, t).data - x0)) <= 1e-12


def test_x0_estimate_scalar_oracle():
    schedule = make_schedule(betas=[0.5])
    x_t, eps = np.array([[1.0]]), np.array([[0.2]])
    expected = (1.0 - np.sqrt(0.5) * 0.2) / np.sqrt(0.5)
    assert spectral_supervision_target(x_t, eps, schedule, 1).item() == pytest.approx(expected, abs=1e-12)


def test_x0_estimate_singular(mocker):
    schedule = make_schedule(betas=[0.5])
    mocker.patch.object(type(schedule), "alpha_bar", return_value=np.array(0.0))
    with pytest.raises(SingularScheduleError):
        spectral_supervision_target(np.zeros((1, 2)), np.zeros((1, 2)), schedule, 1)


def test_x0_estimate_timestep_range():
    schedule = make_schedule(betas=[0.1, 0.2])
    with pytest.raises(UsageError):
        spectral_supervision_target(np.zeros((1, 2)), np.zeros((1, 2)), schedule, 3)


def test_edm_target():
    x_sigma = np.array([[1.0, 2.0]])
    eps = np.array([[0.5, -0.5]])
    assert np.allclose(edm_supervision_target(x_sigma, eps, 2.0).data, [[0.0, 3.0]])
