from dataclasses import dataclass, field
import logging
from typing import TYPE_CHECKING

import numpy as np

from spectral_diffusion.models.tensor_model import (
    Tensor,
    absolute,
    as_tensor,
    div,
    mul,
    square,
    sub,
    tensor_mean,
    tensor_sum,
    wrap_phase,
)
from spectral_diffusion.models.transforms_model import dwt, filter_bank, fourier_amplitude, fourier_phase
from spectral_diffusion.utils.errors import ConfigurationError, SingularScheduleError, UsageError
from spectral_diffusion.utils.logger import configure_logger

if TYPE_CHECKING:
    from spectral_diffusion.models.diffusion_model import NoiseSchedule


logger = logging.getLogger(__name__)
configure_logger(logger)

FOURIER_AMPLITUDE = "fourier-amplitude"
FOURIER_AMP_PHASE = "fourier-amp-phase"
WAVELET = "wavelet"

# Config-file names of the regularizers
SPECTRAL_CHOICES = ("none", "amp", "amp-phase", "haar", "bior13")


@dataclass
class SpectralLossKind:
    """
    Which spectral regularizer to apply, with its wavelet options.

    Attributes:
        tag (str): fourier-amplitude, fourier-amp-phase or wavelet.
        wavelet (str): Filter bank name for the wavelet loss.
        levels (int): Wavelet level count L.
        gamma_approx (float): Weight of the coarsest approximation band.
        gamma_detail (float): Default weight of every detail band.
        gammas (dict[tuple[int, str], float]): Per-(level, orientation) overrides.
    """
    tag: str
    wavelet: str = "haar"
    levels: int = 2
    gamma_approx: float = 1.0
    gamma_detail: float = 1.0
    gammas: dict[tuple[int, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in (FOURIER_AMPLITUDE, FOURIER_AMP_PHASE, WAVELET):
            raise ConfigurationError(f"Unknown spectral loss kind '{self.tag}'")
        if self.levels < 1:
            raise ConfigurationError(f"Wavelet level count must be at least 1, got {self.levels}")
        weights = [self.gamma_approx, self.gamma_detail, *self.gammas.values()]
        if any(w < 0 for w in weights):
            raise ConfigurationError(f"Band weights must be non-negative, got {weights}")

    def gamma(self, level: int, orientation: str) -> float:
        default = self.gamma_approx if orientation == "approx" else self.gamma_detail
        return self.gammas.get((level, orientation), default)

    @classmethod
    def from_choice(cls, choice: str, levels: int = 2, gamma_approx: float = 1.0,
                    gamma_detail: float = 1.0) -> "SpectralLossKind | None":
        """Maps a config value (none, amp, amp-phase, haar, bior13) to a loss kind."""
        if choice == "none":
            return None
        if choice == "amp":
            return cls(FOURIER_AMPLITUDE)
        if choice == "amp-phase":
            return cls(FOURIER_AMP_PHASE)
        if choice in ("haar", "bior13"):
            return cls(WAVELET, wavelet=choice, levels=levels,
                       gamma_approx=gamma_approx, gamma_detail=gamma_detail)
        raise ConfigurationError(f"Unknown spectral choice '{choice}', expected one of {SPECTRAL_CHOICES}")


@dataclass
class LossBreakdown:
    """
    One evaluation of the combined objective.

    Attributes:
        denoise (float): Denoising term.
        spectral (float): Batch-mean spectral term.
        lam (float): Regularization weight; in per-sample mode the effective
            scalar with total = denoise + lam * spectral.
        total (float): Combined value.
        objective (Tensor | None): The combined value as a graph node for backward.
    """
    denoise: float
    spectral: float
    lam: float
    total: float
    objective: Tensor | None = field(default=None, repr=False, compare=False)

    def is_finite(self) -> bool:
        return bool(np.isfinite([self.denoise, self.spectral, self.lam, self.total]).all())


##################################################
# Helpers
##################################################

def _check_pair(a: Tensor, b: Tensor) -> int:
    if a.shape != b.shape:
        logger.error("Shape mismatch: %s vs %s", a.shape, b.shape)
        raise UsageError(f"Shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise UsageError(f"Expected a batch of 1-D or 2-D signals, got shape {a.shape}")
    return a.ndim - 1


def _per_sample_sum(x: Tensor) -> Tensor:
    return tensor_sum(x, tuple(range(1, x.ndim)))


def _per_sample(values, batch: int, ndim_total: int) -> np.ndarray:
    values = np.broadcast_to(np.asarray(values, dtype=np.float64), (batch,))
    return values.reshape((batch,) + (1,) * (ndim_total - 1))


def _reduce(per_sample: Tensor, reduction: str) -> Tensor:
    if reduction == "none":
        return per_sample
    if reduction == "mean":
        return tensor_mean(per_sample)
    raise UsageError(f"Unknown reduction '{reduction}', expected 'mean' or 'none'")


##################################################
# Denoising objectives
##################################################

def ddpm_loss(eps_true, eps_pred, reduction: str = "mean") -> Tensor:
    """Batch mean of ||eps_true - eps_pred||^2, summed over signal coordinates."""
    eps_true, eps_pred = as_tensor(eps_true), as_tensor(eps_pred)
    _check_pair(eps_true, eps_pred)
    return _reduce(_per_sample_sum(square(sub(eps_true, eps_pred))), reduction)


def edm_weight(sigma, sigma_data: float = 0.5):
    """
    lambda_EDM(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.

    Raises:
        UsageError: If sigma or sigma_data is not positive.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or sigma_data <= 0:
        logger.error("edm_weight needs positive sigma and sigma_data")
        raise UsageError("edm_weight needs positive sigma and sigma_data")
    weight = (sigma ** 2 + sigma_data ** 2) / (sigma * sigma_data) ** 2
    return float(weight) if weight.ndim == 0 else weight


def edm_loss(eps_true, eps_pred, sigma, sigma_data: float = 0.5, reduction: str = "mean") -> Tensor:
    """Batch mean of lambda_EDM(sigma_i) * ||eps_true_i - eps_pred_i||^2 with per-sample sigma."""
    eps_true, eps_pred = as_tensor(eps_true), as_tensor(eps_pred)
    _check_pair(eps_true, eps_pred)
    weights = np.broadcast_to(edm_weight(sigma, sigma_data), (eps_true.shape[0],))
    per_sample = mul(_per_sample_sum(square(sub(eps_true, eps_pred))), weights)
    return _reduce(per_sample, reduction)


##################################################
# Spectral regularizers
##################################################

def fourier_amplitude_loss(x0, x0_hat, reduction: str = "mean") -> Tensor:
    """Batch mean of sum_w |A_0(w) - A_hat(w)| over all DFT bins."""
    x0, x0_hat = as_tensor(x0), as_tensor(x0_hat)
    ndim = _check_pair(x0, x0_hat)
    diff = sub(fourier_amplitude(x0, ndim), fourier_amplitude(x0_hat, ndim))
    return _reduce(_per_sample_sum(absolute(diff)), reduction)


def fourier_amp_phase_loss(x0, x0_hat, reduction: str = "mean") -> Tensor:
    """
    Batch mean of ||A_0 - A_hat||_1 * (1 + ||wrap(phi_0 - phi_hat)||_1).

    Both norms are per-sample totals over all bins; the phase difference is
    wrapped into (-pi, pi] before the absolute value.
    """
    x0, x0_hat = as_tensor(x0), as_tensor(x0_hat)
    ndim = _check_pair(x0, x0_hat)
    amplitude = _per_sample_sum(absolute(sub(fourier_amplitude(x0, ndim), fourier_amplitude(x0_hat, ndim))))
    phase_diff = wrap_phase(sub(fourier_phase(x0, ndim), fourier_phase(x0_hat, ndim)))
    phase = _per_sample_sum(absolute(phase_diff))
    return _reduce(mul(amplitude, phase + 1.0), reduction)


def wavelet_loss(x0, x0_hat, kind: SpectralLossKind, reduction: str = "mean") -> Tensor:
    """
    Batch mean of sum over bands of gamma_{s,l} * ||W_0^{(s,l)} - W_hat^{(s,l)}||_1,
    the coarsest approximation band included.

    Raises:
        ConfigurationError: If the level count does not fit the signal size.
    """
    x0, x0_hat = as_tensor(x0), as_tensor(x0_hat)
    ndim = _check_pair(x0, x0_hat)
    bank = filter_bank(kind.wavelet)
    reference = dwt(x0, bank, kind.levels, ndim)
    estimate = dwt(x0_hat, bank, kind.levels, ndim)

    total = None
    for (level, orientation, ref_band), (_, _, est_band) in zip(reference.bands(), estimate.bands()):
        gamma = kind.gamma(level, orientation)
        if gamma == 0:
            continue
        term = mul(_per_sample_sum(absolute(sub(ref_band, est_band))), gamma)
        total = term if total is None else total + term
    if total is None:
        total = Tensor(np.zeros(x0.shape[0]))
    return _reduce(total, reduction)


def spectral_loss(kind: SpectralLossKind, x0, x0_hat, reduction: str = "mean") -> Tensor:
    if kind.tag == FOURIER_AMPLITUDE:
        return fourier_amplitude_loss(x0, x0_hat, reduction)
    if kind.tag == FOURIER_AMP_PHASE:
        return fourier_amp_phase_loss(x0, x0_hat, reduction)
    return wavelet_loss(x0, x0_hat, kind, reduction)


##################################################
# Combined objective
##################################################

def total_loss(denoise, spectral, lam) -> LossBreakdown:
    """
    L_total = L + lambda * L_S.

    Args:
        denoise (Tensor | float): Scalar denoising term.
        spectral (Tensor | float): Scalar spectral term, or per-sample values of shape (batch,).
        lam (float | np.ndarray): Scalar weight, or per-sample weights applied to each
            sample's spectral term before the batch mean (EDM-weighted mode).

    Raises:
        ConfigurationError: If any weight is negative.
    """
    denoise, spectral = as_tensor(denoise), as_tensor(spectral)
    lam_values = np.asarray(lam, dtype=np.float64)
    if np.any(lam_values < 0):
        logger.error("Negative regularization weight: %s", lam)
        raise ConfigurationError(f"Regularization weight must be non-negative, got {lam}")

    denoise_value = denoise.item()
    spectral_mean = tensor_mean(spectral) if spectral.ndim > 0 else spectral
    spectral_value = spectral_mean.item()

    if lam_values.ndim == 0:
        lam_value = float(lam_values)
        if lam_value == 0.0:
            objective = denoise
        else:
            objective = denoise + mul(spectral_mean, lam_value)
        total = denoise_value + lam_value * spectral_value
    else:
        if spectral.ndim != 1 or spectral.shape[0] != lam_values.shape[0]:
            raise UsageError(f"Per-sample weights {lam_values.shape} need per-sample spectral values, got {spectral.shape}")
        weighted = tensor_mean(mul(spectral, lam_values))
        weighted_value = weighted.item()
        lam_value = weighted_value / spectral_value if spectral_value != 0 else float(np.mean(lam_values))
        objective = denoise + weighted
        total = denoise_value + weighted_value
    return LossBreakdown(denoise_value, spectral_value, lam_value, total, objective)


##################################################
# Clean-signal estimates
##################################################

def spectral_supervision_target(x_t, eps_pred, schedule: "NoiseSchedule", t) -> Tensor:
    """
    x0_hat = (x_t - sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_bar_t).

    Gradients flow through eps_pred. t is a step index or one index per sample.

    Raises:
        UsageError: If t is outside 1..T.
        SingularScheduleError: If alpha_bar_t is 0.
    """
    x_t, eps_pred = as_tensor(x_t), as_tensor(eps_pred)
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        logger.error("Timestep %s outside 1..%d", t, schedule.T)
        raise UsageError(f"Timestep must lie in 1..{schedule.T}, got {t}")
    alpha_bar = np.asarray(schedule.alpha_bar(t), dtype=np.float64)
    if np.any(alpha_bar <= 0):
        logger.error("alpha_bar is zero at timestep %s", t)
        raise SingularScheduleError(f"alpha_bar is zero at timestep {t}; x0 cannot be recovered")
    batch = x_t.shape[0]
    noise_scale = _per_sample(np.sqrt(1.0 - alpha_bar), batch, x_t.ndim)
    signal_scale = _per_sample(np.sqrt(alpha_bar), batch, x_t.ndim)
    return div(sub(x_t, mul(eps_pred, noise_scale)), signal_scale)


def edm_supervision_target(x_sigma, eps_pred, sigma) -> Tensor:
    """x0_hat = x_sigma - sigma * eps_pred for the additive corruption x_sigma = x0 + sigma * eps."""
    x_sigma, eps_pred = as_tensor(x_sigma), as_tensor(eps_pred)
    return sub(x_sigma, mul(eps_pred, _per_sample(sigma, x_sigma.shape[0], x_sigma.ndim)))
