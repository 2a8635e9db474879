from dataclasses import dataclass, field
import logging

import numpy as np

from spectral_diffusion.models.denoiser_model import DenoiserNet, embed_sigma, embed_time
from spectral_diffusion.models.losses_model import spectral_supervision_target
from spectral_diffusion.models.tensor_model import Tensor
from spectral_diffusion.utils.config_utils import env_int
from spectral_diffusion.utils.errors import ConfigurationError, UsageError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)

DDPM_LINEAR = "ddpm-linear"
EDM = "edm"
SAMPLER_KINDS = ("ddpm", "ddim", "edm-euler")

# Linear beta endpoints are stated for this many steps
REFERENCE_STEPS = 1000


@dataclass
class NoiseSchedule:
    """
    Materialized noise schedule.

    For the DDPM kind, index t = 1..T addresses betas[t - 1]; alpha_bar(0) is 1.
    `timesteps` maps each index to the training timestep the net was conditioned on
    (the identity unless the schedule was respaced for short sampling).
    For the EDM kind, `sigmas` is the decreasing sampling grid.

    Attributes:
        kind (str): ddpm-linear or edm.
        betas (np.ndarray): Per-step variances, shape (T,).
        alphas (np.ndarray): 1 - betas.
        alpha_bars (np.ndarray): Cumulative products of alphas.
        timesteps (np.ndarray): Conditioning timestep per index, shape (T,).
        sigma_min (float): Smallest EDM noise level.
        sigma_max (float): Largest EDM noise level.
        rho (float): EDM grid curvature.
        sigma_data (float): Data standard deviation assumed by the EDM weight.
        sigmas (np.ndarray): EDM sampling grid, largest first.
    """
    kind: str
    betas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alphas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alpha_bars: np.ndarray = field(default_factory=lambda: np.zeros(0))
    timesteps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 0.5
    sigmas: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def T(self) -> int:
        return len(self.betas) if self.kind == DDPM_LINEAR else len(self.sigmas)

    def alpha_bar(self, t):
        """alpha_bar at index t (scalar or array), with alpha_bar(0) = 1."""
        table = np.concatenate(([1.0], self.alpha_bars))
        values = table[np.asarray(t, dtype=np.int64)]
        return float(values) if np.ndim(values) == 0 else values

    def equivalent_sigma(self, t):
        """sigma_t = sqrt((1 - alpha_bar_t) / alpha_bar_t), the EDM noise level of DDPM step t."""
        alpha_bar = np.asarray(self.alpha_bar(t), dtype=np.float64)
        return np.sqrt((1.0 - alpha_bar) / alpha_bar)


def _from_betas(betas: np.ndarray, timesteps: np.ndarray | None = None) -> NoiseSchedule:
    alphas = 1.0 - betas
    if timesteps is None:
        timesteps = np.arange(1, len(betas) + 1, dtype=np.int64)
    return NoiseSchedule(DDPM_LINEAR, betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas), timesteps=timesteps)


def edm_sigmas(sigma_min: float, sigma_max: float, rho: float, steps: int) -> np.ndarray:
    """sigma_i = (sigma_max^(1/rho) + i / (N - 1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho."""
    if steps == 1:
        return np.array([sigma_max], dtype=np.float64)
    ramp = np.arange(steps, dtype=np.float64) / (steps - 1)
    max_inv = sigma_max ** (1.0 / rho)
    min_inv = sigma_min ** (1.0 / rho)
    return (max_inv + ramp * (min_inv - max_inv)) ** rho


def make_schedule(
    kind: str = DDPM_LINEAR,
    T: int = 200,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
    scaled_betas: bool = True,
    betas=None,
    sigma_min: float = 0.002,
    sigma_max: float = 80.0,
    rho: float = 7.0,
    sigma_data: float = 0.5,
    steps: int = 18,
) -> NoiseSchedule:
    """
    Builds a DDPM linear or EDM schedule with every table materialized.

    The linear endpoints are read as the 1000-step reference range and scaled by
    1000 / T when `scaled_betas` is set. Explicit `betas` are used verbatim.

    Raises:
        ConfigurationError: On unknown kinds, betas outside (0, 1) or not strictly
            increasing, or invalid EDM ranges.
    """
    if kind == DDPM_LINEAR:
        if betas is not None:
            betas = np.asarray(betas, dtype=np.float64).reshape(-1)
        else:
            if T < 1:
                raise ConfigurationError(f"Step count T must be at least 1, got {T}")
            scale = REFERENCE_STEPS / T if scaled_betas else 1.0
            betas = np.linspace(beta_min * scale, beta_max * scale, T)
        if betas.size == 0:
            raise ConfigurationError("A schedule needs at least one beta")
        if np.any(betas <= 0) or np.any(betas >= 1):
            logger.error("Betas outside (0, 1): min %s max %s", betas.min(), betas.max())
            raise ConfigurationError(f"Betas must lie in (0, 1), got range [{betas.min()}, {betas.max()}]")
        if np.any(np.diff(betas) <= 0):
            logger.error("Betas are not strictly increasing")
            raise ConfigurationError("Betas must be strictly increasing")
        schedule = _from_betas(betas)
        logger.debug("DDPM schedule T=%d, terminal alpha_bar %.3e", schedule.T, schedule.alpha_bars[-1])
        return schedule

    if kind == EDM:
        if not 0 < sigma_min < sigma_max:
            raise ConfigurationError(f"Need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
        if rho <= 0 or sigma_data <= 0:
            raise ConfigurationError(f"rho and sigma_data must be positive, got {rho}, {sigma_data}")
        if steps < 1:
            raise ConfigurationError(f"EDM grid needs at least one step, got {steps}")
        return NoiseSchedule(
            EDM, sigma_min=sigma_min, sigma_max=sigma_max, rho=rho, sigma_data=sigma_data,
            sigmas=edm_sigmas(sigma_min, sigma_max, rho, steps),
        )

    raise ConfigurationError(f"Unknown schedule kind '{kind}'")


def timestep_sequence(T: int, steps: int) -> np.ndarray:
    """Evenly spaced decreasing indices from T to 1, both included (just T for one step)."""
    if not 1 <= steps <= T:
        raise ConfigurationError(f"Sampling step count must lie in 1..{T}, got {steps}")
    if steps == 1:
        return np.array([T], dtype=np.int64)
    return np.floor(np.linspace(T, 1, steps) + 0.5).astype(np.int64)


def respace(schedule: NoiseSchedule, indices) -> NoiseSchedule:
    """
    Restricts a DDPM schedule to a sub-sequence of its indices.

    beta'_i = 1 - alpha_bar(t_i) / alpha_bar(t_{i-1}) keeps every retained
    alpha_bar unchanged; the new schedule remembers the original timesteps.
    """
    kept = np.sort(np.asarray(indices, dtype=np.int64))
    kept_bars = schedule.alpha_bar(kept)
    previous = np.concatenate(([1.0], kept_bars[:-1]))
    betas = 1.0 - kept_bars / previous
    return _from_betas(betas, timesteps=schedule.timesteps[kept - 1])


##################################################
# Forward processes
##################################################

def _check_t(t, schedule: NoiseSchedule, lowest: int = 1) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < lowest) or np.any(t > schedule.T):
        logger.error("Timestep %s outside %d..%d", t, lowest, schedule.T)
        raise UsageError(f"Timestep must lie in {lowest}..{schedule.T}, got {t}")
    return t


def _per_sample(values, x: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (x.ndim - values.ndim))


def forward_diffuse(x0, eps, t, schedule: NoiseSchedule) -> np.ndarray:
    """
    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

    t is one index or one index per sample along the leading axis.
    """
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise UsageError(f"Noise shape {eps.shape} does not match signal shape {x0.shape}")
    alpha_bar = _per_sample(schedule.alpha_bar(_check_t(t, schedule)), x0)
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps


def edm_noise(x0, eps, sigma) -> np.ndarray:
    """x_sigma = x0 + sigma * eps."""
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise UsageError(f"Noise shape {eps.shape} does not match signal shape {x0.shape}")
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        logger.error("Non-positive noise level %s", sigma)
        raise UsageError(f"Noise level sigma must be positive, got {sigma}")
    return x0 + _per_sample(sigma, x0) * eps


def sample_sigma_train(rng: np.random.Generator, size=None, sigma_min: float = 0.002,
                       sigma_max: float = 80.0, mean: float = -1.2, std: float = 1.2):
    """Training noise levels with ln(sigma) ~ Normal(mean, std), clamped to [sigma_min, sigma_max]."""
    sigma = np.clip(np.exp(rng.normal(mean, std, size)), sigma_min, sigma_max)
    return float(sigma) if size is None else sigma


##################################################
# Reverse steps
##################################################

def ddpm_step(x_t, eps_pred, t: int, schedule: NoiseSchedule, z=None) -> np.ndarray:
    """
    Ancestral update
    x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_t) + sqrt(beta_t) * z.

    No noise is injected at t = 1.
    """
    t = int(_check_t(t, schedule))
    x_t, eps_pred = np.asarray(x_t, dtype=np.float64), np.asarray(eps_pred, dtype=np.float64)
    beta = schedule.betas[t - 1]
    alpha = schedule.alphas[t - 1]
    alpha_bar = schedule.alpha_bars[t - 1]
    mean = (x_t - beta / np.sqrt(1.0 - alpha_bar) * eps_pred) / np.sqrt(alpha)
    if t == 1 or z is None:
        return mean
    return mean + np.sqrt(beta) * np.asarray(z, dtype=np.float64)


def ddim_step(x_t, eps_pred, t: int, t_prev: int, schedule: NoiseSchedule) -> np.ndarray:
    """
    Deterministic update
    x_{t_prev} = sqrt(alpha_bar_{t_prev}) * x0_hat + sqrt(1 - alpha_bar_{t_prev}) * eps_pred,
    with x0_hat from spectral_supervision_target. t_prev = 0 returns x0_hat.
    """
    if not 0 <= t_prev < t <= schedule.T:
        logger.error("DDIM step from %s to %s violates 0 <= t_prev < t <= %d", t, t_prev, schedule.T)
        raise UsageError(f"DDIM step needs 0 <= t_prev < t <= {schedule.T}, got t={t}, t_prev={t_prev}")
    x_t, eps_pred = np.asarray(x_t, dtype=np.float64), np.asarray(eps_pred, dtype=np.float64)
    x0_hat = spectral_supervision_target(x_t, eps_pred, schedule, t).data
    alpha_bar_prev = schedule.alpha_bar(t_prev)
    return np.sqrt(alpha_bar_prev) * x0_hat + np.sqrt(1.0 - alpha_bar_prev) * eps_pred


def edm_euler_step(x, eps_pred, sigma: float, sigma_next: float) -> np.ndarray:
    """
    Probability-flow Euler step x + (sigma_next - sigma) * (x - x0_hat) / sigma,
    with x0_hat = x - sigma * eps_pred.
    """
    if sigma <= 0 or sigma_next < 0 or sigma_next > sigma:
        logger.error("EDM step from sigma %s to %s is not decreasing", sigma, sigma_next)
        raise UsageError(f"EDM step needs sigma > 0 and 0 <= sigma_next <= sigma, got {sigma}, {sigma_next}")
    x, eps_pred = np.asarray(x, dtype=np.float64), np.asarray(eps_pred, dtype=np.float64)
    x0_hat = x - sigma * eps_pred
    return x + (sigma_next - sigma) * (x - x0_hat) / sigma


##################################################
# Samplers
##################################################

@dataclass
class SamplerSpec:
    """
    Attributes:
        kind (str): ddpm, ddim or edm-euler.
        steps (int): Number of reverse steps.
        seed (int): Base seed; trajectory i draws from seed + i.
    """
    kind: str = "ddim"
    steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigurationError(f"Unknown sampler '{self.kind}', expected one of {SAMPLER_KINDS}")
        if self.steps < 1:
            raise ConfigurationError(f"Sampler step count must be at least 1, got {self.steps}")


def _predict(net: DenoiserNet, x: np.ndarray, embedding: Tensor) -> np.ndarray:
    return net(Tensor(x), embedding).data


def _run_ddim(net, schedule, spec, x, rngs):
    indices = timestep_sequence(schedule.T, spec.steps)
    for i, t in enumerate(indices):
        t_prev = int(indices[i + 1]) if i + 1 < len(indices) else 0
        eps = _predict(net, x, embed_time(schedule.timesteps[t - 1], net.embedding))
        x = ddim_step(x, eps, int(t), t_prev, schedule)
    return x


def _run_ddpm(net, schedule, spec, x, rngs):
    if spec.steps < schedule.T:
        schedule = respace(schedule, timestep_sequence(schedule.T, spec.steps))
    for t in range(schedule.T, 0, -1):
        eps = _predict(net, x, embed_time(schedule.timesteps[t - 1], net.embedding))
        z = np.stack([rng.standard_normal(x.shape[1:]) for rng in rngs]) if t > 1 else None
        x = ddpm_step(x, eps, t, schedule, z)
    return x


def _run_edm_euler(net, schedule, spec, x, rngs):
    sigmas = np.append(edm_sigmas(schedule.sigma_min, schedule.sigma_max, schedule.rho, spec.steps), 0.0)
    for sigma, sigma_next in zip(sigmas[:-1], sigmas[1:]):
        eps = _predict(net, x, embed_sigma(sigma, net.embedding))
        x = edm_euler_step(x, eps, float(sigma), float(sigma_next))
    return x


def sample(net: DenoiserNet, schedule: NoiseSchedule, spec: SamplerSpec, n: int,
           shape: tuple[int, ...] | None = None, seed: int | None = None,
           chunk: int | None = None) -> np.ndarray:
    """
    Draws n signals by running the reverse process from pure noise.

    Trajectory i uses its own generator seeded with seed + i for both its initial
    noise and any ancestral noise, so results do not depend on the chunk size.

    Args:
        net (DenoiserNet): The noise predictor.
        schedule (NoiseSchedule): DDPM schedule for ddpm/ddim, EDM schedule for edm-euler.
        spec (SamplerSpec): Sampler kind and step count.
        n (int): Number of samples.
        shape (tuple[int, ...] | None): Signal shape; defaults to the net's.
        seed (int | None): Overrides spec.seed.
        chunk (int | None): Trajectories per net call; defaults to SPDM_EVAL_BATCH.

    Returns:
        np.ndarray: Shape (n, *shape).

    Raises:
        ConfigurationError: If the sampler does not fit the schedule or the step
            count exceeds T for a discrete sampler.
    """
    shape = tuple(shape or net.signal_shape)
    seed = spec.seed if seed is None else seed
    chunk = chunk or env_int("SPDM_EVAL_BATCH", 64)
    if chunk < 1:
        raise ConfigurationError(f"SPDM_EVAL_BATCH must be positive, got {chunk}")
    if n < 0:
        raise UsageError(f"Sample count must be non-negative, got {n}")
    if spec.kind == "edm-euler":
        if schedule.kind != EDM:
            raise ConfigurationError("The edm-euler sampler needs an EDM schedule")
        runner = _run_edm_euler
    else:
        if schedule.kind != DDPM_LINEAR:
            raise ConfigurationError(f"The {spec.kind} sampler needs a DDPM schedule")
        if spec.steps > schedule.T:
            logger.error("Sampler steps %d exceed T=%d", spec.steps, schedule.T)
            raise ConfigurationError(f"Sampler step count {spec.steps} exceeds T={schedule.T}")
        runner = _run_ddim if spec.kind == "ddim" else _run_ddpm

    logger.info("Sampling %d signals with %s, %d steps, seed %d", n, spec.kind, spec.steps, seed)
    start_scale = schedule.sigmas[0] if schedule.kind == EDM else 1.0
    outputs = []
    for begin in range(0, n, chunk):
        rngs = [np.random.default_rng(seed + i) for i in range(begin, min(begin + chunk, n))]
        x = start_scale * np.stack([rng.standard_normal(shape) for rng in rngs])
        outputs.append(runner(net, schedule, spec, x, rngs))
    if not outputs:
        return np.zeros((0,) + shape)
    result = np.concatenate(outputs)
    if not np.all(np.isfinite(result)):
        logger.warning("Sampler produced non-finite values")
    return result
