from dataclasses import dataclass, field, fields
import logging
from pathlib import Path
from types import UnionType

import numpy as np

from spectral_diffusion.models.denoiser_model import (
    AdamOptimizer,
    DenoiserNet,
    TimeEmbedding,
    embed_sigma,
    embed_time,
)
from spectral_diffusion.models.diffusion_model import (
    DDPM_LINEAR,
    EDM,
    NoiseSchedule,
    SamplerSpec,
    edm_noise,
    forward_diffuse,
    make_schedule,
    sample,
    sample_sigma_train,
)
from spectral_diffusion.models.losses_model import (
    SPECTRAL_CHOICES,
    LossBreakdown,
    SpectralLossKind,
    ddpm_loss,
    edm_loss,
    edm_supervision_target,
    edm_weight,
    spectral_loss,
    spectral_supervision_target,
    total_loss,
)
from spectral_diffusion.models.spectra_model import evaluate_spectra
from spectral_diffusion.models.tensor_model import Tensor
from spectral_diffusion.utils.checkpoint_utils import Checkpoint, save_checkpoint
from spectral_diffusion.utils.config_utils import format_key_values, parse_bool, parse_key_values
from spectral_diffusion.utils.csv_utils import write_metrics, write_spectra
from spectral_diffusion.utils.errors import ConfigurationError, DivergenceError, UsageError
from spectral_diffusion.utils.logger import configure_logger
from spectral_diffusion.utils.pgm_utils import read_pgm_dir


logger = logging.getLogger(__name__)
configure_logger(logger)

LAMBDA_MODES = ("scalar", "edm-weighted")

# Used when a config omits `lambda`. Each keeps lambda * L_S near a few percent
# of the denoise term at step 0 on 32x32 checkerboards with the default schedule,
# where x0_hat is amplified up to ~150x at t = T.
TUNED_LAMBDA = {
    "none": 0.0,
    "amp": 5e-5,
    "amp-phase": 5e-8,
    "haar": 2e-3,
    "bior13": 4e-3,
}


@dataclass
class TrainConfig:
    """
    One training run. Field order is the config echo order; the `lam` field
    is spelled `lambda` in config files and defaults to TUNED_LAMBDA[spectral].
    """
    formulation: str = "ddpm"
    spectral: str = "none"
    lam: float | None = None
    lambda_mode: str = "scalar"
    steps: int = 3000
    batch: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    T: int = 200
    beta_min: float = 1e-4
    beta_max: float = 0.02
    scaled_betas: bool = True
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 0.5
    wavelet_levels: int = 2
    gamma_approx: float = 1.0
    gamma_detail: float = 1.0
    channels: int = 32
    blocks: int = 3
    emb_width: int = 32
    eval_every: int = 500
    eval_samples: int = 0
    eval_steps: int = 50
    seed: int = 0
    data_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.formulation not in ("ddpm", "edm"):
            raise ConfigurationError(f"Key 'formulation' must be ddpm or edm, got '{self.formulation}'")
        if self.spectral not in SPECTRAL_CHOICES:
            raise ConfigurationError(f"Key 'spectral' must be one of {SPECTRAL_CHOICES}, got '{self.spectral}'")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ConfigurationError(f"Key 'lambda_mode' must be one of {LAMBDA_MODES}, got '{self.lambda_mode}'")
        if self.lam is None:
            self.lam = TUNED_LAMBDA[self.spectral]
        if self.lam < 0:
            raise ConfigurationError(f"Key 'lambda' must be non-negative, got {self.lam}")
        for key in ("steps", "batch", "T", "wavelet_levels", "channels", "emb_width", "eval_steps"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"Key '{key}' must be at least 1, got {getattr(self, key)}")
        for key in ("blocks", "eval_every", "eval_samples"):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"Key '{key}' must be non-negative, got {getattr(self, key)}")
        if self.lr <= 0 or self.adam_eps <= 0:
            raise ConfigurationError(f"Keys 'lr' and 'adam_eps' must be positive, got {self.lr}, {self.adam_eps}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")

    @property
    def spectral_kind(self) -> SpectralLossKind | None:
        return SpectralLossKind.from_choice(
            self.spectral, self.wavelet_levels, self.gamma_approx, self.gamma_detail,
        )

    @staticmethod
    def key_of(name: str) -> str:
        return "lambda" if name == "lam" else name

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "TrainConfig":
        """
        Builds a config from raw key = value strings.

        Raises:
            ConfigurationError: On unknown keys or unparseable values.
        """
        by_key = {cls.key_of(f.name): f for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in by_key:
                logger.error("Unknown config key '%s'", key)
                raise ConfigurationError(f"Unknown config key '{key}'")
            spec = by_key[key]
            kwargs[spec.name] = _parse_value(key, raw, spec.type)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        return cls.from_mapping(parse_key_values(text, source))

    def echo(self) -> str:
        pairs = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            elif value is None:
                value = "none"
            pairs.append((self.key_of(f.name), value))
        return format_key_values(pairs)


def _parse_value(key: str, raw: str, kind):
    try:
        if kind is bool:
            return parse_bool(raw, key)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if isinstance(kind, UnionType):
            if raw.strip().lower() in ("", "none"):
                return None
            return _parse_value(key, raw, next(t for t in kind.__args__ if t is not type(None)))
        return raw
    except ValueError as e:
        if isinstance(e, ConfigurationError):
            raise
        logger.error("Key '%s' has an invalid value '%s'", key, raw)
        raise ConfigurationError(f"Key '{key}' has an invalid value '{raw}'") from e


def build_schedule(cfg: TrainConfig) -> NoiseSchedule:
    if cfg.formulation == "ddpm":
        return make_schedule(
            DDPM_LINEAR, T=cfg.T, beta_min=cfg.beta_min, beta_max=cfg.beta_max, scaled_betas=cfg.scaled_betas,
        )
    return make_schedule(
        EDM, sigma_min=cfg.sigma_min, sigma_max=cfg.sigma_max, rho=cfg.rho, sigma_data=cfg.sigma_data,
        steps=cfg.eval_steps,
    )


def build_net(cfg: TrainConfig, signal_shape: tuple[int, ...], seed=None) -> DenoiserNet:
    return DenoiserNet(
        signal_shape, channels=cfg.channels, blocks=cfg.blocks,
        embedding=TimeEmbedding(cfg.emb_width), seed=cfg.seed if seed is None else seed,
    )


def default_sampler(cfg: TrainConfig, steps: int | None = None, seed: int = 0) -> SamplerSpec:
    steps = cfg.eval_steps if steps is None else steps
    if cfg.formulation == "ddpm":
        return SamplerSpec("ddim", min(steps, cfg.T), seed)
    return SamplerSpec("edm-euler", steps, seed)


##################################################
# Training
##################################################

@dataclass
class TrainingBatch:
    """One step's draws: clean signals, noise and the timestep or noise level per sample."""
    x0: np.ndarray
    eps: np.ndarray
    t: np.ndarray | None = None
    sigma: np.ndarray | None = None


@dataclass
class TrainResult:
    config: TrainConfig
    net: DenoiserNet
    schedule: NoiseSchedule
    history: list[tuple[int, LossBreakdown]] = field(default_factory=list)
    checkpoint: Checkpoint | None = None


class DiffusionTrainer:
    """
    Runs the combined objective L + lambda * L_S with Adam.

    Per step the generator draws, in order: batch indices, noise, then t
    (uniform over 1..T) or sigma (log-normal).
    """

    def __init__(self, cfg: TrainConfig, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim not in (2, 3) or data.shape[0] == 0:
            logger.error("Training data has shape %s", data.shape)
            raise UsageError(f"Training data must be a non-empty batch of 1-D or 2-D signals, got shape {data.shape}")
        self.cfg = cfg
        self.data = data
        self.kind = cfg.spectral_kind
        self.schedule = build_schedule(cfg)
        net_seed, data_seed = np.random.SeedSequence(cfg.seed).spawn(2)
        self.net = build_net(cfg, data.shape[1:], seed=net_seed)
        self.optimizer = AdamOptimizer(self.net.parameters, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.rng = np.random.default_rng(data_seed)
        self.history: list[tuple[int, LossBreakdown]] = []

    def draw_batch(self, rng: np.random.Generator) -> TrainingBatch:
        indices = rng.integers(0, self.data.shape[0], size=self.cfg.batch)
        x0 = self.data[indices]
        eps = rng.standard_normal(x0.shape)
        if self.cfg.formulation == "ddpm":
            return TrainingBatch(x0, eps, t=rng.integers(1, self.schedule.T + 1, size=self.cfg.batch))
        sigma = sample_sigma_train(rng, self.cfg.batch, self.cfg.sigma_min, self.cfg.sigma_max)
        return TrainingBatch(x0, eps, sigma=sigma)

    def evaluate(self, batch: TrainingBatch) -> LossBreakdown:
        """Builds the objective graph for one batch without updating anything."""
        cfg = self.cfg
        if cfg.formulation == "ddpm":
            x_t = forward_diffuse(batch.x0, batch.eps, batch.t, self.schedule)
            eps_pred = self.net(Tensor(x_t), embed_time(batch.t, self.net.embedding))
            denoise = ddpm_loss(batch.eps, eps_pred)
        else:
            x_t = edm_noise(batch.x0, batch.eps, batch.sigma)
            eps_pred = self.net(Tensor(x_t), embed_sigma(batch.sigma, self.net.embedding))
            denoise = edm_loss(batch.eps, eps_pred, batch.sigma, cfg.sigma_data)

        if self.kind is None:
            return total_loss(denoise, 0.0, 0.0)

        if cfg.formulation == "ddpm":
            x0_hat = spectral_supervision_target(x_t, eps_pred, self.schedule, batch.t)
            sigma = self.schedule.equivalent_sigma(batch.t)
        else:
            x0_hat = edm_supervision_target(x_t, eps_pred, batch.sigma)
            sigma = batch.sigma

        if cfg.lambda_mode == "scalar":
            return total_loss(denoise, spectral_loss(self.kind, batch.x0, x0_hat), cfg.lam)
        per_sample = spectral_loss(self.kind, batch.x0, x0_hat, reduction="none")
        return total_loss(denoise, per_sample, cfg.lam * edm_weight(sigma, cfg.sigma_data))

    def step(self, step_index: int) -> LossBreakdown:
        """
        Raises:
            DivergenceError: If any logged quantity is not finite.
        """
        batch = self.draw_batch(self.rng)
        self.net.zero_grad()
        breakdown = self.evaluate(batch)
        if not breakdown.is_finite():
            logger.error("Non-finite loss at step %d: %s", step_index, breakdown)
            raise DivergenceError(step_index, breakdown)
        breakdown.objective.backward()
        self.optimizer.step()
        breakdown.objective = None
        self.history.append((step_index, breakdown))
        logger.debug("step %d total %.6e", step_index, breakdown.total)
        return breakdown

    def checkpoint(self) -> Checkpoint:
        shape = ",".join(str(s) for s in self.data.shape[1:])
        echo = self.cfg.echo() + format_key_values([("signal_shape", shape)])
        return Checkpoint(echo, self.net.state())

    def write_spectral_eval(self, step_index: int, out_dir: Path) -> None:
        if self.data.ndim != 3:
            logger.info("Skipping spectral evaluation for 1-D signals")
            return
        spec = default_sampler(self.cfg, seed=self.cfg.seed)
        generated = sample(self.net, self.schedule, spec, self.cfg.eval_samples)
        metrics = evaluate_spectra(generated, self.data)
        write_spectra(out_dir / f"spectra_step{step_index}.csv", metrics)

    def run(self, out_dir=None) -> TrainResult:
        """
        Trains for cfg.steps steps. With an output directory, writes metrics.csv,
        ckpt_step{N}.spdm every eval_every steps, spectra_step{N}.csv when
        eval_samples > 0, and ckpt_final.spdm.
        """
        cfg = self.cfg
        out_dir = Path(out_dir) if out_dir is not None else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(
            "Training %s with spectral=%s lambda=%s (%s) for %d steps",
            cfg.formulation, cfg.spectral, cfg.lam, cfg.lambda_mode, cfg.steps,
        )
        try:
            for step_index in range(cfg.steps):
                self.step(step_index)
                done = step_index + 1
                if out_dir is not None and cfg.eval_every and done % cfg.eval_every == 0 and done < cfg.steps:
                    save_checkpoint(self.checkpoint(), out_dir / f"ckpt_step{done}.spdm")
                    if cfg.eval_samples:
                        self.write_spectral_eval(done, out_dir)
        finally:
            if out_dir is not None:
                write_metrics(out_dir / "metrics.csv", self.history)

        checkpoint = self.checkpoint()
        if out_dir is not None:
            save_checkpoint(checkpoint, out_dir / "ckpt_final.spdm")
            if cfg.eval_samples:
                self.write_spectral_eval(cfg.steps, out_dir)
        first, last = self.history[0][1], self.history[-1][1]
        logger.info("Denoise loss %.6e -> %.6e", first.denoise, last.denoise)
        return TrainResult(cfg, self.net, self.schedule, self.history, checkpoint)


def load_training_data(cfg: TrainConfig) -> np.ndarray:
    """
    Raises:
        ConfigurationError: If data_dir is unset or missing.
    """
    if not cfg.data_dir:
        logger.error("Config key 'data_dir' is not set")
        raise ConfigurationError("Config key 'data_dir' is required when no dataset is given")
    if not Path(cfg.data_dir).is_dir():
        logger.error("Config key 'data_dir' points to a missing directory: %s", cfg.data_dir)
        raise ConfigurationError(f"Config key 'data_dir' points to a missing directory: {cfg.data_dir}")
    images, _ = read_pgm_dir(cfg.data_dir)
    return images


def train(cfg: TrainConfig, data=None, out_dir=None) -> TrainResult:
    """Trains on `data`, or on the PGM directory named by cfg.data_dir."""
    if data is None:
        data = load_training_data(cfg)
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    return DiffusionTrainer(cfg, data).run(out_dir)


def restore(checkpoint: Checkpoint) -> tuple[TrainConfig, DenoiserNet, NoiseSchedule]:
    """
    Rebuilds the config, net and schedule a checkpoint was written from.

    Raises:
        ConfigurationError: If the echo is not a valid config or the tensors do not fit the net.
    """
    mapping = parse_key_values(checkpoint.config_echo, "<checkpoint>")
    raw_shape = mapping.pop("signal_shape", None)
    if raw_shape is None:
        raise ConfigurationError("Checkpoint echo lacks 'signal_shape'")
    try:
        signal_shape = tuple(int(s) for s in raw_shape.split(","))
    except ValueError as e:
        raise ConfigurationError(f"Invalid signal_shape '{raw_shape}' in checkpoint") from e
    cfg = TrainConfig.from_mapping(mapping)
    net = build_net(cfg, signal_shape)
    net.load_state(checkpoint.tensors)
    return cfg, net, build_schedule(cfg)
