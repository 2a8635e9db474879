from dataclasses import dataclass, field
import logging
from typing import Callable

import numpy as np

from spectral_diffusion.models.tensor_model import (
    Tensor,
    as_tensor,
    circular_conv,
    matmul,
    reshape,
    silu,
)
from spectral_diffusion.utils.errors import ConfigurationError, NonFiniteGradientError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)


@dataclass
class TimeEmbedding:
    width: int = 32
    base: float = 10000.0

    def __post_init__(self):
        if self.width <= 0 or self.width % 2 != 0:
            raise ConfigurationError(f"Time embedding width must be a positive even integer, got {self.width}")
        if self.base <= 0:
            raise ConfigurationError(f"Time embedding base must be positive, got {self.base}")


def embed_time(t, emb: TimeEmbedding) -> Tensor:
    """
    Sinusoidal embedding of a timestep (or any real-valued conditioning scalar).

    Frequencies are geometrically spaced, w_i = base^(-i / (width / 2)), and the
    output interleaves them: [sin(t w_0), cos(t w_0), sin(t w_1), cos(t w_1), ...].

    Args:
        t (int | float | np.ndarray): A scalar or a batch of shape (batch,).
        emb (TimeEmbedding): Width and frequency base.

    Returns:
        Tensor: Shape (width,) for scalar t, (batch, width) otherwise.
    """
    half = emb.width // 2
    freqs = emb.base ** (-np.arange(half, dtype=np.float64) / half)
    args = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    out = np.empty(args.shape[:-1] + (emb.width,), dtype=np.float64)
    out[..., 0::2] = np.sin(args)
    out[..., 1::2] = np.cos(args)
    return Tensor(out)


def embed_sigma(sigma, emb: TimeEmbedding) -> Tensor:
    """EDM conditioning: embeds ln(sigma)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ConfigurationError("Noise level sigma must be positive to be embedded")
    return embed_time(np.log(sigma), emb)


class DenoiserNet:
    """
    Timestep-conditioned circular-convolution denoiser eps_theta(x_t, t).

    Layer plan: lifting conv (1 -> channels), learned linear map of the time
    embedding added channel-wise, `blocks` residual blocks h + conv(silu(h)),
    then a projection conv (channels -> 1) on silu(h). Works on 1-D or 2-D
    signals; every conv has kernel size 3 per axis and wraps around.

    Attributes:
        signal_shape (tuple[int, ...]): Spatial shape of one signal.
        channels (int): Hidden channel width.
        blocks (int): Number of residual blocks.
        embedding (TimeEmbedding): Conditioning embedding configuration.
        parameters (dict[str, Tensor]): Named parameters in a fixed order.
    """

    def __init__(
        self,
        signal_shape: tuple[int, ...],
        channels: int = 32,
        blocks: int = 3,
        embedding: TimeEmbedding | None = None,
        seed: int = 0,
        zero_projection: bool = True,
    ):
        self.signal_shape = tuple(int(s) for s in signal_shape)
        if len(self.signal_shape) not in (1, 2) or any(s < 1 for s in self.signal_shape):
            raise ConfigurationError(f"Signal shape must be 1-D or 2-D with positive sizes, got {signal_shape}")
        if channels < 1:
            raise ConfigurationError(f"Channel width must be positive, got {channels}")
        if blocks < 0:
            raise ConfigurationError(f"Residual block count must be non-negative, got {blocks}")
        self.channels = channels
        self.blocks = blocks
        self.embedding = embedding or TimeEmbedding()
        self.parameters: dict[str, Tensor] = {}

        rng = np.random.default_rng(seed)
        kernel = (3,) * len(self.signal_shape)
        self._add_conv("lift", rng, 1, channels, kernel)
        bound = 1.0 / np.sqrt(self.embedding.width)
        self._add("time.weight", rng.uniform(-bound, bound, (self.embedding.width, channels)))
        self._add("time.bias", np.zeros(channels))
        for i in range(blocks):
            self._add_conv(f"block{i}.conv", rng, channels, channels, kernel)
        self._add_conv("proj", rng, channels, 1, kernel, zero=zero_projection)
        logger.debug("Built denoiser with %d parameter tensors", len(self.parameters))

    def _add(self, name: str, values: np.ndarray) -> None:
        self.parameters[name] = Tensor(values, requires_grad=True, name=name)

    def _add_conv(self, name, rng, in_channels, out_channels, kernel, zero=False) -> None:
        shape = (out_channels, in_channels) + kernel
        if zero:
            weight = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(in_channels * int(np.prod(kernel)))
            weight = rng.uniform(-bound, bound, shape)
        self._add(f"{name}.weight", weight)
        self._add(f"{name}.bias", np.zeros(out_channels))

    ##################################################
    # Parameters
    ##################################################

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.parameters.items())

    def zero_grad(self) -> None:
        for param in self.parameters.values():
            param.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.parameters.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """
        Replaces every parameter value.

        Raises:
            ConfigurationError: If names or shapes do not match this net's layer plan.
        """
        if set(state) != set(self.parameters):
            missing = sorted(set(self.parameters) - set(state))
            extra = sorted(set(state) - set(self.parameters))
            logger.error("Parameter mismatch: missing %s, unexpected %s", missing, extra)
            raise ConfigurationError(f"Parameter mismatch: missing {missing}, unexpected {extra}")
        for name, values in state.items():
            param = self.parameters[name]
            if tuple(values.shape) != param.shape:
                raise ConfigurationError(
                    f"Parameter '{name}' has shape {tuple(values.shape)}, expected {param.shape}"
                )
            param.data = np.array(values, dtype=np.float64)

    ##################################################
    # Forward pass
    ##################################################

    def __call__(self, x, t_embed) -> Tensor:
        return self.forward(x, t_embed)

    def forward(self, x, t_embed) -> Tensor:
        """
        Predicts the noise in a batch of signals.

        Args:
            x: Shape (batch, *signal_shape).
            t_embed: Shape (width,) or (batch, width).

        Returns:
            Tensor: Same shape as x.

        Raises:
            ConfigurationError: If x or t_embed do not match the configured shapes.
        """
        x, t_embed = as_tensor(x), as_tensor(t_embed)
        if x.ndim != len(self.signal_shape) + 1 or x.shape[1:] != self.signal_shape:
            logger.error("Input shape %s does not match signal shape %s", x.shape, self.signal_shape)
            raise ConfigurationError(
                f"Input has shape {x.shape}, expected (batch, {', '.join(map(str, self.signal_shape))})"
            )
        batch = x.shape[0]
        if t_embed.ndim == 1:
            t_embed = Tensor(np.broadcast_to(t_embed.data, (batch, t_embed.shape[0])))
        if t_embed.shape != (batch, self.embedding.width):
            logger.error("Time embedding shape %s does not match width %d", t_embed.shape, self.embedding.width)
            raise ConfigurationError(
                f"Time embedding has shape {t_embed.shape}, expected ({batch}, {self.embedding.width})"
            )

        p = self.parameters
        ones = (1,) * len(self.signal_shape)
        h = reshape(x, (batch, 1) + self.signal_shape)
        h = circular_conv(h, p["lift.weight"], p["lift.bias"])
        time = matmul(t_embed, p["time.weight"]) + p["time.bias"]
        h = h + reshape(time, (batch, self.channels) + ones)
        for i in range(self.blocks):
            h = h + circular_conv(silu(h), p[f"block{i}.conv.weight"], p[f"block{i}.conv.bias"])
        out = circular_conv(silu(h), p["proj.weight"], p["proj.bias"])
        return reshape(out, (batch,) + self.signal_shape)


##################################################
# Optimizer
##################################################

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """
    One bias-corrected Adam update, applied in place to the parameter values.

    Args:
        params (dict[str, Tensor]): Parameters to update.
        grads (dict[str, np.ndarray | None]): Gradient per parameter name; None counts as zero.
        state (AdamState): Moment estimates and step counter, updated in place.

    Returns:
        AdamState: The same state object, with the step counter incremented.

    Raises:
        NonFiniteGradientError: If any gradient holds NaN or inf. No parameter is touched.
    """
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            logger.error("Non-finite gradient for parameter %s; step aborted", name)
            raise NonFiniteGradientError(name)

    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        m = state.m.get(name, np.zeros_like(param.data))
        v = state.v.get(name, np.zeros_like(param.data))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        param.data = param.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state


class AdamOptimizer:
    """Adam over a net's named parameters, reading gradients from each Tensor."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        grads = {name: param.grad for name, param in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


##################################################
# Gradient checking
##################################################

@dataclass
class GradCheckReport:
    deviations: dict[str, float]
    passed: bool
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.deviations.values(), default=0.0)


def _compare(name, analytic, numeric, tolerance, atol, deviations) -> bool:
    diff = np.abs(analytic - numeric)
    ok = bool(np.all(diff <= atol + tolerance * np.abs(numeric)))
    mask = np.abs(analytic) > 1e-8
    if np.any(mask):
        scale = np.maximum(np.abs(analytic[mask]), np.abs(numeric[mask]))
        deviations[name] = float(np.max(diff[mask] / scale))
    else:
        deviations[name] = float(np.max(diff, initial=0.0))
    if not ok:
        logger.warning("Gradient check failed for %s (max abs deviation %.3e)", name, float(np.max(diff)))
    return ok


def _central_difference(evaluate: Callable[[], float], values: np.ndarray, eps: float) -> np.ndarray:
    numeric = np.zeros_like(values)
    flat = values.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = evaluate()
        flat[i] = original - eps
        minus = evaluate()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return numeric


def grad_check(
    net: DenoiserNet,
    loss_fn: Callable[[Tensor], Tensor],
    x,
    t_embed,
    tolerance: float = 1e-4,
    eps: float = 1e-5,
    atol: float = 1e-7,
) -> GradCheckReport:
    """
    Compares autodiff parameter gradients against central finite differences.

    A coordinate passes when |analytic - numeric| <= atol + tolerance * |numeric|.
    The reported deviation per parameter is the max relative error
    |a - n| / max(|a|, |n|) over coordinates with |a| > 1e-8.

    Args:
        net (DenoiserNet): The net whose parameters are checked.
        loss_fn (Callable): Maps the net output to a 1-element Tensor.
        x, t_embed: Forward-pass inputs.

    Returns:
        GradCheckReport: Per-parameter deviations and the overall verdict.
    """
    net.zero_grad()
    loss_fn(net(x, t_embed)).backward()
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for name, p in net.parameters.items()}

    def evaluate() -> float:
        return loss_fn(net(x, t_embed)).item()

    deviations: dict[str, float] = {}
    passed = True
    for name, param in net.parameters.items():
        numeric = _central_difference(evaluate, param.data, eps)
        passed &= _compare(name, analytic[name], numeric, tolerance, atol, deviations)
    net.zero_grad()
    return GradCheckReport(deviations=deviations, passed=passed, tolerance=tolerance)


def input_grad_check(
    fn: Callable[..., Tensor],
    inputs: list[np.ndarray],
    tolerance: float = 1e-4,
    eps: float = 1e-5,
    atol: float = 1e-7,
) -> GradCheckReport:
    """
    Same harness as grad_check, for gradients of fn with respect to its inputs.

    fn receives one Tensor per input array and returns a 1-element Tensor.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True, name=f"input{i}") for i, a in enumerate(arrays)]
    fn(*leaves).backward()

    deviations: dict[str, float] = {}
    passed = True
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[i])

        def evaluate() -> float:
            return fn(*[Tensor(a) for a in arrays]).item()

        numeric = _central_difference(evaluate, arrays[i], eps)
        passed &= _compare(f"input{i}", analytic, numeric, tolerance, atol, deviations)
    return GradCheckReport(deviations=deviations, passed=passed, tolerance=tolerance)
