"""Property suites behind the `verify` command."""
from dataclasses import dataclass, field
import logging
from typing import Callable

import numpy as np

from spectral_diffusion.models.denoiser_model import DenoiserNet, TimeEmbedding, embed_sigma, embed_time, grad_check
from spectral_diffusion.models.diffusion_model import (
    DDPM_LINEAR,
    ddim_step,
    edm_noise,
    forward_diffuse,
    make_schedule,
    timestep_sequence,
)
from spectral_diffusion.models.losses_model import (
    SpectralLossKind,
    WAVELET,
    ddpm_loss,
    edm_loss,
    edm_supervision_target,
    fourier_amp_phase_loss,
    fourier_amplitude_loss,
    spectral_supervision_target,
    total_loss,
    wavelet_loss,
)
from spectral_diffusion.models.transforms_model import dft, dwt, filter_bank, idwt
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)

PARSEVAL_SHAPES = ((8,), (16,), (16, 16), (12, 20))
GRID_SIZES = (4, 6, 8, 12, 16)
DFT_ORACLE_SHAPES = ((4,), (7,), (8,), (12,), (15,), (16,), (6, 10), (5, 9)) + tuple(
    (h, w) for h in GRID_SIZES for w in GRID_SIZES
)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    deviation: float
    bound: float

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: worst deviation {self.deviation:.3e} (bound {self.bound:.1e})"


@dataclass
class VerifyReport:
    results: list[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def lines(self) -> list[str]:
        return [result.line() for result in self.results]


def _result(name: str, deviation: float, bound: float) -> PropertyResult:
    passed = bool(np.isfinite(deviation) and deviation <= bound)
    if not passed:
        logger.warning("Property %s failed: %.3e > %.1e", name, deviation, bound)
    return PropertyResult(name, passed, float(deviation), bound)


##################################################
# Transforms
##################################################

def check_parseval(rng: np.random.Generator, trials: int = 1000) -> PropertyResult:
    """||x||^2 = ||X||^2 / N over random signals of several shapes."""
    worst = 0.0
    per_shape = trials // len(PARSEVAL_SHAPES)
    for shape in PARSEVAL_SHAPES:
        x = rng.standard_normal((per_shape,) + shape)
        spectrum = dft(x, len(shape))
        energy = np.sum(x ** 2, axis=spectrum.axes)
        spectral = np.sum(np.abs(spectrum.coefficients) ** 2, axis=spectrum.axes) / np.prod(shape)
        worst = max(worst, float(np.max(np.abs(energy - spectral) / energy)))
    return _result("parseval max relative error", worst, 1e-9)


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(N^2) DFT of a 1-D or 2-D signal via explicit twiddle matrices."""
    out = x.astype(np.complex128)
    for axis in range(x.ndim):
        n = x.shape[axis]
        k = np.arange(n)
        twiddle = np.exp(-2j * np.pi * np.outer(k, k) / n)
        out = np.moveaxis(np.tensordot(twiddle, out, axes=([1], [axis])), 0, axis)
    return out


def check_dft_oracle(rng: np.random.Generator) -> PropertyResult:
    worst = 0.0
    for shape in DFT_ORACLE_SHAPES:
        x = rng.standard_normal(shape)
        got = dft(x).coefficients
        want = naive_dft(x)
        worst = max(worst, float(np.max(np.abs(got - want)) / max(1.0, np.max(np.abs(want)))))
    return _result("dft vs naive oracle", worst, 1e-10)


def check_reconstruction(rng: np.random.Generator, wavelet: str, bound: float, trials: int = 1000) -> PropertyResult:
    bank = filter_bank(wavelet)
    worst = 0.0
    cases = [((32,), levels) for levels in (1, 2, 3)] + [((16, 16), levels) for levels in (1, 2, 3)]
    per_case = trials // len(cases)
    for shape, levels in cases:
        x = rng.standard_normal((per_case,) + shape)
        rebuilt = idwt(dwt(x, bank, levels, len(shape)), bank)
        worst = max(worst, float(np.max(np.abs(rebuilt - x))))
    return _result(f"{wavelet} reconstruction max abs error", worst, bound)


##################################################
# Gradients
##################################################

def gradient_suite(rng: np.random.Generator, size: int = 8, tolerance: float = 1e-4) -> list[PropertyResult]:
    """
    Parameter gradients of every objective against central differences, through a
    lifting + projection net on random size x size inputs.
    """
    schedule = make_schedule(DDPM_LINEAR)
    embedding = TimeEmbedding(8)
    net = DenoiserNet((size, size), channels=3, blocks=0, embedding=embedding, seed=int(rng.integers(1 << 30)),
                      zero_projection=False)
    batch = 2
    x0 = rng.standard_normal((batch, size, size))
    eps = rng.standard_normal((batch, size, size))
    t = np.array([40, 120])
    x_t = forward_diffuse(x0, eps, t, schedule)
    sigma = np.array([0.4, 1.3])
    x_sigma = edm_noise(x0, eps, sigma)

    def x0_hat(out):
        return spectral_supervision_target(x_t, out, schedule, t)

    haar = SpectralLossKind(WAVELET, wavelet="haar", levels=2)
    bior13 = SpectralLossKind(WAVELET, wavelet="bior13", levels=2)
    cases: list[tuple[str, np.ndarray, object, Callable]] = [
        ("ddpm loss", x_t, embed_time(t, embedding), lambda out: ddpm_loss(eps, out)),
        ("edm loss", x_sigma, embed_sigma(sigma, embedding), lambda out: edm_loss(eps, out, sigma)),
        ("amplitude loss", x_t, embed_time(t, embedding), lambda out: fourier_amplitude_loss(x0, x0_hat(out))),
        ("amplitude-phase loss", x_t, embed_time(t, embedding), lambda out: fourier_amp_phase_loss(x0, x0_hat(out))),
        ("wavelet loss", x_sigma, embed_sigma(sigma, embedding),
         lambda out: wavelet_loss(x0, edm_supervision_target(x_sigma, out, sigma), haar)),
        ("bior1.3 wavelet loss", x_t, embed_time(t, embedding), lambda out: wavelet_loss(x0, x0_hat(out), bior13)),
    ]
    results = []
    for name, inputs, emb, loss_fn in cases:
        report = grad_check(net, loss_fn, inputs, emb, tolerance=tolerance)
        results.append(PropertyResult(f"gradient {name}", report.passed, report.worst, tolerance))
    return results


##################################################
# Loss identities
##################################################

def check_loss_identities(rng: np.random.Generator, trials: int = 1000) -> list[PropertyResult]:
    x = rng.standard_normal((4, 16, 16))
    kinds = {
        "amp": lambda a, b: fourier_amplitude_loss(a, b),
        "amp-phase": lambda a, b: fourier_amp_phase_loss(a, b),
        "haar": lambda a, b: wavelet_loss(a, b, SpectralLossKind(WAVELET, wavelet="haar", levels=2)),
        "bior13": lambda a, b: wavelet_loss(a, b, SpectralLossKind(WAVELET, wavelet="bior13", levels=2)),
    }
    zero = max(abs(fn(x, x.copy()).item()) for fn in kinds.values())

    shifted = np.roll(x, (3, -5), axis=(1, 2))
    shift = abs(fourier_amplitude_loss(x, shifted).item()) / np.sum(np.abs(np.fft.fft2(x)))

    denoise = rng.standard_normal() ** 2
    baseline = total_loss(denoise, rng.standard_normal() ** 2, 0.0).total
    bitwise = 0.0 if baseline == denoise else abs(baseline - denoise)

    a = rng.standard_normal((trials, 8))
    b = rng.standard_normal((trials, 8))
    amp = fourier_amplitude_loss(a, b, reduction="none").data
    amp_phase = fourier_amp_phase_loss(a, b, reduction="none").data
    shortfall = float(np.max(np.maximum(amp - amp_phase, 0.0)))

    return [
        _result("spectral losses vanish at equality", zero, 1e-12),
        _result("amplitude loss shift invariance (relative)", shift, 1e-9),
        _result("lambda = 0 recovers the baseline bitwise", bitwise, 0.0),
        _result("amplitude-phase loss dominates amplitude loss", shortfall, 0.0),
    ]


##################################################
# Diffusion algebra
##################################################

def check_ddim_consistency(rng: np.random.Generator, steps: int = 50) -> list[PropertyResult]:
    schedule = make_schedule(DDPM_LINEAR)
    x0 = rng.standard_normal((3, 16, 16))
    eps = rng.standard_normal((3, 16, 16))

    t = rng.integers(1, schedule.T + 1, size=3)
    x_t = forward_diffuse(x0, eps, t, schedule)
    inversion = float(np.max(np.abs(spectral_supervision_target(x_t, eps, schedule, t).data - x0)))

    indices = timestep_sequence(schedule.T, steps)
    x = forward_diffuse(x0, eps, int(indices[0]), schedule)
    drift = 0.0
    for i, step in enumerate(indices):
        estimate = spectral_supervision_target(x, eps, schedule, int(step)).data
        drift = max(drift, float(np.max(np.abs(estimate - x0))))
        t_prev = int(indices[i + 1]) if i + 1 < len(indices) else 0
        x = ddim_step(x, eps, int(step), t_prev, schedule)
    drift = max(drift, float(np.max(np.abs(x - x0))))
    return [
        _result("x0 estimate inverts the forward process", inversion, 1e-12),
        _result("ddim perfect-predictor x0 drift", drift, 1e-10),
    ]


def check_forward_statistics(rng: np.random.Generator, draws: int = 100_000) -> list[PropertyResult]:
    schedule = make_schedule(DDPM_LINEAR)
    t = schedule.T // 4
    x0 = rng.standard_normal(draws)
    x_t = forward_diffuse(x0, rng.standard_normal(draws), t, schedule)
    alpha_bar = schedule.alpha_bar(t)
    expected = alpha_bar * np.var(x0) + (1.0 - alpha_bar)
    variance = abs(np.var(x_t) / expected - 1.0)

    sigma = 0.7
    noise = edm_noise(np.zeros(draws), rng.standard_normal(draws), sigma)
    spread = abs(np.std(noise) / sigma - 1.0)
    return [
        _result("forward marginal variance (relative)", variance, 0.02),
        _result("edm noise std (relative)", spread, 0.01),
    ]


def run_verify(seed: int = 0) -> VerifyReport:
    """Runs every suite with generators derived from one seed."""
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(8)]
    report = VerifyReport()
    report.results.append(check_parseval(streams[0]))
    report.results.append(check_dft_oracle(streams[1]))
    report.results.append(check_reconstruction(streams[2], "haar", 1e-10))
    report.results.append(check_reconstruction(streams[3], "bior13", 1e-9))
    report.results.extend(gradient_suite(streams[4]))
    report.results.extend(check_loss_identities(streams[5]))
    report.results.extend(check_ddim_consistency(streams[6]))
    report.results.extend(check_forward_statistics(streams[7]))
    logger.info("Verification finished: %d properties, %s", len(report.results),
                "all passed" if report.passed else "failures present")
    return report
