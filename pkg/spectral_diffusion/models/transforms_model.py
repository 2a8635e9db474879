from dataclasses import dataclass, field
from functools import lru_cache
import logging

import numpy as np

from spectral_diffusion.models.tensor_model import Tensor, apply_matrix, as_tensor, getitem
from spectral_diffusion.utils.errors import ConfigurationError, UsageError, ValidationError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)

# Bins whose amplitude is below this fraction of the signal's peak amplitude
# carry no phase information.
PHASE_AMPLITUDE_FLOOR = 1e-12


def _signal_axes(array: np.ndarray, ndim: int | None) -> tuple[int, ...]:
    ndim = array.ndim if ndim is None else ndim
    if ndim not in (1, 2) or ndim > array.ndim:
        raise UsageError(f"Signals must be 1-D or 2-D, got ndim={ndim} for an array of shape {array.shape}")
    return tuple(range(array.ndim - ndim, array.ndim))


def _phase_of(coefficients: np.ndarray, amplitude: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    phase = np.arctan2(coefficients.imag, coefficients.real)
    phase[phase == -np.pi] = np.pi
    peak = np.max(amplitude, axis=axes, keepdims=True) if amplitude.size else amplitude
    phase[amplitude <= PHASE_AMPLITUDE_FLOOR * peak] = 0.0
    return phase


##################################################
# Fourier analysis
##################################################

@dataclass
class Spectrum:
    """
    Unnormalized DFT coefficients of a real signal (or a batch of them).

    Attributes:
        coefficients (np.ndarray): Complex coefficients, same grid as the signal.
        ndim (int): Number of trailing signal axes (1 or 2).
    """
    coefficients: np.ndarray
    ndim: int

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.coefficients.ndim - self.ndim, self.coefficients.ndim))

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.coefficients)

    @property
    def phase(self) -> np.ndarray:
        return _phase_of(self.coefficients, self.amplitude, self.axes)


def dft(x, ndim: int | None = None) -> Spectrum:
    """
    Forward DFT over the trailing `ndim` axes, without normalization.

    Any size is accepted; numpy's pocketfft backend uses fast radix kernels
    for smooth sizes and Bluestein's algorithm otherwise.

    Raises:
        UsageError: If the input is empty.
    """
    values = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.size == 0:
        logger.error("dft called on an empty signal")
        raise UsageError("Cannot transform an empty signal")
    axes = _signal_axes(values, ndim)
    return Spectrum(coefficients=np.fft.fftn(values, axes=axes), ndim=len(axes))


def idft(spectrum: Spectrum, tolerance: float = 1e-10) -> np.ndarray:
    """
    Inverse DFT with the 1/N normalization, returning a real signal.

    Raises:
        ValidationError: If the coefficients are not Hermitian-symmetric within tolerance.
    """
    coefficients = spectrum.coefficients
    axes = spectrum.axes
    mirrored = np.conj(np.roll(np.flip(coefficients, axis=axes), 1, axis=axes))
    scale = np.max(np.abs(coefficients), initial=0.0)
    asymmetry = np.max(np.abs(coefficients - mirrored), initial=0.0)
    if asymmetry > tolerance * max(scale, 1.0):
        logger.error("Spectrum is not Hermitian (deviation %.3e)", asymmetry)
        raise ValidationError(f"Spectrum is not Hermitian-symmetric: deviation {asymmetry:.3e}")
    return np.fft.ifftn(coefficients, axes=axes).real


def polar(spectrum: Spectrum) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude |X| and phase atan2(Im, Re) in (-pi, pi]; phase is 0 where X = 0."""
    return spectrum.amplitude, spectrum.phase


def fourier_amplitude(x, ndim: int) -> Tensor:
    """
    Differentiable amplitude spectrum |DFT(x)| over the trailing `ndim` axes.

    The subgradient at X = 0 is taken as 0.
    """
    x = as_tensor(x)
    axes = _signal_axes(x.data, ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    coefficients = np.fft.fftn(x.data, axes=axes)
    amplitude = np.abs(coefficients)

    def backward(grad):
        unit = np.zeros_like(coefficients)
        nonzero = amplitude > 0
        unit[nonzero] = coefficients[nonzero] / amplitude[nonzero]
        return (count * np.fft.ifftn(grad * unit, axes=axes).real,)

    return Tensor.from_op(amplitude, (x,), backward)


def fourier_phase(x, ndim: int) -> Tensor:
    """Differentiable phase spectrum over the trailing `ndim` axes; zero-amplitude bins have no gradient."""
    x = as_tensor(x)
    axes = _signal_axes(x.data, ndim)
    coefficients = np.fft.fftn(x.data, axes=axes)
    amplitude = np.abs(coefficients)
    phase = _phase_of(coefficients, amplitude, axes)
    live = amplitude > PHASE_AMPLITUDE_FLOOR * np.max(amplitude, axis=axes, keepdims=True)

    def backward(grad):
        weights = np.zeros_like(coefficients)
        weights[live] = grad[live] / coefficients[live]
        return (np.fft.fftn(weights, axes=axes).imag,)

    return Tensor.from_op(phase, (x,), backward)


##################################################
# Filter banks
##################################################

@dataclass(frozen=True)
class FilterBank:
    """
    Two-channel filter bank with periodic boundary handling.

    Attributes:
        name (str): "haar" or "bior13".
        h, g: Analysis low-pass and high-pass coefficients.
        h_tilde, g_tilde: Synthesis low-pass and high-pass coefficients as defined.
        gain (float): Scalar c applied on synthesis so that synthesis(analysis(x)) = x.
        synthesis (str): "defined" when (h_tilde, g_tilde) reconstruct, otherwise
            "analysis-dual" (the transpose of the analysis operator is used).
        defined_defect (float): Max impulse-response error of the defined synthesis pair.
    """
    name: str
    h: tuple[float, ...]
    g: tuple[float, ...]
    h_tilde: tuple[float, ...]
    g_tilde: tuple[float, ...]
    gain: float = 1.0
    synthesis: str = "defined"
    defined_defect: float = 0.0

    def analysis_matrix(self, n: int) -> np.ndarray:
        """Stacked (low; high) analysis operator for a length-n axis, shape (n, n)."""
        return _analysis_matrix(self, n)

    def synthesis_matrix(self, n: int) -> np.ndarray:
        """Gain-corrected synthesis operator mapping stacked (low; high) back to n samples."""
        return _synthesis_matrix(self, n)


@lru_cache(maxsize=256)
def _analysis_matrix(bank: FilterBank, n: int) -> np.ndarray:
    matrix = np.vstack([_downsample_matrix(bank.h, n, 0), _downsample_matrix(bank.g, n, 0)])
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=256)
def _synthesis_matrix(bank: FilterBank, n: int) -> np.ndarray:
    if bank.synthesis == "defined":
        low, high, offset = bank.h_tilde, bank.g_tilde, (len(bank.h_tilde) - 2) // 2
    else:
        low, high, offset = bank.h, bank.g, 0
    stacked = np.vstack([_downsample_matrix(low, n, offset), _downsample_matrix(high, n, offset)])
    matrix = bank.gain * stacked.T
    matrix.setflags(write=False)
    return matrix


def _downsample_matrix(taps, n: int, offset: int) -> np.ndarray:
    """M[k, (2k + m - offset) mod n] += taps[m]: filter then keep every second sample."""
    matrix = np.zeros((n // 2, n))
    for k in range(n // 2):
        for m, tap in enumerate(taps):
            matrix[k, (2 * k + m - offset) % n] += tap
    return matrix


def _impulse_calibration(bank: FilterBank, n: int = 16) -> tuple[float, float]:
    """
    Runs synthesis(analysis(delta_j)) for unit impulses at every position j.

    Returns:
        tuple[float, float]: The least-squares scalar c with c * response ~ identity,
        and the max abs deviation of c * response from the identity.
    """
    response = bank.synthesis_matrix(n) @ bank.analysis_matrix(n)
    trace = np.trace(response)
    if trace <= 0:
        return 1.0, float("inf")
    c = n / trace
    return float(c), float(np.max(np.abs(c * response - np.eye(n))))


@lru_cache(maxsize=None)
def filter_bank(name: str) -> FilterBank:
    """
    Builds a named filter bank with an impulse-calibrated synthesis gain.

    haar uses the orthonormal 1/sqrt(2) convention. bior13 carries the
    coefficients h = {1/2, 1/2}, g = {-1/2, 1/2}, h~ = {1/8, 3/8, 3/8, 1/8},
    g~ = {-1/8, -3/8, 3/8, 1/8}. That synthesis pair cannot reconstruct the
    analysis pair for any scalar gain (each polyphase half of h~ has two taps),
    so reconstruction falls back to the dual of the analysis operator, whose
    gain the same impulse check calibrates.

    Raises:
        ConfigurationError: If the name is not recognized.
    """
    key = name.lower().replace(".", "")
    if key == "haar":
        s = 1.0 / np.sqrt(2.0)
        bank = FilterBank("haar", (s, s), (s, -s), (s, s), (s, -s))
    elif key == "bior13":
        bank = FilterBank(
            "bior13",
            (0.5, 0.5),
            (-0.5, 0.5),
            (1 / 8, 3 / 8, 3 / 8, 1 / 8),
            (-1 / 8, -3 / 8, 3 / 8, 1 / 8),
        )
    else:
        logger.error("Unknown wavelet: %s", name)
        raise ConfigurationError(f"Unknown wavelet '{name}', expected 'haar' or 'bior13'")

    gain, defect = _impulse_calibration(bank)
    if defect <= 1e-9:
        bank = FilterBank(bank.name, bank.h, bank.g, bank.h_tilde, bank.g_tilde, gain, "defined", defect)
    else:
        dual = FilterBank(bank.name, bank.h, bank.g, bank.h_tilde, bank.g_tilde, 1.0, "analysis-dual", defect)
        gain, dual_defect = _impulse_calibration(dual)
        logger.warning(
            "Synthesis filters of %s do not reconstruct (impulse defect %.3e); "
            "using the analysis dual with gain %.6f (defect %.3e)",
            bank.name, defect, gain, dual_defect,
        )
        bank = FilterBank(bank.name, bank.h, bank.g, bank.h_tilde, bank.g_tilde, gain, "analysis-dual", defect)
    logger.info("Filter bank %s ready (gain %.6f, synthesis %s)", bank.name, bank.gain, bank.synthesis)
    return bank


##################################################
# Discrete wavelet transform
##################################################

ORIENTATIONS_2D = ("LH", "HL", "HH")
ORIENTATIONS_1D = ("D",)


@dataclass
class WaveletPyramid:
    """
    Critically sampled multi-level wavelet decomposition.

    Attributes:
        approx (Tensor): Coarsest approximation band.
        details (list[dict[str, Tensor]]): details[s - 1] holds the level-s bands,
            level 1 being the finest. Orientations are LH/HL/HH in 2-D, where the
            first letter is the filter along the height axis; D in 1-D.
        wavelet (str): Filter bank name.
        ndim (int): Number of transformed trailing axes.
        signal_shape (tuple[int, ...]): Shape of the transformed axes.
    """
    approx: Tensor
    details: list[dict[str, Tensor]]
    wavelet: str
    ndim: int
    signal_shape: tuple[int, ...]

    @property
    def levels(self) -> int:
        return len(self.details)

    def bands(self) -> list[tuple[int, str, Tensor]]:
        """(level, orientation, coefficients) for every band, coarsest approximation last."""
        out = [(s + 1, name, band) for s, level in enumerate(self.details) for name, band in level.items()]
        out.append((self.levels, "approx", self.approx))
        return out


def _check_levels(shape: tuple[int, ...], levels: int) -> None:
    if levels < 1:
        raise ConfigurationError(f"Wavelet level count must be at least 1, got {levels}")
    for size in shape:
        if size < 2 ** levels or size % (2 ** levels) != 0:
            logger.error("Cannot take %d wavelet levels of an axis of length %d", levels, size)
            raise ConfigurationError(
                f"Too many wavelet levels ({levels}) for axis length {size}: "
                f"each axis must be a multiple of {2 ** levels}"
            )


def _axis_slice(ndim_total: int, axis: int, part: slice) -> tuple:
    index = [slice(None)] * ndim_total
    index[axis] = part
    return tuple(index)


def dwt(x, bank: FilterBank, levels: int, ndim: int | None = None) -> WaveletPyramid:
    """
    Multi-level separable DWT over the trailing `ndim` axes.

    Each level filters and downsamples along every axis with periodic extension;
    2-D levels split LL into (LL, LH, HL, HH) and recurse on LL. The transform
    is built from Tensor ops, so gradients flow through it.

    Raises:
        ConfigurationError: If an axis cannot be halved `levels` times.
    """
    x = as_tensor(x)
    axes = _signal_axes(x.data, ndim)
    signal_shape = tuple(x.shape[a] for a in axes)
    _check_levels(signal_shape, levels)

    details: list[dict[str, Tensor]] = []
    current = x
    for _ in range(levels):
        for axis in axes:
            current = apply_matrix(current, bank.analysis_matrix(current.shape[axis]), axis)
        if len(axes) == 1:
            half = current.shape[axes[0]] // 2
            details.append({"D": getitem(current, _axis_slice(current.ndim, axes[0], slice(half, None)))})
            current = getitem(current, _axis_slice(current.ndim, axes[0], slice(0, half)))
        else:
            rows, cols = axes
            h2, w2 = current.shape[rows] // 2, current.shape[cols] // 2
            low_r, high_r = slice(0, h2), slice(h2, None)
            low_c, high_c = slice(0, w2), slice(w2, None)

            def quadrant(r, c, tensor=current):
                index = [slice(None)] * tensor.ndim
                index[rows], index[cols] = r, c
                return getitem(tensor, tuple(index))

            details.append({
                "LH": quadrant(low_r, high_c),
                "HL": quadrant(high_r, low_c),
                "HH": quadrant(high_r, high_c),
            })
            current = quadrant(low_r, low_c)
    return WaveletPyramid(current, details, bank.name, len(axes), signal_shape)


def idwt(pyramid: WaveletPyramid, bank: FilterBank) -> np.ndarray:
    """
    Inverts dwt with the bank's gain-corrected synthesis operator.

    Raises:
        ValidationError: If band shapes are inconsistent with the recorded signal shape.
    """
    ndim = pyramid.ndim
    current = np.asarray(pyramid.approx.data if isinstance(pyramid.approx, Tensor) else pyramid.approx)
    axes = tuple(range(current.ndim - ndim, current.ndim))
    expected = tuple(s // 2 ** pyramid.levels for s in pyramid.signal_shape)
    if tuple(current.shape[a] for a in axes) != expected:
        raise ValidationError(f"Approximation band has shape {current.shape}, expected trailing {expected}")

    for s in range(pyramid.levels, 0, -1):
        level = {k: np.asarray(v.data if isinstance(v, Tensor) else v) for k, v in pyramid.details[s - 1].items()}
        band_shape = tuple(n // 2 ** s for n in pyramid.signal_shape)
        for name, band in level.items():
            if band.shape[:band.ndim - ndim] != current.shape[:current.ndim - ndim] or \
                    tuple(band.shape[a] for a in axes) != band_shape:
                logger.error("Band %s at level %d has shape %s", name, s, band.shape)
                raise ValidationError(f"Band {name} at level {s} has shape {band.shape}, expected trailing {band_shape}")
        if ndim == 1:
            if set(level) != set(ORIENTATIONS_1D):
                raise ValidationError(f"Level {s} must hold bands {ORIENTATIONS_1D}, got {sorted(level)}")
            stacked = np.concatenate([current, level["D"]], axis=axes[0])
        else:
            if set(level) != set(ORIENTATIONS_2D):
                raise ValidationError(f"Level {s} must hold bands {ORIENTATIONS_2D}, got {sorted(level)}")
            rows, cols = axes
            top = np.concatenate([current, level["LH"]], axis=cols)
            bottom = np.concatenate([level["HL"], level["HH"]], axis=cols)
            stacked = np.concatenate([top, bottom], axis=rows)
        for axis in reversed(axes):
            matrix = bank.synthesis_matrix(stacked.shape[axis])
            stacked = np.moveaxis(np.tensordot(matrix, stacked, axes=([1], [axis])), 0, axis)
        current = stacked
    return current


##################################################
# Power spectra
##################################################

@dataclass
class RadialProfile:
    """
    Radially averaged power spectrum.

    Attributes:
        bins (np.ndarray): Integer radius of each bin.
        mean_power (np.ndarray): Mean |X|^2 of the coefficients in each bin.
        counts (np.ndarray): Number of coefficients in each bin.
    """
    bins: np.ndarray
    mean_power: np.ndarray
    counts: np.ndarray = field(repr=False)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.mean_power * self.counts))


def radial_bins(shape: tuple[int, int], n_bins: int | None = None) -> tuple[np.ndarray, int]:
    """
    Bin index of every coefficient of a centered 2-D spectrum.

    Radii are rounded to the nearest integer distance from the DC bin; radii
    beyond the last bin fold into it.
    """
    height, width = shape
    n_bins = min(height, width) // 2 + 1 if n_bins is None else n_bins
    if n_bins < 1:
        raise ConfigurationError(f"Bin count must be positive, got {n_bins}")
    u = np.arange(height) - height // 2
    v = np.arange(width) - width // 2
    radius = np.rint(np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)).astype(np.int64)
    return np.minimum(radius, n_bins - 1), n_bins


def radial_power_spectrum(x, n_bins: int | None = None) -> RadialProfile:
    """
    Radially averaged power spectrum of one 2-D image.

    Raises:
        UsageError: For non-2-D input; use power_spectrum_1d for 1-D signals.
    """
    values = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.ndim != 2:
        logger.error("radial_power_spectrum called on a %d-D input", values.ndim)
        raise UsageError(f"Radial power spectra need a 2-D image, got shape {values.shape}")
    power = np.fft.fftshift(np.abs(np.fft.fft2(values)) ** 2)
    radius, n_bins = radial_bins(values.shape, n_bins)
    counts = np.bincount(radius.reshape(-1), minlength=n_bins)
    sums = np.bincount(radius.reshape(-1), weights=power.reshape(-1), minlength=n_bins)
    mean_power = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    return RadialProfile(np.arange(n_bins), mean_power, counts)


def power_spectrum_1d(x) -> np.ndarray:
    """Per-frequency power |X_k|^2 for k = 0..N//2 of a 1-D signal."""
    values = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise UsageError(f"Expected a non-empty 1-D signal, got shape {values.shape}")
    return np.abs(np.fft.rfft(values)) ** 2
