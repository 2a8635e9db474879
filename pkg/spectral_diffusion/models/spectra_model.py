from dataclasses import dataclass, field
import logging
from typing import Iterable

import numpy as np

from spectral_diffusion.models.checkerboard_model import dominant_radial_bin
from spectral_diffusion.models.transforms_model import RadialProfile, radial_bins
from spectral_diffusion.utils.errors import UsageError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)

LOG_FLOOR = 1e-12


@dataclass
class SpectralMetrics:
    """
    Comparison of a generated set against a reference set.

    Attributes:
        log_spectral_distance (float): Mean over bins of the squared difference of
            log10(power + floor) between the two profiles.
        concentration_gen (float): Share of non-DC power within one bin of the
            dominant bin, generated set.
        concentration_ref (float): The same share for the reference set.
        dominant_bin (int): Radial bin the concentration is measured around.
        gen_profile (RadialProfile): Mean radial profile of the generated set.
        ref_profile (RadialProfile): Mean radial profile of the reference set.
    """
    log_spectral_distance: float
    concentration_gen: float
    concentration_ref: float
    dominant_bin: int
    gen_profile: RadialProfile = field(repr=False)
    ref_profile: RadialProfile = field(repr=False)


def _as_image_stack(images) -> np.ndarray:
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.ndim != 3 or stack.shape[0] == 0:
        logger.error("Expected a non-empty stack of 2-D images, got shape %s", stack.shape)
        raise UsageError(f"Expected a non-empty stack of 2-D images, got shape {stack.shape}")
    return stack


def mean_radial_profile(images, n_bins: int | None = None) -> RadialProfile:
    """
    Mean over images of the per-image radially averaged power spectrum.

    Binning is linear, so the per-image profiles are averaged by binning the
    image-mean power spectrum once.
    """
    stack = _as_image_stack(images)
    power = np.abs(np.fft.fft2(stack, axes=(-2, -1))) ** 2
    power = np.fft.fftshift(power.mean(axis=0))
    radius, n_bins = radial_bins(stack.shape[1:], n_bins)
    counts = np.bincount(radius.reshape(-1), minlength=n_bins)
    sums = np.bincount(radius.reshape(-1), weights=power.reshape(-1), minlength=n_bins)
    mean_power = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    return RadialProfile(np.arange(n_bins), mean_power, counts)


def log_spectral_distance(generated: RadialProfile, reference: RadialProfile, floor: float = LOG_FLOOR) -> float:
    if generated.mean_power.shape != reference.mean_power.shape:
        raise UsageError(
            f"Profiles have {generated.mean_power.size} and {reference.mean_power.size} bins"
        )
    diff = np.log10(generated.mean_power + floor) - np.log10(reference.mean_power + floor)
    return float(np.mean(diff ** 2))


def concentration(profile: RadialProfile, centers: int | Iterable[int], width: int = 1) -> float:
    """
    Share of non-DC power lying within `width` bins of any center.

    Returns 0 when the profile carries no non-DC power.
    """
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    power = profile.mean_power * profile.counts
    non_dc = power[1:].sum()
    if non_dc <= 0:
        return 0.0
    near = np.zeros(power.shape, dtype=bool)
    for center in centers:
        near[max(center - width, 1):center + width + 1] = True
    near[0] = False
    return float(power[near].sum() / non_dc)


def evaluate_spectra(generated, reference, tile: int | None = None, n_bins: int | None = None,
                     floor: float = LOG_FLOOR) -> SpectralMetrics:
    """
    Compares mean radial power spectra of two image sets.

    Args:
        generated: Images of shape (n, H, W).
        reference: Images of shape (m, H, W).
        tile (int | None): Checkerboard tile size of the reference; the dominant bin
            is then round(sqrt(2) * H / (2 * tile)). Otherwise it is the reference
            profile's strongest non-DC bin.
        n_bins (int | None): Radial bin count; defaults to min(H, W) // 2 + 1.
        floor (float): Added to powers before the logarithm.

    Raises:
        UsageError: If either set is empty or the image shapes differ.
    """
    gen_stack, ref_stack = _as_image_stack(generated), _as_image_stack(reference)
    if gen_stack.shape[1:] != ref_stack.shape[1:]:
        logger.error("Geometry mismatch: %s vs %s", gen_stack.shape[1:], ref_stack.shape[1:])
        raise UsageError(f"Image geometry mismatch: {gen_stack.shape[1:]} vs {ref_stack.shape[1:]}")

    gen_profile = mean_radial_profile(gen_stack, n_bins)
    ref_profile = mean_radial_profile(ref_stack, n_bins)
    if tile is not None:
        dominant = min(dominant_radial_bin(gen_stack.shape[1], tile), len(ref_profile.bins) - 1)
    elif len(ref_profile.bins) > 1:
        dominant = 1 + int(np.argmax(ref_profile.mean_power[1:]))
    else:
        dominant = 0

    metrics = SpectralMetrics(
        log_spectral_distance=log_spectral_distance(gen_profile, ref_profile, floor),
        concentration_gen=concentration(gen_profile, dominant),
        concentration_ref=concentration(ref_profile, dominant),
        dominant_bin=dominant,
        gen_profile=gen_profile,
        ref_profile=ref_profile,
    )
    logger.info(
        "Spectral distance %.6e, concentration %.4f (generated) vs %.4f (reference) at bin %d",
        metrics.log_spectral_distance, metrics.concentration_gen, metrics.concentration_ref, dominant,
    )
    return metrics
