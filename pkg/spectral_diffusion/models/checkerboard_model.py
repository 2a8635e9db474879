from dataclasses import dataclass
import logging

import numpy as np

from spectral_diffusion.models.transforms_model import radial_bins
from spectral_diffusion.utils.config_utils import format_key_values
from spectral_diffusion.utils.errors import ConfigurationError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)


@dataclass
class CheckerboardConfig:
    """
    Geometry of a random-shift checkerboard dataset.

    Attributes:
        count (int): Number of images.
        size (int): Side length in pixels.
        tile (int): Tile side k in pixels; the pattern period is 2k.
        shift_range (int | None): Shifts are drawn from [0, shift_range); defaults to 2k.
        low (float): Value of dark tiles.
        high (float): Value of light tiles.
        seed (int): Generator seed.
    """
    count: int = 512
    size: int = 64
    tile: int = 8
    shift_range: int | None = None
    low: float = -1.0
    high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.tile < 1:
            raise ConfigurationError(f"Tile size must be at least 1, got {self.tile}")
        if self.size < 2 * self.tile:
            raise ConfigurationError(f"Image size {self.size} must be at least twice the tile size {self.tile}")
        if self.count < 0:
            raise ConfigurationError(f"Image count must be non-negative, got {self.count}")
        if self.shift_range is None:
            self.shift_range = 2 * self.tile
        if self.shift_range < 1:
            raise ConfigurationError(f"Shift range must be at least 1, got {self.shift_range}")

    @property
    def fundamental(self) -> float:
        """Cycles per image of the square wave along each axis."""
        return self.size / (2 * self.tile)

    def echo(self) -> str:
        return format_key_values([
            ("count", self.count),
            ("size", self.size),
            ("tile", self.tile),
            ("shift_range", self.shift_range),
            ("low", repr(self.low)),
            ("high", repr(self.high)),
            ("seed", self.seed),
        ])


def gen_checkerboard(cfg: CheckerboardConfig) -> np.ndarray:
    """
    Generates `count` checkerboards with independent random integer shifts.

    Pixel (i, j) of an image with shifts (si, sj) is `high` when
    ((i + si) // k + (j + sj) // k) is even and `low` otherwise.

    Returns:
        np.ndarray: Shape (count, size, size), float64.
    """
    rng = np.random.default_rng(cfg.seed)
    shifts = rng.integers(0, cfg.shift_range, size=(cfg.count, 2))
    rows = np.arange(cfg.size)
    images = np.empty((cfg.count, cfg.size, cfg.size), dtype=np.float64)
    for n, (si, sj) in enumerate(shifts):
        parity = ((rows[:, None] + si) // cfg.tile + (rows[None, :] + sj) // cfg.tile) % 2
        images[n] = np.where(parity == 0, cfg.high, cfg.low)
    logger.info("Generated %d checkerboards of size %d with tile %d", cfg.count, cfg.size, cfg.tile)
    return images


##################################################
# Spectral geometry
##################################################

def dominant_radial_bin(size: int, tile: int) -> int:
    """
    Radial bin of the fundamental.

    A zero-mean checkerboard is the product of two square waves, so its energy
    sits at (+-p f0, +-q f0) with odd p, q; the strongest pair (1, 1) lies at
    radius sqrt(2) * f0.
    """
    return int(np.floor(np.sqrt(2.0) * size / (2 * tile) + 0.5))


def harmonic_mask(size: int, tile: int) -> np.ndarray:
    """Boolean mask over the centered spectrum of the odd-harmonic lattice points."""
    period = 2 * tile
    if size % period != 0:
        raise ConfigurationError(f"Harmonic lattice needs size divisible by {period}, got {size}")
    f0 = size // period
    freqs = np.arange(size) - size // 2
    odd = (freqs % (2 * f0)) == f0
    return odd[:, None] & odd[None, :]


def harmonic_bins(size: int, tile: int, n_bins: int | None = None) -> np.ndarray:
    """Sorted radial bins that contain at least one odd-harmonic lattice point."""
    bins, _ = radial_bins((size, size), n_bins)
    return np.unique(bins[harmonic_mask(size, tile)])
