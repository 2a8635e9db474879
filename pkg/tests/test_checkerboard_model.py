import numpy as np
import pytest

from spectral_diffusion.models.checkerboard_model import (
    CheckerboardConfig,
    dominant_radial_bin,
    gen_checkerboard,
    harmonic_bins,
    harmonic_mask,
)
from spectral_diffusion.models.spectra_model import concentration, mean_radial_profile
from spectral_diffusion.models.transforms_model import power_spectrum_1d
from spectral_diffusion.utils.config_utils import parse_key_values
from spectral_diffusion.utils.errors import ConfigurationError


@pytest.fixture
def boards():
    return gen_checkerboard(CheckerboardConfig(count=16, size=64, tile=8, seed=0))


##################################################
# Generation
##################################################

def test_checkerboard_values_are_balanced(boards):
    assert boards.shape == (16, 64, 64)
    assert set(np.unique(boards)) == {-1.0, 1.0}
    for image in boards:
        assert np.sum(image == 1.0) == 64 * 64 // 2, "Each image must be half light and half dark"


def test_same_seed_same_dataset(boards):
    again = gen_checkerboard(CheckerboardConfig(count=16, size=64, tile=8, seed=0))
    other = gen_checkerboard(CheckerboardConfig(count=16, size=64, tile=8, seed=1))
    assert np.array_equal(boards, again)
    assert not np.array_equal(boards, other)


def test_tiles_are_constant_blocks():
    """Test that without shifts pixel (0, 0) is light and the pattern alternates every tile."""
    image = gen_checkerboard(CheckerboardConfig(count=1, size=8, tile=2, shift_range=1))[0]
    assert image[0, 0] == 1.0
    assert image[0, 2] == -1.0
    assert image[2, 2] == 1.0
    assert np.all(image[:2, :2] == 1.0)


def test_largest_tile_is_half_the_image():
    image = gen_checkerboard(CheckerboardConfig(count=1, size=8, tile=4, shift_range=1))[0]
    assert np.all(image[:4, :4] == 1.0) and np.all(image[:4, 4:] == -1.0)


def test_custom_levels():
    image = gen_checkerboard(CheckerboardConfig(count=1, size=4, tile=1, low=0.0, high=0.5))[0]
    assert set(np.unique(image)) == {0.0, 0.5}


@pytest.mark.parametrize("kwargs", [{"tile": 0}, {"size": 8, "tile": 5}, {"count": -1}, {"shift_range": 0}])
def test_invalid_geometry(kwargs):
    with pytest.raises(ConfigurationError):
        CheckerboardConfig(**kwargs)


def test_shift_range_defaults_to_period():
    cfg = CheckerboardConfig(tile=4)
    assert cfg.shift_range == 8
    assert cfg.fundamental == pytest.approx(8.0)


##################################################
# Spectral geometry
##################################################

def test_dominant_bin():
    assert dominant_radial_bin(64, 8) == 6
    assert dominant_radial_bin(32, 4) == 6
    assert dominant_radial_bin(32, 8) == 3


def test_row_spectrum_peaks_at_fundamental(boards):
    power = power_spectrum_1d(boards[0, 0])
    assert int(np.argmax(power)) == 4, f"Expected the peak at 64 / 16 = 4, got {np.argmax(power)}"


def test_power_lies_on_odd_harmonics(boards):
    """Test that at least 90% of the non-DC power falls in harmonic bins."""
    profile = mean_radial_profile(boards)
    share = concentration(profile, harmonic_bins(64, 8), width=0)
    assert share >= 0.9, f"Only {share:.3f} of the power lies on odd harmonics"


def test_harmonic_mask_lattice():
    mask = harmonic_mask(64, 8)
    centre = 32
    assert mask[centre + 4, centre + 4] and mask[centre - 4, centre + 12]
    assert not mask[centre, centre + 4], "Axis points carry no checkerboard energy"
    assert not mask[centre + 8, centre + 8], "Even harmonics must be excluded"


def test_harmonic_mask_needs_whole_periods():
    with pytest.raises(ConfigurationError):
        harmonic_mask(60, 8)


def test_echo_is_key_value_text():
    cfg = CheckerboardConfig(count=4, size=16, tile=4, seed=9)
    values = parse_key_values(cfg.echo())
    assert values["count"] == "4" and values["tile"] == "4" and values["seed"] == "9"
    assert float(values["low"]) == cfg.low and float(values["high"]) == cfg.high
    assert cfg.echo().endswith("\n")
