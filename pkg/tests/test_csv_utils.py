import numpy as np

from spectral_diffusion.models.losses_model import LossBreakdown
from spectral_diffusion.models.spectra_model import evaluate_spectra
from spectral_diffusion.models.transforms_model import radial_power_spectrum
from spectral_diffusion.utils.csv_utils import (
    fmt_short_exponent,
    read_metrics,
    write_band,
    write_metrics,
    write_profile,
    write_spectra,
    write_summary,
)


def test_metrics_round_trip(tmp_path):
    path = tmp_path / "metrics.csv"
    write_metrics(path, [(0, LossBreakdown(1.5, 0.25, 0.1, 1.525)), (1, LossBreakdown(1.0, 0.0, 0.0, 1.0))])
    assert path.read_text().splitlines()[0] == "step,loss_denoise,loss_spectral,lambda,loss_total"
    rows = read_metrics(path)
    assert rows[0] == {"step": 0, "loss_denoise": 1.5, "loss_spectral": 0.25, "lambda": 0.1, "loss_total": 1.525}
    assert rows[1]["step"] == 1


def test_profile_csv(tmp_path):
    path = tmp_path / "profile.csv"
    write_profile(path, radial_power_spectrum(np.ones((4, 4))))
    lines = path.read_text().splitlines()
    assert lines[0] == "bin,mean_power,count"
    assert lines[1] == "0,2.560000000000e+02,1"
    assert len(lines) == 1 + 3


def test_spectra_and_summary(tmp_path):
    images = np.random.default_rng(0).standard_normal((3, 8, 8))
    metrics = evaluate_spectra(images, images)
    write_spectra(tmp_path / "spectra.csv", metrics)
    write_summary(tmp_path / "summary.csv", metrics)
    assert (tmp_path / "spectra.csv").read_text().startswith("bin,gen_power,ref_power,count\n")
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "log_spectral_distance,concentration_gen,concentration_ref"
    assert summary[1].split(",")[0] == "0.000000000000e0"


def test_band_rows(tmp_path):
    path = tmp_path / "band.csv"
    write_band(path, np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert path.read_text().splitlines()[1] == "3.000000000000e+00,4.000000000000e+00"


def test_short_exponent_format():
    assert fmt_short_exponent(0.0) == "0.000000000000e0"
    assert fmt_short_exponent(256.0) == "2.560000000000e2"
    assert fmt_short_exponent(-1.5e-3) == "-1.500000000000e-3"
    assert fmt_short_exponent(float("nan")) == "nan"
