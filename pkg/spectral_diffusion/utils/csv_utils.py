import csv
import logging
from pathlib import Path
from typing import Iterable

import numpy as np

from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)

METRICS_HEADER = ("step", "loss_denoise", "loss_spectral", "lambda", "loss_total")
PROFILE_HEADER = ("bin", "mean_power", "count")
SPECTRA_HEADER = ("bin", "gen_power", "ref_power", "count")
SUMMARY_HEADER = ("log_spectral_distance", "concentration_gen", "concentration_ref")


def fmt(value: float) -> str:
    return "%.12e" % value


def fmt_short_exponent(value: float) -> str:
    """%.12e with an unpadded exponent, as in 0.000000000000e0 or 2.560000000000e2."""
    if not np.isfinite(value):
        return fmt(value)
    mantissa, exponent = fmt(value).split("e")
    return f"{mantissa}e{int(exponent)}"


def write_metrics(path, rows: Iterable[tuple[int, object]]) -> None:
    """
    Writes the training log.

    Args:
        path: Destination CSV.
        rows: (step, LossBreakdown) pairs in step order.
    """
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for step, breakdown in rows:
            writer.writerow([
                step,
                fmt(breakdown.denoise),
                fmt(breakdown.spectral),
                fmt(breakdown.lam),
                fmt(breakdown.total),
            ])


def read_metrics(path) -> list[dict[str, float]]:
    with open(path, newline="") as f:
        return [
            {key: (int(value) if key == "step" else float(value)) for key, value in row.items()}
            for row in csv.DictReader(f)
        ]


def write_profile(path, profile) -> None:
    """Writes one radial profile as bin,mean_power,count."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PROFILE_HEADER)
        for b, power, count in zip(profile.bins, profile.mean_power, profile.counts):
            writer.writerow([int(b), fmt(power), int(count)])


def write_spectra(path, metrics) -> None:
    """Writes generated and reference profiles side by side."""
    gen, ref = metrics.gen_profile, metrics.ref_profile
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SPECTRA_HEADER)
        for b, gen_power, ref_power, count in zip(ref.bins, gen.mean_power, ref.mean_power, ref.counts):
            writer.writerow([int(b), fmt(gen_power), fmt(ref_power), int(count)])


def summary_line(metrics) -> str:
    return ",".join(fmt_short_exponent(v) for v in (
        metrics.log_spectral_distance, metrics.concentration_gen, metrics.concentration_ref,
    ))


def write_summary(path, metrics) -> None:
    Path(path).write_text(",".join(SUMMARY_HEADER) + "\n" + summary_line(metrics) + "\n")


def write_band(path, coefficients) -> None:
    """Writes a 1-D or 2-D coefficient array, one CSV row per array row."""
    values = np.atleast_2d(np.asarray(coefficients, dtype=np.float64))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in values:
            writer.writerow([fmt(v) for v in row])
    logger.debug("Wrote band of shape %s to %s", values.shape, path)
