from functools import wraps
import logging
from pathlib import Path
import sys

import click
from dotenv import load_dotenv

from spectral_diffusion.models.checkerboard_model import CheckerboardConfig, gen_checkerboard
from spectral_diffusion.models.diffusion_model import SAMPLER_KINDS, SamplerSpec, sample as run_sampler
from spectral_diffusion.models.spectra_model import evaluate_spectra, mean_radial_profile
from spectral_diffusion.models.trainer_model import TrainConfig, restore, train as run_training
from spectral_diffusion.models.transforms_model import dwt, filter_bank, radial_power_spectrum
from spectral_diffusion.utils.checkpoint_utils import load_checkpoint
from spectral_diffusion.utils.config_utils import default_out_dir, read_config
from spectral_diffusion.utils.csv_utils import (
    summary_line,
    write_band,
    write_profile,
    write_spectra,
    write_summary,
)
from spectral_diffusion.utils.errors import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointReadError,
    ConfigurationError,
    DivergenceError,
    NonFiniteGradientError,
    ValidationError,
)
from spectral_diffusion.utils.logger import configure_logger
from spectral_diffusion.utils.pgm_utils import export_samples_pgm, read_pgm, read_pgm_dir
from spectral_diffusion.utils.verify_utils import run_verify


# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)
configure_logger(logger)

EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_CHECKPOINT = 5


def exit_code_for(error: Exception) -> int:
    """Maps an exception to the command-line exit code contract."""
    if isinstance(error, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(error, (DivergenceError, NonFiniteGradientError)):
        return EXIT_DIVERGENCE
    if isinstance(error, (ValidationError, OSError)):
        return EXIT_IO
    if isinstance(error, ValueError):
        return EXIT_USAGE
    raise error


def handle_errors(command):
    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ValueError, OSError, RuntimeError) as e:
            code = exit_code_for(e)
            logger.error("%s failed: %s", command.__name__, e)
            click.echo(f"error: {e}", err=True)
            sys.exit(code)
    return wrapper


@click.group()
def cli():
    """Spectrally regularized diffusion training on toy signals."""


####################################################
#
# Data
#
####################################################

@cli.command("gen-data")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Dataset directory.")
@click.option("--n", "count", type=click.IntRange(min=1), default=512, show_default=True)
@click.option("--size", type=click.IntRange(min=2), default=64, show_default=True)
@click.option("--tile", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def gen_data(out_dir, count, size, tile, seed):
    """Writes a checkerboard dataset as PGM files plus manifest.txt."""
    cfg = CheckerboardConfig(count=count, size=size, tile=tile, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = export_samples_pgm(gen_checkerboard(cfg), out / "img_")
    (out / "manifest.txt").write_text(cfg.echo())
    click.echo(f"wrote {len(paths)} images to {out}")


####################################################
#
# Training and sampling
#
####################################################

@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Run directory; defaults to out_dir from the config, then SPDM_OUT_DIR.")
@handle_errors
def train(config_path, out_dir):
    """Trains a denoiser from a key = value config file."""
    cfg = TrainConfig.from_mapping(read_config(config_path))
    out = Path(out_dir or cfg.out_dir or default_out_dir())
    result = run_training(cfg, out_dir=out)
    step, last = result.history[-1]
    click.echo(
        f"step {step + 1} loss_denoise {last.denoise:.6e} loss_spectral {last.spectral:.6e} "
        f"lambda {last.lam:.6e} loss_total {last.total:.6e} -> {out}"
    )


@cli.command()
@click.option("--ckpt", "ckpt_path", type=click.Path(dir_okay=False), required=True)
@click.option("--n", "count", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--sampler", type=click.Choice(SAMPLER_KINDS), default="ddim", show_default=True)
@click.option("--steps", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@handle_errors
def sample(ckpt_path, count, sampler, steps, seed, out_dir):
    """Draws samples from a checkpoint."""
    try:
        checkpoint = load_checkpoint(ckpt_path)
    except OSError as e:
        raise CheckpointReadError(f"Cannot read checkpoint {ckpt_path}: {e}") from e
    try:
        _, net, schedule = restore(checkpoint)
    except ConfigurationError as e:
        raise CheckpointFormatError(f"Checkpoint does not describe a usable net: {e}") from e
    batch = run_sampler(net, schedule, SamplerSpec(sampler, steps, seed), count)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if batch.ndim == 3:
        export_samples_pgm(batch, out / "sample_")
    else:
        write_band(out / "samples.csv", batch)
    click.echo(f"wrote {count} samples to {out}")


####################################################
#
# Spectra and transforms
#
####################################################

@cli.command()
@click.option("--in", "in_dir", type=click.Path(), required=True, help="Directory of PGM images.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="Profile CSV.")
@handle_errors
def spectrum(in_dir, out_path):
    """Writes the mean radial power profile of an image directory."""
    images, _ = read_pgm_dir(in_dir)
    write_profile(out_path, mean_radial_profile(images))
    click.echo(f"wrote profile of {len(images)} images to {out_path}")


@cli.command("eval")
@click.option("--gen", "gen_dir", type=click.Path(), required=True)
@click.option("--ref", "ref_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--tile", type=click.IntRange(min=1), default=None,
              help="Checkerboard tile of the reference; otherwise the strongest reference bin is used.")
@handle_errors
def evaluate(gen_dir, ref_dir, out_dir, tile):
    """Compares generated and reference spectra; prints distance and concentrations."""
    generated, _ = read_pgm_dir(gen_dir)
    reference, _ = read_pgm_dir(ref_dir)
    metrics = evaluate_spectra(generated, reference, tile=tile)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_spectra(out / "spectra.csv", metrics)
    write_summary(out / "summary.csv", metrics)
    click.echo(summary_line(metrics))


@cli.command()
@click.option("--op", type=click.Choice(["fft", "dwt"]), required=True)
@click.option("--wavelet", type=click.Choice(["haar", "bior13"]), default="haar", show_default=True)
@click.option("--levels", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--in", "in_path", type=click.Path(dir_okay=False), required=True, help="PGM image.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Profile CSV for fft, band directory for dwt.")
@handle_errors
def transform(op, wavelet, levels, in_path, out_path):
    """Radial profile or wavelet bands of one image."""
    image = read_pgm(in_path)
    if op == "fft":
        write_profile(out_path, radial_power_spectrum(image))
        click.echo(f"wrote radial profile to {out_path}")
        return
    bank = filter_bank(wavelet)
    pyramid = dwt(image, bank, levels)
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    for level, orientation, band in pyramid.bands():
        write_band(out / f"level{level}_{orientation}.csv", band.data)
    click.echo(f"wrote {len(pyramid.bands())} bands to {out}")


####################################################
#
# Self-verification
#
####################################################

@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
def verify(seed):
    """Runs the transform, gradient, loss and sampler property suites."""
    report = run_verify(seed)
    for line in report.lines():
        click.echo(line)
    if not report.passed:
        sys.exit(EXIT_VERIFY)


if __name__ == "__main__":
    cli()
