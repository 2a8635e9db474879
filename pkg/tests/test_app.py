import pytest
from click.testing import CliRunner

from app import cli
from spectral_diffusion.utils.errors import DivergenceError
from spectral_diffusion.utils.verify_utils import PropertyResult, VerifyReport


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def dataset(runner, tmp_path):
    out = tmp_path / "data"
    result = runner.invoke(cli, ["gen-data", "--out", str(out), "--n", "4", "--size", "16", "--tile", "4"])
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture
def trained(runner, dataset, tmp_path):
    config = tmp_path / "tiny.conf"
    config.write_text(
        "steps = 2\nbatch = 2\nT = 40\nchannels = 2\nblocks = 0\nemb_width = 4\n"
        f"eval_every = 0\ndata_dir = {dataset}\n"
    )
    run = tmp_path / "run"
    result = runner.invoke(cli, ["train", "--config", str(config), "--out", str(run)])
    assert result.exit_code == 0, result.output
    return run


##################################################
# Data and evaluation
##################################################

def test_gen_data_writes_images_and_manifest(dataset):
    assert sorted(p.name for p in dataset.glob("*.pgm")) == [f"img_{i:05d}.pgm" for i in range(4)]
    assert "tile = 4" in (dataset / "manifest.txt").read_text()


def _contents(directory):
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir())}


def test_gen_data_is_byte_identical(runner, tmp_path):
    for name in ("a", "b"):
        result = runner.invoke(cli, ["gen-data", "--out", str(tmp_path / name), "--n", "4", "--size", "16",
                                     "--tile", "4", "--seed", "3"])
        assert result.exit_code == 0, result.output
    a, b = _contents(tmp_path / "a"), _contents(tmp_path / "b")
    assert len(a) == 5
    assert a == b, "Same seed must give byte-identical directories"


def test_gen_data_rejects_zero_tile(runner, tmp_path):
    result = runner.invoke(cli, ["gen-data", "--out", str(tmp_path), "--tile", "0"])
    assert result.exit_code == 2


def test_gen_data_rejects_small_image(runner, tmp_path):
    result = runner.invoke(cli, ["gen-data", "--out", str(tmp_path), "--size", "8", "--tile", "8"])
    assert result.exit_code == 2
    assert "twice the tile size" in result.output


def test_eval_of_identical_sets(runner, dataset, tmp_path):
    out = tmp_path / "eval"
    result = runner.invoke(cli, ["eval", "--gen", str(dataset), "--ref", str(dataset), "--out", str(out), "--tile", "4"])
    assert result.exit_code == 0, result.output
    assert result.output.strip().splitlines()[-1].split(",")[0] == "0.000000000000e0"
    assert (out / "spectra.csv").exists() and (out / "summary.csv").exists()


def test_eval_of_missing_directory(runner, dataset, tmp_path):
    result = runner.invoke(cli, ["eval", "--gen", str(tmp_path / "nope"), "--ref", str(dataset), "--out", str(tmp_path)])
    assert result.exit_code == 3


def test_spectrum(runner, dataset, tmp_path):
    out = tmp_path / "profile.csv"
    result = runner.invoke(cli, ["spectrum", "--in", str(dataset), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert len(out.read_text().splitlines()) == 1 + 9


def test_transform_dwt_bands(runner, dataset, tmp_path):
    out = tmp_path / "bands"
    image = dataset / "img_00000.pgm"
    result = runner.invoke(cli, ["transform", "--op", "dwt", "--levels", "2", "--in", str(image), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert {p.name for p in out.iterdir()} == {
        "level1_LH.csv", "level1_HL.csv", "level1_HH.csv",
        "level2_LH.csv", "level2_HL.csv", "level2_HH.csv", "level2_approx.csv",
    }


def test_transform_too_many_levels(runner, dataset, tmp_path):
    image = dataset / "img_00000.pgm"
    result = runner.invoke(cli, ["transform", "--op", "dwt", "--levels", "5", "--in", str(image), "--out", str(tmp_path / "b")])
    assert result.exit_code == 2


def test_malformed_pgm_is_an_io_error(runner, tmp_path):
    image = tmp_path / "bad.pgm"
    image.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    result = runner.invoke(cli, ["transform", "--op", "fft", "--in", str(image), "--out", str(tmp_path / "p.csv")])
    assert result.exit_code == 3


##################################################
# Training and sampling
##################################################

def test_train_then_sample(runner, trained, tmp_path):
    assert (trained / "ckpt_final.spdm").exists() and (trained / "metrics.csv").exists()
    out = tmp_path / "samples"
    result = runner.invoke(cli, ["sample", "--ckpt", str(trained / "ckpt_final.spdm"), "--n", "2", "--steps", "5",
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in out.glob("*.pgm")) == ["sample_00000.pgm", "sample_00001.pgm"]


def test_train_and_sample_are_byte_identical(runner, trained, tmp_path):
    """Test that a second identical run reproduces the checkpoint, the log and the ddim samples byte for byte."""
    config = tmp_path / "tiny.conf"
    again = tmp_path / "again"
    result = runner.invoke(cli, ["train", "--config", str(config), "--out", str(again)])
    assert result.exit_code == 0, result.output
    for name in ("ckpt_final.spdm", "metrics.csv"):
        assert (trained / name).read_bytes() == (again / name).read_bytes(), f"{name} differs between runs"

    outputs = []
    for run, name in ((trained, "s1"), (again, "s2")):
        result = runner.invoke(cli, ["sample", "--ckpt", str(run / "ckpt_final.spdm"), "--n", "2", "--steps", "5",
                                     "--seed", "4", "--out", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
        outputs.append(_contents(tmp_path / name))
    assert outputs[0] == outputs[1]


def test_ddpm_and_ddim_samples_differ(runner, trained, tmp_path):
    for sampler in ("ddpm", "ddim"):
        result = runner.invoke(cli, ["sample", "--ckpt", str(trained / "ckpt_final.spdm"), "--n", "2",
                                     "--sampler", sampler, "--steps", "5", "--seed", "4",
                                     "--out", str(tmp_path / sampler)])
        assert result.exit_code == 0, result.output
    assert _contents(tmp_path / "ddpm") != _contents(tmp_path / "ddim")


def test_sample_with_too_many_steps(runner, trained, tmp_path):
    result = runner.invoke(cli, ["sample", "--ckpt", str(trained / "ckpt_final.spdm"), "--steps", "50",
                                 "--out", str(tmp_path / "s")])
    assert result.exit_code == 2


def test_sample_with_mismatched_sampler(runner, trained, tmp_path):
    result = runner.invoke(cli, ["sample", "--ckpt", str(trained / "ckpt_final.spdm"), "--sampler", "edm-euler",
                                 "--steps", "5", "--out", str(tmp_path / "s")])
    assert result.exit_code == 2


def test_sample_from_corrupt_checkpoint(runner, tmp_path):
    ckpt = tmp_path / "bad.spdm"
    ckpt.write_bytes(b"NOPE" + bytes(16))
    result = runner.invoke(cli, ["sample", "--ckpt", str(ckpt), "--out", str(tmp_path / "s")])
    assert result.exit_code == 5


def test_sample_from_missing_checkpoint(runner, tmp_path):
    result = runner.invoke(cli, ["sample", "--ckpt", str(tmp_path / "absent.spdm"), "--out", str(tmp_path / "s")])
    assert result.exit_code == 5, f"Expected checkpoint exit code, got {result.exit_code}"
    assert "Cannot read checkpoint" in result.output


def test_sample_from_unreadable_checkpoint(runner, tmp_path, mocker):
    mocker.patch("app.load_checkpoint", side_effect=PermissionError("denied"))
    result = runner.invoke(cli, ["sample", "--ckpt", str(tmp_path / "ckpt.spdm"), "--out", str(tmp_path / "s")])
    assert result.exit_code == 5
    assert "denied" in result.output


def test_train_rejects_unknown_key(runner, tmp_path):
    config = tmp_path / "bad.conf"
    config.write_text("lamda = 0.1\n")
    result = runner.invoke(cli, ["train", "--config", str(config)])
    assert result.exit_code == 2
    assert "lamda" in result.output


def test_train_divergence_exit_code(runner, tmp_path, mocker):
    config = tmp_path / "run.conf"
    config.write_text("steps = 1\n")
    mocker.patch("app.run_training", side_effect=DivergenceError(0, None))
    result = runner.invoke(cli, ["train", "--config", str(config), "--out", str(tmp_path / "run")])
    assert result.exit_code == 4


##################################################
# Verification
##################################################

def test_verify_reports_failures(runner, mocker):
    report = VerifyReport([PropertyResult("parseval", True, 0.0, 1e-9), PropertyResult("ddim", False, 1.0, 1e-10)])
    mocker.patch("app.run_verify", return_value=report)
    result = runner.invoke(cli, ["verify"])
    assert result.exit_code == 1
    assert "FAIL ddim" in result.output


def test_verify_success(runner, mocker):
    mocker.patch("app.run_verify", return_value=VerifyReport([PropertyResult("parseval", True, 0.0, 1e-9)]))
    result = runner.invoke(cli, ["verify", "--seed", "3"])
    assert result.exit_code == 0
    assert result.output.startswith("PASS parseval")
