import logging
from pathlib import Path

import numpy as np

from spectral_diffusion.utils.errors import UsageError, ValidationError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Reads `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ValidationError("PGM header ended early")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # Exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """
    Reads a binary (P5) PGM with maxval at most 255.

    Byte b maps to b / (maxval / 2) - 1, i.e. b / 127.5 - 1 for maxval 255.

    Raises:
        OSError: If the file cannot be read.
        ValidationError: If the file is not a well-formed 8-bit P5 image.
    """
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"P5":
        logger.error("%s is not a binary PGM (magic %r)", path, tokens[0])
        raise ValidationError(f"{path}: expected P5 magic, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError as e:
        raise ValidationError(f"{path}: malformed PGM header") from e
    if width < 1 or height < 1 or not 1 <= maxval <= 255:
        raise ValidationError(f"{path}: unsupported geometry {width}x{height} or maxval {maxval}")
    raster = data[offset:offset + width * height]
    if len(raster) != width * height:
        logger.error("%s holds %d raster bytes, expected %d", path, len(raster), width * height)
        raise ValidationError(f"{path}: truncated raster ({len(raster)} of {width * height} bytes)")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)
    return pixels / (maxval / 2.0) - 1.0


def to_bytes(image) -> np.ndarray:
    """Maps [-1, 1] to 0..255: clamp, scale by 127.5, round half up."""
    values = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.floor((values + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def write_pgm(path, image) -> None:
    """
    Writes one 2-D image as a binary PGM, maxval 255.

    Raises:
        UsageError: If the image is not 2-D.
        OSError: If the file cannot be written.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise UsageError(f"PGM export needs 2-D images, got shape {image.shape}")
    height, width = image.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + to_bytes(image).tobytes())


def export_samples_pgm(batch, path_prefix) -> list[Path]:
    """
    Writes each image of a batch to `{path_prefix}{index:05d}.pgm`.

    Returns:
        list[Path]: The written files in batch order.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        logger.error("Cannot export batch of shape %s as PGM", batch.shape)
        raise UsageError(f"PGM export needs a batch of 2-D images, got shape {batch.shape}")
    prefix = str(path_prefix)
    paths = []
    for index, image in enumerate(batch):
        path = Path(f"{prefix}{index:05d}.pgm")
        write_pgm(path, image)
        paths.append(path)
    logger.info("Wrote %d PGM files with prefix %s", len(paths), prefix)
    return paths


def read_pgm_dir(directory) -> tuple[np.ndarray, list[Path]]:
    """
    Reads every *.pgm in a directory in name order.

    Raises:
        OSError: If the directory cannot be listed.
        UsageError: If it holds no PGM files or the images differ in size.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"No such directory: {directory}")
    paths = sorted(directory.glob("*.pgm"))
    if not paths:
        logger.error("No PGM files in %s", directory)
        raise UsageError(f"No PGM files found in {directory}")
    images = [read_pgm(path) for path in paths]
    shapes = {image.shape for image in images}
    if len(shapes) > 1:
        logger.error("Mixed image sizes in %s: %s", directory, sorted(shapes))
        raise UsageError(f"Images in {directory} have mixed sizes {sorted(shapes)}")
    return np.stack(images), paths
