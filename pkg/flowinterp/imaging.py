"""
Image and flow file I/O: PGM/PNG/PFM frames and Middlebury ``.flo`` flows.
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .grid import ImageIOError, ScalarField, VectorField

# Configure logger
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLO_MAGIC = b"PIEH"
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
# Modes read directly; anything else (palette, CMYK, ...) is converted to RGB first.
NATIVE_MODES = ("L", "RGB", "RGBA", "I", "I;16", "I;16B", "I;16L", "F")


def _to_luminance(pixels: np.ndarray, mode: str) -> np.ndarray:
    if pixels.ndim == 3:
        rgb = pixels[..., :3].astype(np.float64)
        if pixels.dtype == np.uint16:
            rgb *= 255.0 / 65535.0
        return rgb @ LUMA_WEIGHTS
    gray = pixels.astype(np.float64)
    if pixels.dtype == np.uint8:
        return gray
    if mode == "F":
        return gray
    # 16-bit grayscale (PIL modes "I;16*" and "I")
    return gray * (255.0 / 65535.0)


def read_image(path: PathLike) -> ScalarField:
    """Read a PGM or PNG frame as luminance in [0, 255].

    Color inputs are converted with y = 0.299R + 0.587G + 0.114B; 16-bit inputs are
    rescaled to [0, 255]. PFM files are read as-is.

    Raises:
        ImageIOError: If the file is missing or not a readable image.
    """
    path = Path(path)
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            if mode not in NATIVE_MODES:
                image = image.convert("RGB")
                mode = image.mode
            pixels = np.asarray(image)
    except FileNotFoundError as e:
        logger.error(f"Image not found: {path}")
        raise ImageIOError(f"Image not found: {path}") from e
    except (UnidentifiedImageError, OSError, ValueError) as e:
        logger.error(f"Failed to read image {path}: {e}")
        raise ImageIOError(f"Cannot read image {path}: {e}") from e

    values = _to_luminance(pixels, mode)
    logger.debug(f"Read {path} ({mode}, {values.shape[1]}x{values.shape[0]})")
    try:
        return ScalarField(values)
    except ValueError as e:
        raise ImageIOError(f"Image {path} is not a usable frame: {e}") from e


BIT_DEPTHS = {8: np.uint8, 16: np.uint16}


def quantize(f: ScalarField, bit_depth: int = 8) -> np.ndarray:
    """Round [0, 255] luminance to 8- or 16-bit integers, clamped to the full range."""
    if bit_depth not in BIT_DEPTHS:
        raise ValueError(f"bit_depth must be one of {list(BIT_DEPTHS)}, got {bit_depth}")
    top = 2 ** bit_depth - 1
    return np.clip(np.rint(f.values * (top / 255.0)), 0, top).astype(BIT_DEPTHS[bit_depth])


def _write_pgm16(pixels: np.ndarray, path: Path) -> None:
    # Binary P5 with maxval 65535: samples are big-endian
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(pixels.astype(">u2").tobytes())


def write_image(f: ScalarField, path: PathLike, float_out: bool = False, bit_depth: int = 8) -> Path:
    """Write a frame: 8- or 16-bit PNG/PGM by extension, or PFM when ``float_out`` is set.

    16-bit samples are the [0, 255] luminance scaled by 65535/255, which ``read_image``
    undoes.
    """
    if bit_depth not in BIT_DEPTHS:
        raise ValueError(f"bit_depth must be one of {list(BIT_DEPTHS)}, got {bit_depth}")
    path = Path(path)
    if float_out and path.suffix.lower() != ".pfm":
        path = path.with_suffix(".pfm")
    depth = "float" if path.suffix.lower() == ".pfm" else f"{bit_depth}-bit"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() == ".pfm":
            Image.fromarray(f.values.astype(np.float32)).save(path)
        elif path.suffix.lower() in (".pgm", ".pnm"):
            if bit_depth == 16:
                _write_pgm16(quantize(f, 16), path)
            else:
                Image.fromarray(quantize(f, bit_depth)).save(path, format="PPM")
        else:
            Image.fromarray(quantize(f, bit_depth)).save(path, format="PNG")
    except OSError as e:
        logger.error(f"Failed to write image {path}: {e}")
        raise ImageIOError(f"Cannot write image {path}: {e}") from e
    logger.info(f"Wrote {depth} frame {path}")
    return path


def write_flo(b: VectorField, path: PathLike) -> Path:
    """Write a Middlebury ``.flo`` file (little-endian, interleaved float32 v, w)."""
    path = Path(path)
    header = np.array([b.width, b.height], dtype="<i4")
    data = np.stack([b.v, b.w], axis=-1).astype("<f4")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(FLO_MAGIC)
            fh.write(header.tobytes())
            fh.write(data.tobytes())
    except OSError as e:
        logger.error(f"Failed to write flow {path}: {e}")
        raise ImageIOError(f"Cannot write flow {path}: {e}") from e
    logger.info(f"Wrote flow {path}")
    return path


def read_flo(path: PathLike) -> VectorField:
    """Read a Middlebury ``.flo`` file.

    Raises:
        ImageIOError: On a missing file, wrong magic or truncated data.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ImageIOError(f"Cannot read flow {path}: {e}") from e
    if raw[:4] != FLO_MAGIC:
        raise ImageIOError(f"{path} is not a .flo file (bad magic)")
    width, height = np.frombuffer(raw, dtype="<i4", count=2, offset=4)
    count = int(width) * int(height) * 2
    data = np.frombuffer(raw, dtype="<f4", offset=12)
    if data.size != count:
        raise ImageIOError(f"{path} is truncated: expected {count} floats, got {data.size}")
    data = data.reshape(int(height), int(width), 2).astype(np.float64)
    return VectorField(data[..., 0], data[..., 1])
