"""Binary Netpbm codec: P6 (RGB) images and P5 (grey) masks, 8-bit"""
import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.errors import CodecError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAXVAL = 255
CHANNELS = {"P6": 3, "P5": 1}


def _parse_header(data: bytes) -> Tuple[str, int, int, int, int]:
    """Return (magic, width, height, maxval, raster offset); comments start with '#'"""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise CodecError("truncated Netpbm header")
        char = data[pos : pos + 1]
        if char == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif char.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise CodecError("missing whitespace between Netpbm header and raster")
    try:
        magic = tokens[0].decode("ascii")
        width, height, maxval = (int(token) for token in tokens[1:])
    except (UnicodeDecodeError, ValueError):
        raise CodecError(f"malformed Netpbm header tokens {tokens!r}")
    return magic, width, height, maxval, pos + 1


def decode_netpbm(data: bytes, expected_magic: str) -> np.ndarray:
    """Decode a P6 or P5 byte string into uint8 [H,W,3] or [H,W]"""
    magic, width, height, maxval, offset = _parse_header(data)
    if magic != expected_magic:
        raise CodecError(f"expected {expected_magic} data, found {magic!r}")
    if width <= 0 or height <= 0:
        raise CodecError(f"invalid Netpbm extent {width}x{height}")
    if maxval != MAXVAL:
        raise CodecError(f"only 8-bit Netpbm (maxval {MAXVAL}) is supported, found {maxval}")
    channels = CHANNELS[magic]
    expected = width * height * channels
    raster = data[offset : offset + expected]
    if len(raster) < expected:
        raise CodecError(f"truncated raster: {len(raster)} of {expected} bytes")
    array = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return array.reshape(shape).copy()


def encode_netpbm(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise CodecError(f"Netpbm rasters must be uint8, got {array.dtype}")
    if array.ndim == 3 and array.shape[2] == 3:
        magic = "P6"
    elif array.ndim == 2:
        magic = "P5"
    else:
        raise CodecError(f"cannot encode array of shape {array.shape} as Netpbm")
    height, width = array.shape[:2]
    header = f"{magic}\n{width} {height}\n{MAXVAL}\n".encode("ascii")
    return header + np.ascontiguousarray(array).tobytes()


def read_ppm(path: PathLike) -> np.ndarray:
    return decode_netpbm(Path(path).read_bytes(), "P6")


def read_pgm(path: PathLike) -> np.ndarray:
    return decode_netpbm(Path(path).read_bytes(), "P5")


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    if np.asarray(rgb).ndim != 3:
        raise CodecError(f"PPM expects an [H,W,3] array, got {np.asarray(rgb).shape}")
    Path(path).write_bytes(encode_netpbm(rgb))


def write_pgm(path: PathLike, grey: np.ndarray) -> None:
    if np.asarray(grey).ndim != 2:
        raise CodecError(f"PGM expects an [H,W] array, got {np.asarray(grey).shape}")
    Path(path).write_bytes(encode_netpbm(grey))
