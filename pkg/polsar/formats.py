"""
Binary codecs for scene, label and map files.

PCV1 scene file (little endian)::

    offset 0   4 bytes  magic "PCV1"
    offset 4   u32      height
    offset 8   u32      width
    offset 12  u32      channel count (always 9)
    offset 16  f32[H*W*9] features, row-major, channel-last

Label rasters are 8-bit binary PGM (P5) and classification maps are
binary PPM (P6); both use maxval 255.
"""

import struct
from pathlib import Path

import numpy as np

from .core import FEATURES_PER_BAND
from .exceptions import FormatError

PCV1_MAGIC = b'PCV1'
PCV1_HEADER = struct.Struct('<4sIII')


def encode_pcv1(features):
    """Serialize an (H, W, 9) feature array as PCV1 bytes."""
    features = np.asarray(features)
    height, width, channels = features.shape
    if channels != FEATURES_PER_BAND:
        raise FormatError("PCV1 stores exactly 9 channels", expected=FEATURES_PER_BAND, actual=channels)
    header = PCV1_HEADER.pack(PCV1_MAGIC, height, width, channels)
    return header + features.astype('<f4').tobytes(order='C')


def decode_pcv1(data, path=None):
    """
    Parse PCV1 bytes.

    Returns:
        Float32 array (H, W, 9)

    Raises:
        FormatError: On bad magic, a channel count other than 9, or a
            payload whose length does not match the header
    """
    if len(data) < PCV1_HEADER.size:
        raise FormatError("PCV1 header truncated", path=path, offset=0,
                          expected=PCV1_HEADER.size, actual=len(data))
    magic, height, width, channels = PCV1_HEADER.unpack_from(data, 0)
    if magic != PCV1_MAGIC:
        raise FormatError("bad PCV1 magic", path=path, offset=0, expected=PCV1_MAGIC, actual=magic)
    if channels != FEATURES_PER_BAND:
        raise FormatError("unsupported PCV1 channel count", path=path, offset=12,
                          expected=FEATURES_PER_BAND, actual=channels)
    expected = PCV1_HEADER.size + height * width * channels * 4
    if len(data) != expected:
        raise FormatError("PCV1 payload length mismatch", path=path, offset=PCV1_HEADER.size,
                          expected=expected, actual=len(data))
    features = np.frombuffer(data, dtype='<f4', offset=PCV1_HEADER.size)
    return features.reshape(height, width, channels).astype(np.float32)


def _parse_netpbm_header(data, magic, path):
    if data[:2] != magic:
        raise FormatError(f"expected {magic.decode()} image", path=path, offset=0,
                          expected=magic, actual=bytes(data[:2]))
    values = []
    position = 2
    while len(values) < 3:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        if position < len(data) and data[position:position + 1] == b'#':
            while position < len(data) and data[position:position + 1] not in (b'\n', b'\r'):
                position += 1
            continue
        start = position
        while position < len(data) and data[position:position + 1].isdigit():
            position += 1
        if start == position:
            raise FormatError("malformed image header", path=path, offset=position)
        values.append(int(data[start:position]))
    # exactly one whitespace byte separates the header from the raster
    position += 1
    width, height, maxval = values
    if maxval != 255:
        raise FormatError("only 8-bit images are supported", path=path, offset=position,
                          expected=255, actual=maxval)
    return width, height, position


def encode_pgm(raster):
    raster = np.asarray(raster, dtype=np.uint8)
    height, width = raster.shape
    return f"P5\n{width} {height}\n255\n".encode('ascii') + raster.tobytes(order='C')


def decode_pgm(data, path=None):
    """Parse binary PGM bytes into a (H, W) uint8 array."""
    width, height, offset = _parse_netpbm_header(data, b'P5', path)
    expected = offset + width * height
    if len(data) != expected:
        raise FormatError("PGM payload length mismatch", path=path, offset=offset,
                          expected=expected, actual=len(data))
    return np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(height, width).copy()


def encode_ppm(rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    height, width, _ = rgb.shape
    return f"P6\n{width} {height}\n255\n".encode('ascii') + rgb.tobytes(order='C')


def decode_ppm(data, path=None):
    """Parse binary PPM bytes into a (H, W, 3) uint8 array."""
    width, height, offset = _parse_netpbm_header(data, b'P6', path)
    expected = offset + width * height * 3
    if len(data) != expected:
        raise FormatError("PPM payload length mismatch", path=path, offset=offset,
                          expected=expected, actual=len(data))
    return np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(height, width, 3).copy()


def read_bytes(path):
    path = Path(path)
    try:
        return path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError("file not found", path=path) from exc


def write_pcv1(path, features):
    Path(path).write_bytes(encode_pcv1(features))


def read_pcv1(path):
    return decode_pcv1(read_bytes(path), path=path)


def write_pgm(path, raster):
    Path(path).write_bytes(encode_pgm(raster))


def read_pgm(path):
    return decode_pgm(read_bytes(path), path=path)


def write_ppm(path, rgb):
    Path(path).write_bytes(encode_ppm(rgb))
