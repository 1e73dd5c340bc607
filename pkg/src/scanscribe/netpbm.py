"""Binary netpbm readers/writers (P5 grayscale, P6 color), maxval 255."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _read_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise DataError(f"expected {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated netpbm header")
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1  # width, height, maxval, offset


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    width, height, maxval, offset = _read_header(data, b"P5")
    if maxval != 255:
        raise DataError(f"only maxval 255 supported, got {maxval}")
    if len(data) - offset < width * height:
        raise DataError("truncated PGM pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return pixels.reshape(height, width).copy()


def write_pgm(path, image: np.ndarray):
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(f"PGM writer wants a 2D uint8 array, got {arr.dtype} {arr.shape}")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    width, height, maxval, offset = _read_header(data, b"P6")
    if maxval != 255:
        raise DataError(f"only maxval 255 supported, got {maxval}")
    if len(data) - offset < width * height * 3:
        raise DataError("truncated PPM pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=offset)
    return pixels.reshape(height, width, 3).copy()


def write_ppm(path, image: np.ndarray):
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise DataError(f"PPM writer wants an (H, W, 3) uint8 array, got {arr.dtype} {arr.shape}")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())
