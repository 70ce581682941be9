"""Binary PPM (P6) images in and out."""
from __future__ import annotations

import numpy as np

from .errors import ImageFormatError
from .tensor import DTYPE, UpsampleSpec, bilinear_resample

BGR_MEANS = (104.0, 117.0, 123.0)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PPM header")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes into an ``(H, W, 3)`` uint8 RGB array."""
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise ImageFormatError(f"not a binary PPM (magic {magic[:8]!r})")
    fields = []
    for what in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"malformed PPM {what}: {tok[:16]!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PPM size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval} (only 255)")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PPM header")
    pos += 1
    need = width * height * 3
    pixels = data[pos : pos + need]
    if len(pixels) != need:
        raise ImageFormatError(f"PPM pixel data truncated: {len(pixels)} of {need} bytes")
    return np.frombuffer(pixels, np.uint8).reshape(height, width, 3)


def encode_ppm(rgb) -> bytes:
    rgb = np.asarray(rgb, np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ImageFormatError(f"expected an (H, W, 3) array, got {rgb.shape}")
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_ppm(path, rgb) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(rgb))


def preprocess(rgb, target_hw, means=BGR_MEANS) -> np.ndarray:
    """RGB ``(H, W, 3)`` -> ``(1, 3, H', W')`` BGR float tensor, mean-subtracted."""
    rgb = np.asarray(rgb)
    bgr = rgb[:, :, ::-1].transpose(2, 0, 1)[None].astype(DTYPE)
    th, tw = target_hw
    if bgr.shape[2:] != (th, tw):
        bgr = bilinear_resample(bgr, UpsampleSpec.to_size(bgr.shape[2:], (th, tw)))
    return bgr - np.asarray(means, DTYPE)[None, :, None, None]


def load_image_ppm(path, target_hw, means=BGR_MEANS) -> np.ndarray:
    with open(path, "rb") as fh:
        return preprocess(decode_ppm(fh.read()), target_hw, means)
