"""In-memory image type and portable pixmap (PPM/PGM) files.

Images are float64 arrays shaped (height, width, channels), channels 1 or
3, values in [0, 1], row 0 at the top. Files use the binary portable
formats (P6 for 3 channels, P5 for 1) with maxval 255; quantization is
round-half-away via np.rint, so writes are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.dtype != np.float64:
            raise ValueError("pixels must be a float64 array of shape (h, w, c)")
        if p.shape[2] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {p.shape[2]}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"empty image shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("pixel values must be finite and in [0, 1]")
        p.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def luminance(self) -> np.ndarray:
        """Per-pixel channel mean, shape (h, w)."""
        return self.pixels.mean(axis=2)


def image_from_array(arr) -> Image:
    """Wrap (h, w), (h, w, 1) or (h, w, 3) data, validating the contract."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return Image(np.ascontiguousarray(a))


def write_ppm(image: Image, path) -> None:
    quant = np.rint(image.pixels * 255.0).astype(np.uint8)
    magic = b"P6" if image.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    Path(path).write_bytes(header + quant.tobytes())


def _tokens(buf: bytes):
    """Yield whitespace-separated header tokens, skipping # comments."""
    i = 0
    n = len(buf)
    while i < n:
        c = buf[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < n and buf[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and buf[j : j + 1] not in b" \t\r\n":
                j += 1
            yield i, buf[i:j]
            i = j


def read_ppm(path) -> Image:
    buf = Path(path).read_bytes()
    toks = []
    pos_after = 0
    for pos, tok in _tokens(buf):
        toks.append(tok)
        if len(toks) == 4:
            pos_after = pos + len(tok)
            break
    if len(toks) < 4:
        raise FormatError(f"{path}: truncated pixmap header")
    magic = toks[0]
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"{path}: unsupported pixmap magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in toks[1:4])
    except ValueError:
        raise FormatError(f"{path}: non-numeric pixmap header") from None
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    data = buf[pos_after + 1 :]  # single whitespace byte after maxval
    need = width * height * channels
    if len(data) < need:
        raise FormatError(f"{path}: expected {need} pixel bytes, got {len(data)}")
    raw = np.frombuffer(data[:need], dtype=np.uint8)
    arr = raw.reshape(height, width, channels).astype(np.float64) / 255.0
    return Image(np.ascontiguousarray(arr))
