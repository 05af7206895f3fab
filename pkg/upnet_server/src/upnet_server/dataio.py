"""Readers for the dataset interchange formats.

The training data arrives as a manifest directory produced by the
selection package's gen-dataset command. Everything is parsed here
from the documented text grammars; this package deliberately shares
no code with the producer, so the formats are the only contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised when an input file does not match its format."""


# ---------------------------------------------------------------------------
# Portable pixmaps (P6 color, P5 gray, 8-bit)


def read_ppm(path) -> np.ndarray:
    """Loads a binary PPM/PGM as float32 HxWx3 in [0, 1]."""
    buf = Path(path).read_bytes()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(buf):
        c = buf[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(buf) and buf[j : j + 1] not in b" \t\r\n":
                j += 1
            tokens.append(buf[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] not in (b"P6", b"P5"):
        raise DataError(f"{path}: not a binary PPM/PGM")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DataError(f"{path}: bad header numbers") from None
    if maxval != 255 or width <= 0 or height <= 0:
        raise DataError(f"{path}: unsupported header {width}x{height}/{maxval}")
    channels = 3 if tokens[0] == b"P6" else 1
    need = width * height * channels
    data = buf[i + 1 : i + 1 + need]
    if len(data) != need:
        raise DataError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8).astype(np.float32) / 255.0
    pixels = pixels.reshape(height, width, channels)
    if channels == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return pixels


# ---------------------------------------------------------------------------
# Uncertainty map files


def read_umap_values(path) -> np.ndarray:
    """The 48 anchor values of a stored uncertainty map, in file order."""
    lines = [
        ln.strip()
        for ln in Path(path).read_text(encoding="utf-8").splitlines()
        if ln.strip()
    ]
    if not lines or not lines[0].startswith("PUNUMAP 1 "):
        raise DataError(f"{path}: not a version-1 uncertainty map")
    values = []
    for ln in lines[2:]:
        fields = ln.split()
        if len(fields) != 4:
            raise DataError(f"{path}: anchor rows need 4 fields")
        try:
            values.append(float(fields[3]))
        except ValueError:
            raise DataError(f"{path}: bad value {fields[3]!r}") from None
    out = np.asarray(values, dtype=np.float32)
    if out.shape != (48,):
        raise DataError(f"{path}: expected 48 anchor rows, found {len(out)}")
    if out.min() < 0.0 or out.max() > 1.0:
        raise DataError(f"{path}: values outside [0, 1]")
    return out


# ---------------------------------------------------------------------------
# Dataset manifests


@dataclass(frozen=True)
class Sample:
    """One training pair: an image path and its target map values."""

    instance_id: str
    image_path: Path
    umap_path: Path


def load_samples(manifest_path, kind: str) -> list[Sample]:
    """All (image, umap) pairs of the given kind listed by a manifest."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("PUNSET 1"):
        raise DataError(f"{manifest_path}: not a version-1 dataset manifest")
    samples = []
    instance = ""
    image: Path | None = None
    for raw in lines[1:]:
        fields = raw.split()
        if not fields:
            continue
        if fields[0] == "instance" and len(fields) == 2:
            instance = fields[1]
        elif fields[0] == "image" and len(fields) == 2:
            image = root / fields[1]
        elif fields[0] == "umap" and len(fields) == 3 and fields[1] == kind:
            if image is None:
                raise DataError(f"{manifest_path}: umap line before any image")
            samples.append(
                Sample(
                    instance_id=instance,
                    image_path=image,
                    umap_path=root / fields[2],
                )
            )
    if not samples:
        raise DataError(
            f"{manifest_path}: no samples of kind {kind!r} in the manifest"
        )
    return samples


def load_arrays(samples: list[Sample]) -> tuple[list[np.ndarray], np.ndarray]:
    """Reads every sample: (list of HxWx3 images, (n, 48) targets)."""
    images = [read_ppm(s.image_path) for s in samples]
    targets = np.stack([read_umap_values(s.umap_path) for s in samples])
    return images, targets
