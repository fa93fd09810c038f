"""8-bit label PNGs, image rasters, and 4x4 transform sidecars."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ParseError, WrongBitDepth, WrongChannelCount
from ..geometry import PoseSE3


def read_label_png(path) -> np.ndarray:
    """Read an 8-bit single-channel raster of class ids (0 = unlabeled)."""
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("L", "P"):
            # palette indices are the class ids
            return np.array(im, dtype=np.uint8)
        if mode in ("1", "I", "I;16", "I;16B", "I;16L", "F"):
            raise WrongBitDepth(f"{path}: label maps must be 8-bit, got mode {mode}")
        raise WrongChannelCount(f"{path}: label maps must have one channel, got mode {mode}")


def write_label_png(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise WrongChannelCount(f"label map must be 2-D, got shape {labels.shape}")
    if labels.dtype != np.uint8:
        if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
            raise WrongBitDepth("class ids must fit in 8 bits")
        labels = labels.astype(np.uint8)
    Image.fromarray(labels).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)


def write_image(array: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(array)).save(path)


def write_transform(pose: PoseSE3, path) -> None:
    """Plain-text 4x4 row-major matrix, one row per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in pose.matrix:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_transform(path) -> PoseSE3:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(v) for v in line.split()])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    m = np.array(rows, dtype=float)
    if m.shape != (4, 4):
        raise ParseError(f"expected 4x4 matrix, got shape {m.shape}", path)
    try:
        return PoseSE3.from_matrix(m)
    except ValueError as exc:
        raise ParseError(str(exc), path) from None
