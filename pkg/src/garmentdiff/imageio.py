"""PNG helpers.

Channel semantics on disk:
  RGB images   8-bit RGB, value/255 in [0, 1]
  masks        8-bit L, 0 or 255
  parse maps   8-bit L holding the label id
  dense maps   8-bit RGB: R = u, G = v (scaled to 255), B = 255 on body pixels
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_rgb(path, img: np.ndarray) -> None:
    """``img`` is [3, H, W] in [0, 1]."""
    Image.fromarray(to_uint8(np.moveaxis(img, 0, -1))).save(Path(path), format="PNG")


def load_rgb(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return np.moveaxis(arr, -1, 0)


def save_mask(path, mask: np.ndarray) -> None:
    m = np.asarray(mask).reshape(mask.shape[-2:])
    Image.fromarray((m > 0.5).astype(np.uint8) * 255).save(Path(path), format="PNG")


def load_mask(path) -> np.ndarray:
    return (np.asarray(Image.open(path).convert("L")) > 127).astype(np.float64)[None]


def save_labels(path, labels: np.ndarray) -> None:
    Image.fromarray(labels.astype(np.uint8)).save(Path(path), format="PNG")


def load_labels(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")).astype(np.int64)


def save_dense(path, dense: np.ndarray, body: np.ndarray) -> None:
    rgb = np.concatenate([dense, body.reshape(1, *dense.shape[-2:]).astype(np.float64)], axis=0)
    save_rgb(path, rgb)


def load_dense(path) -> tuple[np.ndarray, np.ndarray]:
    rgb = load_rgb(path)
    return rgb[:2] * (rgb[2:3] > 0.5), rgb[2] > 0.5
