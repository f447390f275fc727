"""Image preprocessing: resize the shorter edge, center crop, normalize."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image


def resize_shorter_edge(img: Image.Image, target: int) -> Image.Image:
    w, h = img.size
    if w <= h:
        new_w, new_h = target, max(1, round(h * target / w))
    else:
        new_w, new_h = max(1, round(w * target / h)), target
    return img.resize((new_w, new_h), Image.Resampling.BICUBIC)


def center_crop(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    left = (w - size) // 2
    top = (h - size) // 2
    return img.crop((left, top, left + size, top + size))


def to_normalized_tensor(img: Image.Image, mean, std) -> torch.Tensor:
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def preprocess(img: Image.Image, resolution: int, mean, std) -> torch.Tensor:
    """Resize shorter edge to `resolution`, center crop, normalize; (3, R, R)."""
    return to_normalized_tensor(center_crop(resize_shorter_edge(img, resolution), resolution), mean, std)
