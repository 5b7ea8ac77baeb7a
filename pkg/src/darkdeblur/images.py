"""Image file IO.

Arrays are channel-first float32 RGB in [0, 1] throughout the package;
files are 8-bit PNG (outputs, lossless) or PNG/JPEG (inputs).
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

INPUT_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_image(path):
    """Decode an 8-bit image file to a (3, H, W) float32 array in [0, 1]."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"))
    return (rgb.astype(np.float32) / 255.0).transpose(2, 0, 1)


def save_image(path, img):
    """Write a (3, H, W) float array in [0, 1] as an 8-bit image file."""
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got shape {img.shape}")
    quantised = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantised.transpose(1, 2, 0)).save(path)


def image_size(path):
    """(height, width) from the file header, without decoding pixel data."""
    with Image.open(path) as im:
        w, h = im.size
    return h, w


def list_images(directory):
    """Sorted image files directly under ``directory``."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in INPUT_SUFFIXES)


def to_tensor(img):
    """numpy (C, H, W) float -> torch float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(img)).float()


def to_numpy(tensor):
    """torch tensor -> float32 numpy array."""
    return tensor.detach().cpu().numpy().astype(np.float32)
