"""Object images for hologram synthesis.

Bundled scikit-image sample pictures stand in for the classic test images;
``camera`` is the usual "Cameraman".
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .field import as_gray8, load_pgm, save_pgm

TRAIN_OBJECTS = (
    "astronaut", "coins", "moon", "brick", "clock",
    "coffee", "rocket", "cell", "page", "text",
)
TEST_OBJECTS = ("camera", "chelsea")


def _sample(name: str) -> np.ndarray:
    import skimage.data

    loader = getattr(skimage.data, name, None)
    if loader is None or name.startswith("_"):
        raise KeyError(f"unknown sample image {name!r}")
    a = np.asarray(loader(), dtype=np.float64)
    if a.ndim == 3:
        a = a[..., :3].mean(axis=-1)
    if a.max() <= 1.0:
        a = a * 255.0
    return a


def resize_gray(a, size) -> np.ndarray:
    from skimage.transform import resize

    h, w = (size, size) if np.isscalar(size) else size
    # center-crop to the target aspect ratio before scaling
    ah, aw = a.shape
    target = w / h
    if aw / ah > target:
        cw = int(round(ah * target))
        a = a[:, (aw - cw) // 2:(aw - cw) // 2 + cw]
    else:
        ch = int(round(aw / target))
        a = a[(ah - ch) // 2:(ah - ch) // 2 + ch, :]
    out = resize(np.asarray(a, dtype=np.float64), (h, w), anti_aliasing=True, preserve_range=True)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def load_object(name_or_path, size) -> np.ndarray:
    """A square gray object image, from a PGM path or a scikit-image sample name."""
    p = Path(str(name_or_path))
    if p.suffix.lower() == ".pgm" or p.exists():
        img = load_pgm(p)
        if img.shape == ((size, size) if np.isscalar(size) else tuple(size)):
            return img
        return resize_gray(img.astype(np.float64), size)
    return resize_gray(_sample(str(name_or_path)), size)


def write_objects(names, size, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in names:
        path = directory / f"{Path(str(name)).stem}.pgm"
        save_pgm(as_gray8(load_object(name, size)), path)
        paths.append(path)
    return paths
