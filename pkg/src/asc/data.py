"""Image folders and deterministic synthetic corpora.

Datasets are plain folders of images.  The synthetic generators produce
smooth, learnable desk-scale material: a diverse corpus for baseline
training, and narrow "scene" families (shared palette and geometry,
jittered per frame) standing in for the I-frames of one video scene.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .errors import DataError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def load_image(path: str | Path) -> torch.Tensor:
    """Load an RGB image as a (3, H, W) float tensor in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(x: torch.Tensor, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = (x.detach().clamp(0, 1).permute(1, 2, 0).numpy() * 255.0).round()
    Image.fromarray(arr.astype(np.uint8)).save(path)
    return path


def list_images(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise DataError(f"dataset folder {folder} does not exist")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_folder(folder: str | Path, limit: Optional[int] = None) -> list[torch.Tensor]:
    paths = list_images(folder)
    if not paths:
        raise DataError(f"dataset folder {folder} holds no images")
    if limit is not None:
        paths = paths[:limit]
    return [load_image(p) for p in paths]


# -- synthetic material ----------------------------------------------------


def _gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(0.15, 0.85, size=3)
    gx = rng.uniform(-0.5, 0.5, size=3)
    gy = rng.uniform(-0.5, 0.5, size=3)
    img = base[None, None] + xx[..., None] * gx + yy[..., None] * gy
    phase = rng.uniform(0, 2 * np.pi)
    freq = rng.uniform(1.0, 3.0)
    wave = 0.08 * np.sin(2 * np.pi * freq * (xx * np.cos(phase) + yy * np.sin(phase)))
    return img + wave[..., None]


def _blob(img: np.ndarray, rng: np.random.Generator, color: np.ndarray,
          center: np.ndarray, radii: np.ndarray, angle: float) -> None:
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size] / size
    dx, dy = xx - center[0], yy - center[1]
    ca, sa = np.cos(angle), np.sin(angle)
    u = (dx * ca + dy * sa) / radii[0]
    v = (-dx * sa + dy * ca) / radii[1]
    d = np.sqrt(u**2 + v**2)
    soft = 1.0 / (1.0 + np.exp((d - 1.0) / 0.08))
    img += soft[..., None] * (color[None, None] - img)


def synth_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """One diverse training image: gradient field plus random soft blobs."""
    img = _gradient(rng, size)
    for _ in range(rng.integers(2, 6)):
        _blob(
            img, rng,
            color=rng.uniform(0.05, 0.95, size=3),
            center=rng.uniform(0.1, 0.9, size=2),
            radii=rng.uniform(0.08, 0.35, size=2),
            angle=rng.uniform(0, np.pi),
        )
    img += rng.normal(0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


class SceneSpec:
    """A fixed palette and blob geometry; frames jitter around it."""

    def __init__(self, seed: int, size: int = 64, blobs: int = 5):
        rng = np.random.default_rng(seed)
        self.size = size
        self.background = rng.uniform(0.2, 0.8, size=3)
        self.gradient = rng.uniform(-0.4, 0.4, size=(2, 3))
        self.colors = rng.uniform(0.05, 0.95, size=(blobs, 3))
        self.centers = rng.uniform(0.15, 0.85, size=(blobs, 2))
        self.radii = rng.uniform(0.08, 0.3, size=(blobs, 2))
        self.angles = rng.uniform(0, np.pi, size=blobs)

    def frame(self, rng: np.random.Generator) -> np.ndarray:
        size = self.size
        yy, xx = np.mgrid[0:size, 0:size] / size
        img = (
            self.background[None, None]
            + xx[..., None] * self.gradient[0]
            + yy[..., None] * self.gradient[1]
        )
        for i in range(len(self.colors)):
            _blob(
                img, rng,
                color=self.colors[i],
                center=self.centers[i] + rng.normal(0, 0.02, size=2),
                radii=self.radii[i] * rng.uniform(0.95, 1.05, size=2),
                angle=self.angles[i] + rng.normal(0, 0.05),
            )
        img += rng.normal(0, 0.005, size=img.shape)
        return np.clip(img, 0.0, 1.0).astype(np.float32)


def _to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def synth_corpus(n: int, size: int = 64, seed: int = 0) -> list[torch.Tensor]:
    """Diverse images for baseline training / held-out evaluation."""
    rng = np.random.default_rng(seed)
    return [_to_tensor(synth_image(rng, size)) for _ in range(n)]


def synth_scene(n: int, size: int = 64, seed: int = 0, blobs: int = 5) -> list[torch.Tensor]:
    """Frames of one narrow scene (the domain-adaptation target)."""
    spec = SceneSpec(seed=seed, size=size, blobs=blobs)
    rng = np.random.default_rng(seed + 1)
    return [_to_tensor(spec.frame(rng)) for _ in range(n)]


def write_corpus(folder: str | Path, images: list[torch.Tensor]) -> list[Path]:
    """Save tensors as zero-padded PNGs so folder order is deterministic."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    return [
        save_image(img, folder / f"img_{i:04d}.png") for i, img in enumerate(images)
    ]
