"""Dataset loading, normalization, and deterministic batching.

Images live in [-1, 1] float32 throughout the package; uint8 pixels map
through x / 127.5 - 1 so 0 -> -1 and 255 -> +1 exactly. Three source kinds
are supported: IDX files in the classic big-endian layout, folders of image
files, and numbered frame sequences. 28px digit images are padded to 32px
with a -1 border so they fit power-of-two backbones.
"""

from __future__ import annotations

import gzip
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from .errors import ConfigError, IntegrityError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
DATA_DIR_ENV = "INVGAN_DATA_DIR"

DATASET_KINDS = ("mnist_idx", "image_folder", "frame_sequence")


def from_uint8(pixels: np.ndarray) -> Tensor:
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return torch.from_numpy(pixels.astype(np.float32) / 127.5 - 1.0)

def to_uint8(x: Tensor) -> np.ndarray:
    """float32 [-1, 1] -> uint8 [0, 255], rounding to nearest."""
    arr = ((x.detach().cpu().float() + 1.0) * 127.5).round().clamp(0, 255)
    return arr.numpy().astype(np.uint8)


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a uint8 array [N, H, W]."""
    path = Path(path)
    with _open_maybe_gzip(path) as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise IntegrityError(f"{path}: truncated IDX image header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise IntegrityError(f"{path}: bad IDX image magic {magic:#x}")
        raw = fh.read(n * rows * cols)
    if len(raw) != n * rows * cols:
        raise IntegrityError(f"{path}: IDX image payload is truncated")
    return np.frombuffer(raw, dtype=np.uint8).reshape(n, rows, cols).copy()


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX label file into a uint8 array [N]."""
    path = Path(path)
    with _open_maybe_gzip(path) as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise IntegrityError(f"{path}: truncated IDX label header")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise IntegrityError(f"{path}: bad IDX label magic {magic:#x}")
        raw = fh.read(n)
    if len(raw) != n:
        raise IntegrityError(f"{path}: IDX label payload is truncated")
    return np.frombuffer(raw, dtype=np.uint8).copy()


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def pad_to(x: Tensor, resolution: int, fill: float = -1.0) -> Tensor:
    """Center-pad [N, C, H, W] images to a square resolution with fill."""
    h, w = x.shape[-2:]
    if h == resolution and w == resolution:
        return x
    if h > resolution or w > resolution:
        raise ConfigError(f"cannot pad {h}x{w} images down to {resolution}px")
    top = (resolution - h) // 2
    left = (resolution - w) // 2
    pads = (left, resolution - w - left, top, resolution - h - top)
    return torch.nn.functional.pad(x, pads, value=fill)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    path: str
    resolution: int = 32
    channels: int = 1
    split: str = "train"

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.split not in ("train", "test"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.resolution < 1 or self.channels < 1:
            raise ConfigError("resolution and channels must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "path": self.path,
            "resolution": self.resolution,
            "channels": self.channels,
            "split": self.split,
        }


class Dataset:
    """In-memory image set with deterministic shuffled batching."""

    def __init__(self, images: Tensor, labels: Optional[Tensor] = None):
        if images.ndim != 4:
            raise ConfigError(f"expected [N, C, H, W] images, got shape {tuple(images.shape)}")
        if labels is not None and len(labels) != len(images):
            raise ConfigError("labels and images disagree on length")
        self.images = images
        self.labels = labels

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def resolution(self) -> int:
        return self.images.shape[2]

    def batches(
        self, batch_size: int, seed: int, with_labels: bool = False
    ) -> Iterator:
        """Yield full batches in an order fully determined by seed."""
        if batch_size < 1:
            raise ConfigError("batch size must be positive")
        if with_labels and self.labels is None:
            raise ConfigError("dataset has no labels")
        gen = torch.Generator().manual_seed(seed)
        perm = torch.randperm(len(self), generator=gen)
        for i in range(0, len(self) - batch_size + 1, batch_size):
            idx = perm[i : i + batch_size]
            if with_labels:
                yield self.images[idx], self.labels[idx]
            else:
                yield self.images[idx]

    def sample(self, n: int, seed: int) -> Tensor:
        """A random n-image subset, deterministic under seed."""
        n = min(n, len(self))
        gen = torch.Generator().manual_seed(seed)
        return self.images[torch.randperm(len(self), generator=gen)[:n]]

    def take(self, n: int) -> "Dataset":
        n = min(n, len(self))
        labels = self.labels[:n] if self.labels is not None else None
        return Dataset(self.images[:n], labels)


def resolve_data_path(path: str) -> Path:
    """Resolve a dataset path, falling back to the data-dir env var."""
    if path:
        p = Path(path)
        if p.exists():
            return p
        root = os.environ.get(DATA_DIR_ENV)
        if root and (Path(root) / path).exists():
            return Path(root) / path
        raise ConfigError(f"dataset path {path!r} does not exist")
    root = os.environ.get(DATA_DIR_ENV)
    if not root:
        raise ConfigError(f"no dataset path given and {DATA_DIR_ENV} is not set")
    return Path(root)


def _find_idx_file(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (root / name).exists():
            return root / name
    raise ConfigError(f"missing IDX file {stem}[.gz] under {root}")


def _load_mnist_idx(spec: DatasetSpec) -> Dataset:
    root = resolve_data_path(spec.path)
    prefix = "train" if spec.split == "train" else "t10k"
    images = read_idx_images(_find_idx_file(root, f"{prefix}-images-idx3-ubyte"))
    labels = read_idx_labels(_find_idx_file(root, f"{prefix}-labels-idx1-ubyte"))
    x = from_uint8(images).unsqueeze(1)
    x = pad_to(x, spec.resolution)
    if spec.channels != 1:
        raise ConfigError("IDX digit data is single-channel")
    return Dataset(x, torch.from_numpy(labels.astype(np.int64)))


def load_image(path, channels: int, resolution: Optional[int] = None) -> Tensor:
    """Load one image file to a [C, H, W] tensor in [-1, 1]."""
    img = Image.open(path)
    img = img.convert("L" if channels == 1 else "RGB")
    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    x = from_uint8(arr).permute(2, 0, 1)
    if resolution is not None and x.shape[-2:] != (resolution, resolution):
        raise ConfigError(
            f"{path}: expected {resolution}x{resolution}px, got {x.shape[-2]}x{x.shape[-1]}"
        )
    return x


def save_image(x: Tensor, path) -> None:
    """Save a [C, H, W] tensor in [-1, 1] as an image file."""
    arr = to_uint8(x)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _numeric_key(path: Path):
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]) if digits else 0, path.name)


def list_frames(folder) -> list:
    """Image files under folder in frame order (numeric suffix, then name)."""
    folder = Path(folder)
    frames = [p for p in sorted(folder.iterdir()) if p.suffix.lower() in _IMAGE_SUFFIXES]
    if not frames:
        raise ConfigError(f"no image files under {folder}")
    return sorted(frames, key=_numeric_key)


def _load_folder(spec: DatasetSpec, ordered: bool) -> Dataset:
    root = resolve_data_path(spec.path)
    paths = list_frames(root) if ordered else sorted(
        p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not paths:
        raise ConfigError(f"no image files under {root}")
    images = torch.stack([load_image(p, spec.channels, spec.resolution) for p in paths])
    return Dataset(images)


def load_dataset(spec: DatasetSpec) -> Dataset:
    if spec.kind == "mnist_idx":
        return _load_mnist_idx(spec)
    if spec.kind == "image_folder":
        return _load_folder(spec, ordered=False)
    return _load_folder(spec, ordered=True)
