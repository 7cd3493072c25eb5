"""Patch-grid inversion for images larger than the backbone resolution.

A high-resolution image is cut into an n x n row-major grid of m-px patches
(m = the model's native resolution), every patch is inverted in one batched
forward, and the resulting code grid stands in for the image. Reconstruction,
deblurring by latent extrapolation, and temporal interpolation of frame
sequences all operate on these grids. decompose/reassemble is an exact
bijection on pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigError, IntegrityError
from .models import InvGan

_GENERATE_CHUNK = 256  # patches per generator forward, bounds peak memory


@dataclass
class TileGrid:
    """Latent codes of an n x n patch grid, rows in row-major patch order."""

    codes: Tensor
    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ConfigError("grid side and patch size must be positive")
        if self.codes.ndim != 2 or self.codes.shape[0] != self.n * self.n:
            raise ConfigError(
                f"expected [{self.n * self.n}, d_w] codes for an n={self.n} grid, "
                f"got shape {tuple(self.codes.shape)}"
            )

    @property
    def d_w(self) -> int:
        return self.codes.shape[1]

    @property
    def source_resolution(self) -> int:
        return self.n * self.m


def decompose(x: Tensor, m: int) -> Tensor:
    """Cut a [C, n*m, n*m] image into [n*n, C, m, m] row-major patches."""
    if x.ndim != 3:
        raise ConfigError(f"expected a [C, H, W] image, got shape {tuple(x.shape)}")
    c, h, w = x.shape
    if h != w:
        raise ConfigError(f"tiling needs a square image, got {h}x{w}")
    if h % m:
        raise ConfigError(f"resolution {h} is not divisible by patch size {m}")
    n = h // m
    patches = x.view(c, n, m, n, m).permute(1, 3, 0, 2, 4)
    return patches.reshape(n * n, c, m, m)


def reassemble(patches: Tensor, n: int) -> Tensor:
    """Inverse of decompose: [n*n, C, m, m] row-major patches -> [C, n*m, n*m]."""
    if patches.ndim != 4:
        raise ConfigError(f"expected [P, C, m, m] patches, got shape {tuple(patches.shape)}")
    p, c, m, m2 = patches.shape
    if m != m2:
        raise ConfigError(f"patches must be square, got {m}x{m2}")
    if p != n * n:
        raise ConfigError(f"expected {n * n} patches for an n={n} grid, got {p}")
    x = patches.view(n, n, c, m, m).permute(2, 0, 3, 1, 4)
    return x.reshape(c, n * m, n * m)


def tiled_invert(x: Tensor, model: InvGan) -> TileGrid:
    """Invert every native-resolution patch of a larger image in one batch."""
    m = model.spec.resolution
    patches = decompose(x, m)
    n = x.shape[-1] // m
    model.eval()
    with torch.no_grad():
        codes = model.discriminate(patches).inferred_w
    return TileGrid(codes=codes, n=n, m=m)


def tiled_reconstruct(grid: TileGrid, model: InvGan) -> Tensor:
    """Generate every patch from its code and stitch the full image back."""
    if grid.m != model.spec.resolution:
        raise ConfigError(
            f"grid patches are {grid.m}px but the model renders {model.spec.resolution}px"
        )
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, grid.codes.shape[0], _GENERATE_CHUNK):
            outs.append(model.generate(grid.codes[start : start + _GENERATE_CHUNK]))
    return reassemble(torch.cat(outs, dim=0), grid.n)


def gaussian_blur(x: Tensor, sigma: float = 2.0) -> Tensor:
    """Separable Gaussian blur with a 3-sigma kernel and reflect padding."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
    radius = max(1, math.ceil(3 * sigma))
    coords = torch.arange(-radius, radius + 1, dtype=x.dtype)
    kernel = torch.exp(-(coords**2) / (2 * sigma**2))
    kernel = kernel / kernel.sum()
    c = x.shape[1]
    kx = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    out = F.pad(x, (radius, radius, 0, 0), mode="reflect")
    out = F.conv2d(out, kx, groups=c)
    out = F.pad(out, (0, 0, radius, radius), mode="reflect")
    out = F.conv2d(out, ky, groups=c)
    return out[0] if single else out


def bicubic_upsample(x: Tensor, scale: int) -> Tensor:
    """Bicubic upsampling clamped back into [-1, 1]."""
    if scale < 1:
        raise ValueError(f"scale must be at least 1, got {scale}")
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
    out = F.interpolate(x, scale_factor=scale, mode="bicubic", align_corners=False)
    out = out.clamp(-1, 1)
    return out[0] if single else out


def deblur_extrapolate(
    x: Tensor,
    model: InvGan,
    alphas: Sequence[float],
    blur_op=None,
    blur_sigma: float = 2.0,
) -> list:
    """Sharpen by stepping away from the blur direction in latent space.

    blur_op is any deterministic image -> image operator (default: Gaussian
    blur at blur_sigma). d = codes(blur_op(x)) - codes(x) points toward
    blurrier images; each output reconstructs codes - alpha * d. alpha = 0
    returns the plain tiled reconstruction unchanged.
    """
    if len(alphas) == 0:
        raise ValueError("need at least one extrapolation alpha")
    if blur_op is None:
        blur_op = lambda img: gaussian_blur(img, blur_sigma)  # noqa: E731
    grid = tiled_invert(x, model)
    blurred = tiled_invert(blur_op(x), model)
    direction = blurred.codes - grid.codes
    return [
        tiled_reconstruct(
            TileGrid(codes=grid.codes - alpha * direction, n=grid.n, m=grid.m), model
        )
        for alpha in alphas
    ]


def gaussian_window_weights(t: float, n_frames: int, sigma: float) -> Tensor:
    """Normalized Gaussian frame weights at time t, truncated at 3 sigma.

    Frames farther than 3 sigma from t get exactly zero weight; if no frame
    is in range the nearest one (earlier on ties) gets weight 1. The result
    always sums to 1.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    j = torch.arange(n_frames, dtype=torch.float64)
    dist = (j - t).abs()
    weights = torch.where(
        dist <= 3 * sigma, torch.exp(-((j - t) ** 2) / (2 * sigma**2)), torch.zeros_like(j)
    )
    total = weights.sum()
    if total == 0:
        weights[int(dist.argmin())] = 1.0
        return weights
    return weights / total


def temporal_interpolate(
    grids: Sequence[TileGrid], factor: int, window_sigma: float = 1.0
) -> list:
    """Resample a code-grid sequence to factor x the frame rate.

    Output i sits at source time i / factor; its codes are the Gaussian-
    window average of the input grids, so the sequence is smoothed as well
    as densified. Returns (len(grids) - 1) * factor + 1 grids.
    """
    if len(grids) < 2:
        raise ValueError("need at least two frames to interpolate")
    if factor < 1:
        raise ValueError(f"factor must be at least 1, got {factor}")
    first = grids[0]
    for g in grids[1:]:
        if (g.n, g.m, g.d_w) != (first.n, first.m, first.d_w):
            raise ConfigError("all frames must share grid size, patch size, and code width")
    stack = torch.stack([g.codes.double() for g in grids])  # [F, n*n, d_w]
    out = []
    for i in range((len(grids) - 1) * factor + 1):
        w = gaussian_window_weights(i / factor, len(grids), window_sigma)
        codes = (w[:, None, None] * stack).sum(dim=0)
        out.append(TileGrid(codes=codes.to(first.codes.dtype), n=first.n, m=first.m))
    return out


def save_tile_grid(grid: TileGrid, path, checkpoint_id: Optional[str] = None) -> None:
    """Write a grid as a one-line JSON header plus a raw float32 code block."""
    header = {
        "m": grid.m,
        "n": grid.n,
        "d_w": grid.d_w,
        "checkpoint_id": checkpoint_id,
    }
    blob = grid.codes.detach().cpu().numpy().astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_tile_grid(path) -> tuple:
    """Read a saved grid; returns (TileGrid, checkpoint_id or None)."""
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise IntegrityError(f"{path}: missing tile-grid header")
    try:
        header = json.loads(raw[:newline].decode())
        n, m, d_w = header["n"], header["m"], header["d_w"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise IntegrityError(f"{path}: unreadable tile-grid header") from exc
    blob = raw[newline + 1 :]
    expected = n * n * d_w * 4
    if len(blob) != expected:
        raise IntegrityError(f"{path}: expected {expected} code bytes, got {len(blob)}")
    codes = torch.from_numpy(np.frombuffer(blob, dtype="<f4").reshape(n * n, d_w).copy())
    return TileGrid(codes=codes, n=n, m=m), header.get("checkpoint_id")
