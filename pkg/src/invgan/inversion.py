"""One-pass inversion, reconstruction, and latent-space editing.

Inversion is a single discriminator forward: the inference head maps an
image straight to its latent code, so embedding costs the same as scoring.
Edits work by inverting an edited or composed image and regenerating it,
which projects the edit onto the model's learned manifold.

Every function here runs the model in eval mode under no_grad; given fixed
parameters they are pure, and repeated calls return identical tensors.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from .errors import IntegrityError, UnsupportedOperationError
from .models import InvGan


def _as_batch(x: Tensor, model: InvGan) -> tuple:
    s = model.spec
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim == 4:
        return x, False
    raise ValueError(
        f"expected [C, {s.resolution}, {s.resolution}] or a batch of them, got {tuple(x.shape)}"
    )


def invert(x: Tensor, model: InvGan) -> Tensor:
    """Embed images into latent space; [C,H,W] -> [d_w], batches keep a batch dim."""
    model.eval()
    batch, single = _as_batch(x, model)
    with torch.no_grad():
        w = model.discriminate(batch).inferred_w
    return w[0] if single else w


def generate_from(w: Tensor, model: InvGan) -> Tensor:
    """Decode latent codes back to images; [d_w] -> [C,H,W]."""
    model.eval()
    single = w.ndim == 1
    with torch.no_grad():
        x = model.generate(w.unsqueeze(0) if single else w)
    return x[0] if single else x


def reconstruct(x: Tensor, model: InvGan) -> Tensor:
    """Round-trip an image through latent space: generate(invert(x))."""
    return generate_from(invert(x, model), model)


def interpolate_midpoint(x_a: Tensor, x_b: Tensor, model: InvGan) -> Tensor:
    """Generate from the midpoint of the two images' latent codes."""
    w = (invert(x_a, model) + invert(x_b, model)) / 2
    return generate_from(w, model)


def style_mix(x_a: Tensor, x_b: Tensor, k: int, model: InvGan) -> Tensor:
    """Feed x_a's code to the first k style layers and x_b's to the rest.

    k = L reproduces x_a's reconstruction exactly and k = 0 reproduces
    x_b's. Only style_modulated backbones have per-layer inputs.
    """
    if model.spec.kind != "style_modulated":
        raise UnsupportedOperationError(
            "style mixing needs per-layer style inputs; the dcgan backbone has none"
        )
    n_layers = model.spec.n_style_layers
    if not 0 <= k <= n_layers:
        raise ValueError(f"crossover k must be in [0, {n_layers}], got {k}")
    model.eval()
    w_a = invert(x_a, model)
    w_b = invert(x_b, model)
    single = w_a.ndim == 1
    if single:
        w_a, w_b = w_a.unsqueeze(0), w_b.unsqueeze(0)
    with torch.no_grad():
        x = model.generate([w_a] * k + [w_b] * (n_layers - k))
    return x[0] if single else x


def mask_rect(x: Tensor, rect: Sequence[int]) -> Tensor:
    """Zero a (top, left, height, width) rectangle of a [C, H, W] image."""
    top, left, height, width = rect
    h, w = x.shape[-2:]
    if min(top, left, height, width) < 0 or top + height > h or left + width > w:
        raise ValueError(f"rectangle {tuple(rect)} falls outside a {h}x{w} image")
    out = x.clone()
    out[..., top : top + height, left : left + width] = 0.0
    return out


def inpaint(x: Tensor, rect: Sequence[int], model: InvGan) -> Tensor:
    """Reconstruct an image whose rectangle was zeroed; the model fills it in."""
    return reconstruct(mask_rect(x, rect), model)


def composite_images(
    x_a: Tensor, x_b: Tensor, axis: str = "width", split: Optional[int] = None
) -> Tensor:
    """Join x_a's leading part and x_b's trailing part at split (default half)."""
    if x_a.shape != x_b.shape:
        raise ValueError(f"images differ in shape: {tuple(x_a.shape)} vs {tuple(x_b.shape)}")
    if axis not in ("width", "height"):
        raise ValueError(f"axis must be 'width' or 'height', got {axis!r}")
    dim = -1 if axis == "width" else -2
    extent = x_a.shape[dim]
    split = extent // 2 if split is None else split
    if not 0 <= split <= extent:
        raise ValueError(f"split {split} outside [0, {extent}]")
    out = x_b.clone()
    if axis == "width":
        out[..., :, :split] = x_a[..., :, :split]
    else:
        out[..., :split, :] = x_a[..., :split, :]
    return out


def merge(
    x_a: Tensor, x_b: Tensor, model: InvGan, axis: str = "width", split: Optional[int] = None
) -> Tensor:
    """Reconstruct a two-image composite, blending the seam on the manifold."""
    return reconstruct(composite_images(x_a, x_b, axis, split), model)


def export_latents(codes: Tensor, path, checkpoint_id: str, sources: Sequence[str]) -> Path:
    """Write codes as raw little-endian float32 plus a JSON sidecar.

    The sidecar (path + ".json") records count, d_w, the producing
    checkpoint id, and one source label per row.
    """
    if codes.ndim != 2:
        raise ValueError(f"expected [N, d_w] codes, got shape {tuple(codes.shape)}")
    if len(sources) != codes.shape[0]:
        raise ValueError("need one source label per latent row")
    path = Path(path)
    arr = codes.detach().cpu().numpy().astype("<f4")
    path.write_bytes(arr.tobytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(
        json.dumps(
            {
                "count": int(codes.shape[0]),
                "d_w": int(codes.shape[1]),
                "checkpoint_id": checkpoint_id,
                "sources": list(sources),
            },
            indent=2,
        )
        + "\n"
    )
    return sidecar


def load_latents(path) -> tuple:
    """Read an exported latent file; returns (codes [N, d_w], sidecar dict)."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise IntegrityError(f"latent sidecar {sidecar} is missing")
    meta = json.loads(sidecar.read_text())
    raw = path.read_bytes()
    count, d_w = meta["count"], meta["d_w"]
    if len(raw) != count * d_w * 4:
        raise IntegrityError(
            f"{path}: expected {count * d_w * 4} bytes for {count}x{d_w} float32, got {len(raw)}"
        )
    codes = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(count, d_w).copy())
    return codes, meta
