"""Networks: mapping M, generator G, and the dual-head discriminator D.

Two interchangeable backbones are provided behind one interface:

* ``dcgan``: transposed-convolution generator driven by a single latent w.
* ``style_modulated``: a compact generator with one per-resolution style
  injection point, so a w vector (or a list of per-layer w vectors) modulates
  each block. This is what style mixing operates on.

The discriminator has a shared convolutional trunk producing a feature
vector, from which two independent fully connected heads branch: a real/fake
score head and a latent inference head. The score is never a function of the
inferred latent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigError

BACKBONE_KINDS = ("dcgan", "style_modulated")


class DiscriminatorOutput(NamedTuple):
    score: Tensor        # [B] pre-activation logits
    inferred_w: Tensor   # [B, d_w]
    features: Tensor     # [B, d_f] trunk output both heads branch from


@dataclass(frozen=True)
class BackboneSpec:
    """Architecture hyperparameters, serialized into configs and checkpoints."""

    kind: str = "dcgan"
    resolution: int = 32
    channels: int = 1
    d_z: int = 64
    d_w: int = 64
    d_f: int = 128
    widths: tuple = (128, 64, 32)  # generator channels at 4px, 8px, ... res/2
    mapping_depth: Optional[int] = None  # default 2 for dcgan, 8 for style_modulated

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        if self.mapping_depth is None:
            object.__setattr__(self, "mapping_depth", 2 if self.kind == "dcgan" else 8)
        if self.mapping_depth < 1:
            raise ConfigError("mapping_depth must be >= 1")
        if min(self.d_z, self.d_w, self.d_f) < 1 or any(w < 1 for w in self.widths):
            raise ConfigError("latent, feature, and stage widths must be positive")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        n = self.resolution
        if n < 8 or n & (n - 1):
            raise ConfigError("resolution must be a power of two >= 8")
        if len(self.widths) != self.n_stages:
            raise ConfigError(
                f"widths must list {self.n_stages} stages for resolution {n}"
            )

    @property
    def n_stages(self) -> int:
        # feature-map resolutions 4, 8, ..., resolution/2
        return int(math.log2(self.resolution)) - 2

    @property
    def n_style_layers(self) -> int:
        """Style injection points of the style_modulated generator (0 for dcgan)."""
        if self.kind != "style_modulated":
            return 0
        return self.n_stages + 1

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "resolution": self.resolution,
            "channels": self.channels,
            "d_z": self.d_z,
            "d_w": self.d_w,
            "d_f": self.d_f,
            "widths": list(self.widths),
            "mapping_depth": self.mapping_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        d = dict(d)
        d["widths"] = tuple(d.get("widths", ()))
        return cls(**d)


def sample_noise(n: int, d_z: int, generator: Optional[torch.Generator] = None) -> Tensor:
    """Draw n standard-normal latent seeds z."""
    return torch.randn(n, d_z, generator=generator)


class MappingNetwork(nn.Module):
    """Fully connected z -> w map; leaky-ReLU between layers, linear output."""

    def __init__(self, d_z: int, d_w: int, depth: int):
        super().__init__()
        dims = [d_z] + [d_w] * depth
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(depth)
        )

    def forward(self, z: Tensor) -> Tensor:
        h = z
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = F.leaky_relu(h, 0.2)
        return h


class DcganGenerator(nn.Module):
    """Transposed-conv generator, 4x4 base, tanh output in [-1, 1]."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.project = nn.Linear(spec.d_w, w[0] * 16)
        blocks = []
        for i in range(len(w) - 1):
            blocks += [
                nn.ConvTranspose2d(w[i], w[i + 1], 4, stride=2, padding=1),
                nn.BatchNorm2d(w[i + 1]),
                nn.ReLU(),
            ]
        self.blocks = nn.Sequential(*blocks)
        self.to_image = nn.ConvTranspose2d(w[-1], spec.channels, 4, stride=2, padding=1)

    def forward(self, w: Tensor) -> Tensor:
        h = self.project(w).view(-1, self.spec.widths[0], 4, 4)
        h = self.blocks(F.relu(h))
        return torch.tanh(self.to_image(h))


class StyleBlock(nn.Module):
    """Conv block whose activations are scaled/shifted per channel by a style."""

    def __init__(self, c_in: int, c_out: int, d_w: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.style = nn.Linear(d_w, 2 * c_out)

    def forward(self, h: Tensor, w: Tensor) -> Tensor:
        if self.upsample:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.leaky_relu(self.conv(h), 0.2)
        scale, shift = self.style(w).chunk(2, dim=1)
        return h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]


class StyleGenerator(nn.Module):
    """Learned 4x4 constant plus one style-modulated block per resolution.

    Block i renders at 4 * 2**(i-1) px for i >= 1 (block 0 stays at 4px), so a
    32px backbone has 4 style layers.
    """

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.const = nn.Parameter(torch.ones(1, w[0], 4, 4))
        outs = [w[0]] + list(w[1:]) + [w[-1]]
        ins = [w[0]] + outs[:-1]
        self.blocks = nn.ModuleList(
            StyleBlock(ins[i], outs[i], spec.d_w, upsample=i > 0)
            for i in range(len(outs))
        )
        self.to_image = nn.Conv2d(outs[-1], spec.channels, 1)

    @property
    def n_style_layers(self) -> int:
        return len(self.blocks)

    def forward(self, styles: Sequence[Tensor]) -> Tensor:
        h = self.const.expand(styles[0].shape[0], -1, -1, -1)
        for block, w in zip(self.blocks, styles):
            h = block(h, w)
        return torch.tanh(self.to_image(h))


class DualHeadDiscriminator(nn.Module):
    """Shared conv trunk, then independent score and latent-inference heads."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        chans = [spec.channels] + list(reversed(w))  # image -> res/2 -> ... -> 4px
        convs = []
        for i in range(len(chans) - 1):
            convs += [
                nn.Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            ]
        self.convs = nn.Sequential(*convs)
        self.trunk_fc = nn.Linear(w[0] * 16, spec.d_f)
        self.score_head = nn.Linear(spec.d_f, 1)
        self.inference_head = nn.Sequential(
            nn.Linear(spec.d_f, spec.d_f),
            nn.LeakyReLU(0.2),
            nn.Linear(spec.d_f, spec.d_w),
        )

    def trunk(self, x: Tensor) -> Tensor:
        h = self.convs(x)
        return F.leaky_relu(self.trunk_fc(h.flatten(1)), 0.2)

    def forward(self, x: Tensor) -> DiscriminatorOutput:
        features = self.trunk(x)
        score = self.score_head(features).squeeze(1)
        inferred_w = self.inference_head(features)
        return DiscriminatorOutput(score, inferred_w, features)

    def trunk_parameters(self):
        yield from self.convs.parameters()
        yield from self.trunk_fc.parameters()

    def score_parameters(self):
        return self.score_head.parameters()

    def inference_parameters(self):
        return self.inference_head.parameters()


StyleInput = Union[Tensor, Sequence[Tensor]]


class InvGan(nn.Module):
    """Mapping + generator + discriminator bundle exposing the forward ops.

    All three forward operations are pure functions of (input, parameters);
    they mutate no state and may run concurrently. Training is the single
    writer of parameters.
    """

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        self.mapping = MappingNetwork(spec.d_z, spec.d_w, spec.mapping_depth)
        if spec.kind == "dcgan":
            self.generator = DcganGenerator(spec)
        else:
            self.generator = StyleGenerator(spec)
        self.discriminator = DualHeadDiscriminator(spec)

    def map_latent(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.spec.d_z:
            raise ValueError(f"expected z of shape [B, {self.spec.d_z}], got {tuple(z.shape)}")
        return self.mapping(z)

    def generate(self, w: StyleInput) -> Tensor:
        if self.spec.kind == "style_modulated":
            n_layers = self.generator.n_style_layers
            if isinstance(w, Tensor):
                styles = [w] * n_layers
            else:
                styles = list(w)
                if len(styles) != n_layers:
                    raise ConfigError(
                        f"style list has {len(styles)} entries, backbone has {n_layers} layers"
                    )
            self._check_w(styles[0])
            return self.generator(styles)
        if not isinstance(w, Tensor):
            raise ConfigError("per-layer style lists require a style_modulated backbone")
        self._check_w(w)
        return self.generator(w)

    def discriminate(self, x: Tensor) -> DiscriminatorOutput:
        s = self.spec
        if x.ndim != 4 or x.shape[1:] != (s.channels, s.resolution, s.resolution):
            raise ValueError(
                f"expected images of shape [B, {s.channels}, {s.resolution}, {s.resolution}], "
                f"got {tuple(x.shape)}"
            )
        return self.discriminator(x)

    def extract_features(self, x: Tensor) -> Tensor:
        """Trunk features used as the feature-matching extractor; identical to
        the features field of discriminate()."""
        return self.discriminate(x).features

    def _check_w(self, w: Tensor) -> None:
        if w.ndim != 2 or w.shape[1] != self.spec.d_w:
            raise ValueError(f"expected w of shape [B, {self.spec.d_w}], got {tuple(w.shape)}")


def _init_weights(module: nn.Module) -> None:
    # DCGAN convention
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.normal_(module.weight, 0.0, 0.02)
        nn.init.zeros_(module.bias)


def build_model(spec: BackboneSpec, seed: int = 0) -> InvGan:
    """Construct an InvGan with deterministic, seeded initialization."""
    torch.manual_seed(seed)
    model = InvGan(spec)
    model.apply(_init_weights)
    # the mapping net feeds the generator directly; keep w at unit scale
    for layer in model.mapping.layers:
        nn.init.kaiming_normal_(layer.weight, a=0.2)
        nn.init.zeros_(layer.bias)
    return model
