"""Alternating optimization of the joint objective.

The discriminator step plays the usual adversarial game and updates only the
trunk and score head. The generator/inference step minimizes the weighted sum
of the generator's adversarial loss and the reconstruction-family terms
(latent, feature matching, cycle, MMD), updating the generator, the mapping
network, and the discriminator's trunk + inference head. Routing rules:

* the adversarial G loss never touches any discriminator parameter (its
  forward runs with the discriminator frozen and the inferred half of the
  latent batch detached);
* reconstruction-family gradients flow from the generator back into the
  trunk and inference head, never into the score head;
* the adversarial D loss never touches the inference head, generator, or
  mapping network (fakes are generated under no_grad).

Terms with zero weight are left out of the graph entirely, so isolating a
weight makes the excluded groups' gradients exactly zero, not just small.

Latent batches in the augmented/full variants are half prior draws, half
codes inferred from real images, concatenated [prior | inferred].
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import torch
from torch import Tensor

from .errors import ConfigError
from .losses import (
    KernelSpec,
    LossWeights,
    adversarial_d_loss,
    adversarial_g_loss,
    cycle_consistency_loss,
    feature_matching_loss,
    latent_reconstruction_loss,
    mmd_rbf,
    pixel_reconstruction_loss,
)
from .models import BackboneSpec, DiscriminatorOutput, InvGan, build_model, sample_noise

MODEL_VARIANTS = ("naive", "augmented_naive", "full")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "full"
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    weights: LossWeights = field(default_factory=LossWeights)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    batch_size: int = 64
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 30
    seed: int = 0
    eval_every: int = 100  # steps between metric emissions

    def __post_init__(self):
        if self.variant not in MODEL_VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.batch_size % 2:
            raise ConfigError("batch size must be even (half prior, half inferred codes)")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.eval_every < 1:
            raise ConfigError("eval cadence must be at least 1 step")

    @property
    def effective_weights(self) -> LossWeights:
        """Weights with ablated terms forced to zero for the active variant."""
        w = self.weights
        if self.variant in ("naive", "augmented_naive"):
            return replace(w, lambda_fm=0.0, lambda_cyc=0.0, lambda_mmd=0.0, lambda_pix=0.0)
        return w

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "backbone": self.backbone.to_dict(),
            "weights": self.weights.to_dict(),
            "kernel": self.kernel.to_dict(),
            "batch_size": self.batch_size,
            "lr_d": self.lr_d,
            "lr_g": self.lr_g,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epochs": self.epochs,
            "seed": self.seed,
            "eval_every": self.eval_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["backbone"] = BackboneSpec.from_dict(d.get("backbone", {}))
        d["weights"] = LossWeights(**d.get("weights", {}))
        d["kernel"] = KernelSpec.from_dict(d.get("kernel", {}))
        return cls(**d)


@dataclass
class ComposedBatch:
    """Latent batch fed to the generator, rows ordered [prior | inferred].

    real_images[i] is the image whose inferred code sits at row n_prior + i;
    real_out is the discriminator output those codes came from (its features
    are reused by the feature-matching term).
    """

    codes: Tensor
    n_prior: int
    real_images: Optional[Tensor] = None
    real_out: Optional[DiscriminatorOutput] = None

    @property
    def prior_codes(self) -> Tensor:
        return self.codes[: self.n_prior]

    @property
    def inferred_codes(self) -> Tensor:
        return self.codes[self.n_prior:]

    @property
    def origins(self) -> tuple:
        return ("prior",) * self.n_prior + ("inferred",) * (len(self.codes) - self.n_prior)


def compose_latent_batch(
    model: InvGan, z: Tensor, x_real: Optional[Tensor], variant: str = "full"
) -> ComposedBatch:
    """Build the generator's latent batch for one step.

    naive: every row comes from the prior (x_real is ignored). Otherwise the
    prior half M(z) is concatenated with codes inferred from x_real, which
    must match z in batch size.
    """
    w = model.map_latent(z)
    if variant == "naive":
        return ComposedBatch(codes=w, n_prior=w.shape[0])
    if x_real is None:
        raise ConfigError(f"variant {variant!r} needs real images for the inferred half")
    if x_real.shape[0] != z.shape[0]:
        raise ConfigError(
            f"half/half composition needs equal halves, got {z.shape[0]} prior "
            f"and {x_real.shape[0]} real"
        )
    d_real = model.discriminate(x_real)
    return ComposedBatch(
        codes=torch.cat([w, d_real.inferred_w], dim=0),
        n_prior=w.shape[0],
        real_images=x_real,
        real_out=d_real,
    )


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _check_finite(name: str, value: Tensor, diagnostics: dict) -> None:
    if not torch.isfinite(value).all():
        raise FloatingPointError(
            f"non-finite {name} loss; diagnostics: {json.dumps(diagnostics, sort_keys=True)}"
        )


class TrainState:
    """Model, optimizers, and RNG streams for one run; the checkpoint payload."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.model = build_model(config.backbone, seed=config.seed)
        d = self.model.discriminator
        self.opt_d = torch.optim.Adam(
            list(d.trunk_parameters()) + list(d.score_parameters()),
            lr=config.lr_d,
            betas=(config.beta1, config.beta2),
        )
        self.opt_g = torch.optim.Adam(
            list(self.model.generator.parameters())
            + list(self.model.mapping.parameters())
            + list(d.trunk_parameters())
            + list(d.inference_parameters()),
            lr=config.lr_g,
            betas=(config.beta1, config.beta2),
        )
        self.noise_rng = torch.Generator().manual_seed(config.seed + 1)
        self.data_rng = torch.Generator().manual_seed(config.seed + 2)
        self.step = 0
        self.epoch = 0
        self.checkpoint_id = None  # set by checkpoint save/load

    def sample_z(self, n: int) -> Tensor:
        return sample_noise(n, self.config.backbone.d_z, generator=self.noise_rng)


def discriminator_step(state: TrainState, x_real: Tensor, z: Tensor) -> dict:
    """One adversarial update of the trunk + score head.

    Fakes are G(w_total) generated under no_grad, so the generator, mapping
    network, and (through the detached codes) the inference head receive no
    gradient; reconstructions of real images count as fake samples.
    """
    model, cfg = state.model, state.config
    with torch.no_grad():
        batch = compose_latent_batch(model, z, x_real, cfg.variant)
        x_fake = model.generate(batch.codes)
    real_scores = model.discriminate(x_real).score
    fake_scores = model.discriminate(x_fake).score
    loss = adversarial_d_loss(real_scores, fake_scores)
    _check_finite("adversarial_d", loss, {"step": state.step})
    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_d.step()
    return {"loss_d": loss.item()}


def generator_inference_step(state: TrainState, x_real: Tensor, z: Tensor) -> dict:
    """One update of generator + mapping + discriminator trunk/inference head.

    The reconstruction-family terms run with the discriminator live, feeding
    the self-supervised signal back into its trunk and inference head. The
    adversarial term is computed in a second forward with every discriminator
    parameter frozen and the inferred codes detached, so its gradient reaches
    only the generator and mapping network.
    """
    model, cfg = state.model, state.config
    w = cfg.effective_weights
    d = model.discriminator

    batch = compose_latent_batch(model, z, x_real, cfg.variant)
    has_real = batch.real_images is not None

    need_fake = w.lambda_lat > 0 or w.lambda_cyc > 0 or (
        has_real and (w.lambda_fm > 0 or w.lambda_pix > 0)
    )
    if need_fake:
        x_fake = model.generate(batch.codes)
        d_fake = model.discriminate(x_fake)

    logs: dict = {}
    total = batch.codes.new_zeros(())

    if w.lambda_lat > 0:
        if cfg.variant == "full":
            # prior half only: the inferred half is covered by the cycle term
            lat = latent_reconstruction_loss(
                batch.prior_codes, d_fake.inferred_w[: batch.n_prior]
            )
        else:
            # naive / augmented_naive: agreement over the whole composed batch
            lat = latent_reconstruction_loss(batch.codes, d_fake.inferred_w)
        total = total + w.lambda_lat * lat
        logs["loss_lat"] = lat.item()

    if has_real and w.lambda_fm > 0:
        fm = feature_matching_loss(
            batch.real_out.features, d_fake.features[batch.n_prior:]
        )
        total = total + w.lambda_fm * fm
        logs["loss_fm"] = fm.item()

    if has_real and w.lambda_pix > 0:
        pix = pixel_reconstruction_loss(batch.real_images, x_fake[batch.n_prior:])
        total = total + w.lambda_pix * pix
        logs["loss_pix"] = pix.item()

    if w.lambda_cyc > 0:
        # run the encode/decode cycle once more on every re-inferred code
        w_tilde = d_fake.inferred_w
        w_tilde_tilde = model.discriminate(model.generate(w_tilde)).inferred_w
        cyc = cycle_consistency_loss(w_tilde, w_tilde_tilde)
        total = total + w.lambda_cyc * cyc
        logs["loss_cyc"] = cyc.item()

    if has_real and w.lambda_mmd > 0:
        mmd = mmd_rbf(batch.prior_codes, batch.inferred_codes, cfg.kernel)
        total = total + w.lambda_mmd * mmd
        logs["loss_mmd"] = mmd.item()

    # adversarial forward with D frozen; the inferred half is detached so no
    # gradient reaches the inference head through the generator input either
    _set_requires_grad(d, False)
    adv_codes = torch.cat([batch.prior_codes, batch.inferred_codes.detach()], dim=0)
    gan = adversarial_g_loss(model.discriminate(model.generate(adv_codes)).score)
    _set_requires_grad(d, True)
    total = total + w.lambda_gan * gan
    logs["loss_gan"] = gan.item()

    _check_finite("generator_inference", total, {"step": state.step, **logs})
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    logs["loss_g_total"] = total.item()
    return logs


def _assert_parameters_finite(model: InvGan, step: int) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise FloatingPointError(f"parameter {name} went non-finite at step {step}")


def train(
    config: TrainConfig,
    dataset,
    out_dir: Optional[Path] = None,
    state: Optional[TrainState] = None,
    on_metrics: Optional[Callable[[dict], None]] = None,
) -> TrainState:
    """Run the 1:1 alternating loop over the dataset for config.epochs.

    Each step consumes batch_size/2 real images; every variant therefore sees
    the same data schedule and step count. Metrics are appended to
    out_dir/metrics.jsonl every eval_every steps and a checkpoint is written
    to out_dir/checkpoint.invgan after each epoch. Fully reproducible given
    (config, seed): initialization, data order, and noise draws all derive
    from config.seed. Pass a loaded state to resume; the data schedule
    depends only on (seed, epoch), so a resumed run retraces the unbroken
    one.
    """
    from .checkpoint import save_checkpoint  # local import to avoid a cycle

    if dataset.resolution != config.backbone.resolution or dataset.channels != config.backbone.channels:
        raise ConfigError(
            f"dataset is {dataset.channels}x{dataset.resolution}px but backbone wants "
            f"{config.backbone.channels}x{config.backbone.resolution}px"
        )
    state = state or TrainState(config)
    model = state.model
    model.train()
    metrics_path = out_dir / "metrics.jsonl" if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    half = config.batch_size // 2
    n_prior = config.batch_size if config.variant == "naive" else half
    start = time.monotonic()
    for epoch in range(state.epoch, config.epochs):
        state.epoch = epoch
        for x_real in dataset.batches(half, seed=config.seed * 100003 + epoch):
            logs = discriminator_step(state, x_real, state.sample_z(n_prior))
            logs.update(generator_inference_step(state, x_real, state.sample_z(n_prior)))
            state.step += 1
            _assert_parameters_finite(model, state.step)
            if state.step % config.eval_every == 0:
                record = {
                    "step": state.step,
                    "epoch": epoch,
                    **{k: round(v, 6) for k, v in sorted(logs.items())},
                    "wall_time": round(time.monotonic() - start, 3),
                }
                if metrics_path:
                    with metrics_path.open("a") as fh:
                        fh.write(json.dumps(record) + "\n")
                if on_metrics:
                    on_metrics(record)
        state.epoch = epoch + 1
        if out_dir:
            save_checkpoint(state, out_dir / "checkpoint.invgan")
    model.eval()
    return state
