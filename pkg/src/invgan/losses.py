"""Scalar loss terms of the joint objective.

Every function here is a pure, differentiable function of its tensor inputs,
so each term can be unit-tested against a brute-force oracle and gradient
checked in isolation. Batch reduction is always the mean, so values are
comparable across batch sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

KERNEL_ESTIMATORS = ("biased", "unbiased")


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for each objective term. Pixel loss is off by default;
    image-domain reconstruction is carried by the feature-matching term."""

    lambda_gan: float = 1.0
    lambda_lat: float = 1.0
    lambda_fm: float = 1.0
    lambda_cyc: float = 1.0
    lambda_mmd: float = 0.1
    lambda_pix: float = 0.0

    def __post_init__(self):
        for name, v in self.to_dict().items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.lambda_gan <= 0:
            raise ValueError("lambda_gan must be positive")

    def to_dict(self) -> dict:
        return {
            "lambda_gan": self.lambda_gan,
            "lambda_lat": self.lambda_lat,
            "lambda_fm": self.lambda_fm,
            "lambda_cyc": self.lambda_cyc,
            "lambda_mmd": self.lambda_mmd,
            "lambda_pix": self.lambda_pix,
        }


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel mixture for the latent two-sample (MMD) loss.

    bandwidths: sigma values; None means the median pairwise-distance
    heuristic scaled by bandwidth_scales, recomputed per batch.
    """

    bandwidths: tuple = None
    estimator: str = "biased"
    bandwidth_scales: tuple = (0.5, 1.0, 2.0)

    def __post_init__(self):
        if self.estimator not in KERNEL_ESTIMATORS:
            raise ValueError(f"estimator must be one of {KERNEL_ESTIMATORS}")
        if self.bandwidths is not None:
            if len(self.bandwidths) == 0:
                raise ValueError("bandwidth list must be nonempty")
            if any(s <= 0 for s in self.bandwidths):
                raise ValueError("bandwidths must be positive")
        elif len(self.bandwidth_scales) == 0:
            raise ValueError("bandwidth_scales must be nonempty")

    def resolve_bandwidths(self, a: Tensor, b: Tensor) -> tuple:
        if self.bandwidths is not None:
            return tuple(self.bandwidths)
        med = median_pairwise_distance(a, b)
        return tuple(s * med for s in self.bandwidth_scales)

    def to_dict(self) -> dict:
        return {
            "bandwidths": None if self.bandwidths is None else list(self.bandwidths),
            "estimator": self.estimator,
            "bandwidth_scales": list(self.bandwidth_scales),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        bw = d.get("bandwidths")
        return cls(
            bandwidths=None if bw is None else tuple(bw),
            estimator=d.get("estimator", "biased"),
            bandwidth_scales=tuple(d.get("bandwidth_scales", (0.5, 1.0, 2.0))),
        )


def adversarial_d_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """-[mean log sigmoid(real) + mean log(1 - sigmoid(fake))]; lower is a
    better discriminator."""
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("adversarial_d_loss requires nonempty score batches")
    return -(F.logsigmoid(real_scores).mean() + F.logsigmoid(-fake_scores).mean())


def adversarial_g_loss(fake_scores: Tensor) -> Tensor:
    """Non-saturating generator loss, -mean log sigmoid(fake)."""
    if fake_scores.numel() == 0:
        raise ValueError("adversarial_g_loss requires a nonempty score batch")
    return -F.logsigmoid(fake_scores).mean()


def latent_reconstruction_loss(w: Tensor, w_hat: Tensor) -> Tensor:
    """Mean over the batch of the squared L2 distance between code rows."""
    if w.shape != w_hat.shape:
        raise ValueError(f"shape mismatch {tuple(w.shape)} vs {tuple(w_hat.shape)}")
    return (w - w_hat).pow(2).sum(dim=1).mean()


def cycle_consistency_loss(w_tilde: Tensor, w_tilde_tilde: Tensor) -> Tensor:
    """Agreement between an inferred code and the code re-inferred from its
    own generation; same contract as latent_reconstruction_loss."""
    return latent_reconstruction_loss(w_tilde, w_tilde_tilde)


def feature_matching_loss(
    f_real: Tensor, f_recon: Tensor, p: int = 1, per_sample: bool = True
) -> Tensor:
    """Distance between extractor features of images and of their paired
    reconstructions (row i of f_recon reconstructs row i of f_real).

    per_sample=True (default) averages per-row L_p norms over the batch,
    which is strictly stronger than the norm of the batch-mean difference;
    per_sample=False gives that weaker first-moment form.
    """
    if f_real.shape != f_recon.shape:
        raise ValueError(f"shape mismatch {tuple(f_real.shape)} vs {tuple(f_recon.shape)}")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    diff = f_real - f_recon
    if not per_sample:
        diff = diff.mean(dim=0, keepdim=True)
    if p == 1:
        return diff.abs().sum(dim=1).mean()
    return diff.pow(2).sum(dim=1).sqrt().mean()


def pixel_reconstruction_loss(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean absolute error per pixel per channel, images in [-1, 1]."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).abs().mean()


def median_pairwise_distance(a: Tensor, b: Tensor) -> float:
    """Median Euclidean distance over all off-diagonal pairs of [a; b]."""
    pooled = torch.cat([a.detach(), b.detach()], dim=0)
    d = torch.cdist(pooled, pooled)
    n = pooled.shape[0]
    off = d[~torch.eye(n, dtype=torch.bool)].sort().values
    m = off.numel()
    # even counts average the two central values (torch.median takes the lower)
    if m % 2:
        med = off[m // 2].item()
    else:
        med = 0.5 * (off[m // 2 - 1] + off[m // 2]).item()
    # floor keeps the kernel finite when a batch collapses to one point
    return max(med, 1e-6)


def _sq_dists(a: Tensor, b: Tensor) -> Tensor:
    # shared code path for aa/bb/ab so identical inputs give bitwise-equal
    # kernel matrices and mmd_rbf(A, A) is exactly zero
    a2 = a.pow(2).sum(dim=1, keepdim=True)
    b2 = b.pow(2).sum(dim=1, keepdim=True)
    return (a2 + b2.t() - 2.0 * a @ b.t()).clamp(min=0)


def mmd_rbf(a: Tensor, b: Tensor, kernel: KernelSpec = KernelSpec()) -> Tensor:
    """Squared maximum mean discrepancy between sample sets, summed over the
    kernel's RBF bandwidths: k(u, v) = exp(-||u - v||^2 / (2 sigma^2))."""
    if a.numel() == 0 or b.numel() == 0:
        raise ValueError("mmd_rbf requires nonempty sample sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    na, nb = a.shape[0], b.shape[0]
    unbiased = kernel.estimator == "unbiased"
    if unbiased and (na < 2 or nb < 2):
        raise ValueError("unbiased estimator needs at least 2 samples per set")

    d_aa, d_bb, d_ab = _sq_dists(a, a), _sq_dists(b, b), _sq_dists(a, b)
    total = a.new_zeros(())
    for sigma in kernel.resolve_bandwidths(a, b):
        gamma = 1.0 / (2.0 * sigma * sigma)
        k_aa, k_bb, k_ab = (-gamma * d_aa).exp(), (-gamma * d_bb).exp(), (-gamma * d_ab).exp()
        if unbiased:
            term_aa = (k_aa.sum() - k_aa.diagonal().sum()) / (na * (na - 1))
            term_bb = (k_bb.sum() - k_bb.diagonal().sum()) / (nb * (nb - 1))
        else:
            term_aa = k_aa.mean()
            term_bb = k_bb.mean()
        total = total + term_aa + term_bb - 2.0 * k_ab.mean()
    if unbiased:
        return total  # the unbiased estimator is legitimately signed
    # biased estimator is a squared RKHS norm; clamp away negative float dust
    return total.clamp_min(0.0)
