"""Distribution metrics, reconstruction error, and semantic consistency.

FID is computed from feature means/covariances with the matrix square root
taken by eigendecomposition of the symmetrized product, clipping small
negative eigenvalues; a rank-deficient covariance falls back to a 1e-6
diagonal jitter, and the report records when that happened. Features come
from a small fixed convnet classifier trained separately from the model
under evaluation, identified in reports by a checksum of its weights.
"""

from __future__ import annotations

import hashlib
import time
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data import Dataset
from .errors import ConfigError
from .models import InvGan

_CHUNK = 256  # images per forward pass in batched helpers


def _feature_stats(features: np.ndarray) -> tuple:
    mu = features.mean(axis=0)
    cov = np.atleast_2d(np.cov(features, rowvar=False))
    return mu, cov


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    vals = np.clip(vals, 0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(mu_a, cov_a, mu_b, cov_b, jitter: float = 1e-6) -> tuple:
    """Frechet distance between two Gaussians; returns (value, used_jitter).

    tr((cov_a cov_b)^1/2) is evaluated as tr((A cov_b A)^1/2) with
    A = cov_a^1/2, which is symmetric PSD and safe to eigendecompose. A
    near-singular covariance gets jitter * I added to both sides first.
    """
    mu_a, cov_a = np.asarray(mu_a, dtype=np.float64), np.asarray(cov_a, dtype=np.float64)
    mu_b, cov_b = np.asarray(mu_b, dtype=np.float64), np.asarray(cov_b, dtype=np.float64)
    used_jitter = False
    for cov in (cov_a, cov_b):
        vals = np.linalg.eigvalsh((cov + cov.T) / 2)
        if vals.min() < 1e-10 * max(1.0, vals.max()):
            used_jitter = True
    if used_jitter:
        eye = np.eye(cov_a.shape[0])
        cov_a = cov_a + jitter * eye
        cov_b = cov_b + jitter * eye
    a_half = _sqrtm_psd(cov_a)
    inner = a_half @ cov_b @ a_half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(vals, 0, None)).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * tr_sqrt)
    return max(value, 0.0), used_jitter  # clip numerical noise on identical stats


def fid(features_a, features_b) -> float:
    """Frechet distance between the sample statistics of two feature sets."""
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    for name, f in (("features_a", fa), ("features_b", fb)):
        if f.ndim != 2:
            raise ValueError(f"{name} must be [N, d], got shape {f.shape}")
        if f.shape[0] < 2:
            raise ValueError(f"{name} needs at least 2 samples for a covariance")
        if not np.isfinite(f).all():
            raise ValueError(f"{name} contains non-finite values")
    if fa.shape[1] != fb.shape[1]:
        raise ValueError(f"feature widths differ: {fa.shape[1]} vs {fb.shape[1]}")
    d = fa.shape[1]
    if min(fa.shape[0], fb.shape[0]) <= d:
        warnings.warn(
            f"fewer samples ({min(fa.shape[0], fb.shape[0])}) than feature "
            f"dimensions ({d}); covariance is rank-deficient",
            stacklevel=2,
        )
    value, _ = frechet_distance(*_feature_stats(fa), *_feature_stats(fb))
    return value


class SmallConvClassifier(nn.Module):
    """Three stride-2 convs and two linear layers; features() is the 64-d penultimate."""

    def __init__(self, channels: int = 1, resolution: int = 32, num_classes: int = 10):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(channels, 16, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        side = resolution // 8
        self.fc = nn.Linear(64 * side * side, 64)
        self.head = nn.Linear(64, num_classes)

    def features(self, x: Tensor) -> Tensor:
        h = self.convs(x).flatten(1)
        return F.leaky_relu(self.fc(h), 0.2)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))


def train_classifier(
    images: Tensor,
    labels: Tensor,
    epochs: int = 3,
    seed: int = 0,
    batch_size: int = 128,
    lr: float = 2e-3,
    num_classes: int = 10,
) -> SmallConvClassifier:
    """Fit the small classifier deterministically; returns it in eval mode."""
    torch.manual_seed(seed)
    clf = SmallConvClassifier(images.shape[1], images.shape[2], num_classes)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    order_rng = torch.Generator().manual_seed(seed + 1)
    clf.train()
    for _ in range(epochs):
        perm = torch.randperm(len(images), generator=order_rng)
        for i in range(0, len(images), batch_size):
            idx = perm[i : i + batch_size]
            loss = F.cross_entropy(clf(images[idx]), labels[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    clf.eval()
    return clf


def classifier_accuracy(clf: nn.Module, images: Tensor, labels: Tensor) -> float:
    clf.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(images), _CHUNK):
            pred = clf(images[i : i + _CHUNK]).argmax(dim=1)
            correct += (pred == labels[i : i + _CHUNK]).sum().item()
    return correct / len(images)


def extractor_id(clf: nn.Module) -> str:
    """Stable fingerprint of the feature extractor's weights."""
    h = hashlib.sha256()
    for _, p in sorted(clf.state_dict().items()):
        h.update(p.detach().cpu().numpy().tobytes())
    return f"smallconv-{h.hexdigest()[:12]}"


def _batched(fn, x: Tensor) -> Tensor:
    with torch.no_grad():
        return torch.cat([fn(x[i : i + _CHUNK]) for i in range(0, len(x), _CHUNK)])


def _extract(clf: SmallConvClassifier, x: Tensor) -> np.ndarray:
    return _batched(clf.features, x).numpy()


@dataclass
class MetricsReport:
    """Table-style metric row for one checkpoint."""

    rand_fid: float
    rand_rec_fid: float
    ts_rec_fid: float
    int_ts_fid: float
    mae: float
    seconds_per_image: float
    images_per_second: float
    n_samples: int
    extractor: str
    jitter_events: int

    def to_dict(self) -> dict:
        return {
            "rand_fid": self.rand_fid,
            "rand_rec_fid": self.rand_rec_fid,
            "ts_rec_fid": self.ts_rec_fid,
            "int_ts_fid": self.int_ts_fid,
            "mae": self.mae,
            "seconds_per_image": self.seconds_per_image,
            "images_per_second": self.images_per_second,
            "n_samples": self.n_samples,
            "extractor": self.extractor,
            "jitter_events": self.jitter_events,
        }


def reconstruction_mae(x: Tensor, recon: Tensor) -> float:
    """Mean absolute per-pixel error in the [-1, 1] pixel scale."""
    if x.shape != recon.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(recon.shape)}")
    return (x - recon).abs().mean().item()


def time_inversion(model: InvGan, images: Tensor) -> float:
    """Wall-clock seconds per image for the one-pass embedding, batched."""
    model.eval()
    with torch.no_grad():
        model.discriminate(images[: min(len(images), _CHUNK)])  # warm-up
        start = time.perf_counter()
        for i in range(0, len(images), _CHUNK):
            model.discriminate(images[i : i + _CHUNK])
        elapsed = time.perf_counter() - start
    return elapsed / len(images)


def metrics_suite(
    model: InvGan,
    train_set: Dataset,
    test_set: Dataset,
    n_samples: int = 500,
    seed: int = 0,
    extractor: Optional[SmallConvClassifier] = None,
    extractor_epochs: int = 3,
) -> MetricsReport:
    """Compute the full metric row for a trained model.

    Four FID variants share one reference: features of real training images.
    rand_fid scores fresh generations, rand_rec_fid their reconstructions,
    ts_rec_fid reconstructions of test images, and int_ts_fid latent
    midpoints of shuffled test-image pairs. MAE and inversion timing come
    from the same test sample.
    """
    model.eval()
    if extractor is None:
        if train_set.labels is None:
            raise ConfigError("training set has no labels; pass an extractor explicitly")
        extractor = train_classifier(
            train_set.images, train_set.labels, epochs=extractor_epochs, seed=seed
        )

    n = min(n_samples, len(test_set))
    if n < 2:
        raise ConfigError(f"need at least 2 evaluation samples, got {n}")
    reference = train_set.sample(min(n_samples, len(train_set)), seed)
    real = test_set.sample(n, seed)
    z = torch.randn(n, model.spec.d_z, generator=torch.Generator().manual_seed(seed + 1))
    with torch.no_grad():
        w_prior = model.map_latent(z)
    generated = _batched(model.generate, w_prior)
    gen_codes = _batched(lambda x: model.discriminate(x).inferred_w, generated)
    gen_recon = _batched(model.generate, gen_codes)
    real_codes = _batched(lambda x: model.discriminate(x).inferred_w, real)
    real_recon = _batched(model.generate, real_codes)
    pair = torch.randperm(n, generator=torch.Generator().manual_seed(seed + 2))
    midpoints = _batched(model.generate, (real_codes + real_codes[pair]) / 2)

    stats_ref = _feature_stats(_extract(extractor, reference))
    jitter_events = 0
    scores = {}
    for name, images in (
        ("rand_fid", generated),
        ("rand_rec_fid", gen_recon),
        ("ts_rec_fid", real_recon),
        ("int_ts_fid", midpoints),
    ):
        value, jittered = frechet_distance(
            *stats_ref, *_feature_stats(_extract(extractor, images))
        )
        scores[name] = value
        jitter_events += int(jittered)

    spi = time_inversion(model, real)
    return MetricsReport(
        **scores,
        mae=reconstruction_mae(real, real_recon),
        seconds_per_image=spi,
        images_per_second=1.0 / spi,
        n_samples=n,
        extractor=extractor_id(extractor),
        jitter_events=jitter_events,
    )


def semantic_consistency(
    model: InvGan,
    train_set: Dataset,
    test_set: Dataset,
    seed: int = 0,
    epochs: int = 3,
    n_train: Optional[int] = None,
    n_test: Optional[int] = None,
) -> np.ndarray:
    """2x2 accuracy matrix over (original, reconstructed) domains.

    Row = training domain, column = evaluation domain. Reconstruction that
    preserves class semantics keeps all four entries close together.
    """
    if train_set.labels is None or test_set.labels is None:
        raise ConfigError("semantic consistency needs labeled train and test sets")
    train = train_set.take(n_train) if n_train else train_set
    test = test_set.take(n_test) if n_test else test_set

    recon = lambda x: _batched(  # noqa: E731
        model.generate, _batched(lambda b: model.discriminate(b).inferred_w, x)
    )
    model.eval()
    train_rec = recon(train.images)
    test_rec = recon(test.images)

    clf_orig = train_classifier(train.images, train.labels, epochs=epochs, seed=seed)
    clf_rec = train_classifier(train_rec, train.labels, epochs=epochs, seed=seed)
    return np.array(
        [
            [
                classifier_accuracy(clf_orig, test.images, test.labels),
                classifier_accuracy(clf_orig, test_rec, test.labels),
            ],
            [
                classifier_accuracy(clf_rec, test.images, test.labels),
                classifier_accuracy(clf_rec, test_rec, test.labels),
            ],
        ]
    )
