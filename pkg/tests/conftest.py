"""Shared fixtures: the digit corpus and session-scoped trained models.

The corpus is sklearn's 8x8 digits upscaled to 28px and written in IDX
format, deterministically split 1437 train / 360 test. Training fixtures
honor INVGAN_TEST_CACHE: when it names a directory, finished checkpoints
are reused across sessions keyed by config and corpus fingerprint, which
is sound because training is bit-deterministic for a fixed config and
seed (the reproducibility test asserts exactly that). Unset, every
session trains fresh.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image
from sklearn.datasets import load_digits

from invgan.checkpoint import load_checkpoint, save_checkpoint
from invgan.data import DatasetSpec, load_dataset, write_idx_images, write_idx_labels
from invgan.losses import LossWeights
from invgan.models import BackboneSpec
from invgan.training import TrainConfig, train

torch.set_num_threads(max(1, os.cpu_count() or 1))


def build_digit_corpus(out_dir: Path) -> None:
    """Upscale sklearn digits to 28px grayscale and write IDX train/test files."""
    bundle = load_digits()
    images = bundle.images  # [1797, 8, 8] floats in 0..16
    labels = bundle.target.astype(np.uint8)
    up = np.zeros((len(images), 28, 28), dtype=np.uint8)
    for i, im in enumerate(images):
        a = np.clip(im * 16.0, 0, 255).astype(np.uint8)
        up[i] = np.array(Image.fromarray(a, mode="L").resize((28, 28), Image.BILINEAR))
    rng = np.random.default_rng(1234)
    perm = rng.permutation(len(up))
    up, labels = up[perm], labels[perm]
    n_train = 1437
    write_idx_images(out_dir / "train-images-idx3-ubyte", up[:n_train])
    write_idx_labels(out_dir / "train-labels-idx1-ubyte", labels[:n_train])
    write_idx_images(out_dir / "t10k-images-idx3-ubyte", up[n_train:])
    write_idx_labels(out_dir / "t10k-labels-idx1-ubyte", labels[n_train:])


@pytest.fixture(scope="session")
def digits_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("digits_idx")
    build_digit_corpus(out)
    return out


@pytest.fixture(scope="session")
def digit_sets(digits_dir):
    """(train, test) Datasets at the 32px training resolution."""
    train_set = load_dataset(DatasetSpec("mnist_idx", str(digits_dir), 32, 1, "train"))
    test_set = load_dataset(DatasetSpec("mnist_idx", str(digits_dir), 32, 1, "test"))
    return train_set, test_set


def acceptance_backbone() -> BackboneSpec:
    return BackboneSpec(
        kind="dcgan", resolution=32, channels=1, d_z=64, d_w=64, d_f=128,
        widths=(128, 64, 32),
    )


def acceptance_config(variant: str = "full", epochs: int = 30, seed: int = 0) -> TrainConfig:
    """The tuned desk-scale training recipe shared by the long-running checks.

    Feature-matching and cycle terms are damped hard and a pixel term is
    added: at this corpus size the default unit weights let the trunk
    collapse its features on real images, which wrecks inversion. The
    latent term is raised to 3 so the inference head trains fast enough
    that its exposure regime (prior-only vs inferred codes) is measurable
    within the ablation budget.
    """
    return TrainConfig(
        variant=variant,
        backbone=acceptance_backbone(),
        weights=LossWeights(
            lambda_lat=3.0,
            lambda_fm=0.005,
            lambda_cyc=0.005,
            lambda_mmd=0.025,
            lambda_pix=5.0,
        ),
        batch_size=16,
        lr_d=1e-4,
        lr_g=4e-4,
        epochs=epochs,
        seed=seed,
    )


def _corpus_fingerprint(dataset) -> str:
    h = hashlib.sha256()
    h.update(dataset.images.numpy().tobytes())
    if dataset.labels is not None:
        h.update(dataset.labels.numpy().tobytes())
    return h.hexdigest()[:16]


def train_with_cache(config: TrainConfig, dataset):
    """Train, or reload an identical finished run from INVGAN_TEST_CACHE."""
    cache_root = os.environ.get("INVGAN_TEST_CACHE")
    if not cache_root:
        return train(config, dataset)
    key_src = json.dumps(config.to_dict(), sort_keys=True) + _corpus_fingerprint(dataset)
    key = hashlib.sha256(key_src.encode()).hexdigest()[:24]
    path = Path(cache_root) / f"{key}.invgan"
    if path.exists():
        return load_checkpoint(path)
    state = train(config, dataset)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, path)
    return state


@pytest.fixture(scope="session")
def accept_state(digit_sets):
    """The criterion-grade full-variant model (30 epochs on the digit corpus)."""
    train_set, _ = digit_sets
    return train_with_cache(acceptance_config(), train_set)


ABLATION_EPOCHS = 8


@pytest.fixture(scope="session")
def ablation_states(digit_sets):
    """Equal-budget runs of all three variants, keyed by variant name.

    The budget is short on purpose: the variants differ in what the
    inference head sees during training, and that difference is measured
    while the generator is still undertrained. Once the generator covers
    this small corpus (around 30 epochs), prior-only training transfers to
    real images and the variant gaps close.
    """
    train_set, _ = digit_sets
    return {
        variant: train_with_cache(
            acceptance_config(variant=variant, epochs=ABLATION_EPOCHS), train_set
        )
        for variant in ("full", "augmented_naive", "naive")
    }


_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Callable(criterion_number, passed, detail) feeding the summary lines."""

    def _record(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = (passed, detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict} - {detail}")
