"""One-pass embedding and the editing operations built on top of it."""

import json

import pytest
import torch

from invgan.errors import IntegrityError, UnsupportedOperationError
from invgan.inversion import (
    composite_images,
    export_latents,
    generate_from,
    inpaint,
    interpolate_midpoint,
    invert,
    load_latents,
    mask_rect,
    merge,
    reconstruct,
    style_mix,
)
from invgan.models import BackboneSpec, build_model


def tiny_model(kind="dcgan"):
    spec = BackboneSpec(
        kind=kind, resolution=16, channels=1, d_z=6, d_w=6, d_f=12, widths=(12, 8)
    )
    return build_model(spec, seed=0).eval()


def images(n=2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.tanh(torch.randn(n, 1, 16, 16, generator=gen))


@pytest.fixture(scope="module")
def model():
    return tiny_model()


@pytest.fixture(scope="module")
def style_model():
    return tiny_model("style_modulated")


class TestInvertAndReconstruct:
    def test_single_image_and_batch_shapes(self, model):
        batch = images(3)
        w = invert(batch, model)
        assert w.shape == (3, 6)
        single = invert(batch[0], model)
        assert single.shape == (6,)
        # batch-of-1 takes a different BLAS path than a row of a batch-of-3
        assert torch.allclose(single, w[0], atol=1e-6)

    def test_generate_from_single_and_batch(self, model):
        w = invert(images(2), model)
        batch = generate_from(w, model)
        assert batch.shape == (2, 1, 16, 16)
        single = generate_from(w[0], model)
        assert single.shape == (1, 16, 16)
        assert torch.allclose(single, batch[0], atol=1e-6)

    def test_reconstruct_composes_the_two(self, model):
        x = images(2)
        assert torch.equal(
            reconstruct(x, model), generate_from(invert(x, model), model)
        )

    def test_inversion_is_pure(self, model):
        x = images(2, seed=1)
        assert torch.equal(invert(x, model), invert(x, model))

    def test_no_gradients_leak(self, model):
        w = invert(images(1), model)
        assert not w.requires_grad

    def test_output_bounded(self, model):
        x = reconstruct(images(4, seed=2), model)
        assert x.min().item() >= -1.0 and x.max().item() <= 1.0


class TestInterpolation:
    def test_identical_endpoints_reduce_to_reconstruction(self, model):
        x = images(1, seed=3)[0]
        assert torch.equal(interpolate_midpoint(x, x, model), reconstruct(x, model))

    def test_midpoint_code_is_arithmetic_mean(self, model):
        a, b = images(2, seed=4)
        w_mid = (invert(a, model) + invert(b, model)) / 2
        assert torch.equal(
            interpolate_midpoint(a, b, model), generate_from(w_mid, model)
        )


class TestStyleMix:
    def test_k_zero_reproduces_second_image_recon(self, style_model):
        a, b = images(2, seed=5)
        assert torch.equal(style_mix(a, b, 0, style_model), reconstruct(b, style_model))

    def test_k_max_reproduces_first_image_recon(self, style_model):
        a, b = images(2, seed=6)
        layers = style_model.spec.n_style_layers
        assert torch.equal(
            style_mix(a, b, layers, style_model), reconstruct(a, style_model)
        )

    def test_intermediate_k_differs_from_both(self, style_model):
        a, b = images(2, seed=7)
        layers = style_model.spec.n_style_layers
        mixed = style_mix(a, b, layers // 2, style_model)
        assert not torch.equal(mixed, reconstruct(a, style_model))
        assert not torch.equal(mixed, reconstruct(b, style_model))

    def test_batch_input_supported(self, style_model):
        a, b = images(2, seed=8), images(2, seed=9)
        out = style_mix(a, b, 1, style_model)
        assert out.shape == a.shape

    def test_dcgan_backbone_rejected(self, model):
        a, b = images(2, seed=10)
        with pytest.raises(UnsupportedOperationError):
            style_mix(a, b, 1, model)

    def test_out_of_range_crossover_rejected(self, style_model):
        a, b = images(2, seed=11)
        with pytest.raises(ValueError):
            style_mix(a, b, 99, style_model)


class TestMaskingAndInpaint:
    def test_mask_zeroes_exact_rectangle(self):
        x = torch.ones(1, 16, 16)
        masked = mask_rect(x, (2, 3, 4, 5))
        assert (masked[:, 2:6, 3:8] == 0).all()
        total = masked.sum().item()
        assert total == 16 * 16 - 4 * 5

    def test_mask_does_not_mutate_input(self):
        x = torch.ones(1, 16, 16)
        mask_rect(x, (0, 0, 4, 4))
        assert (x == 1).all()

    def test_out_of_bounds_rectangle_rejected(self):
        with pytest.raises(ValueError):
            mask_rect(torch.ones(1, 16, 16), (10, 10, 8, 8))
        with pytest.raises(ValueError):
            mask_rect(torch.ones(1, 16, 16), (-1, 0, 4, 4))

    def test_empty_mask_is_plain_reconstruction(self, model):
        x = images(1, seed=12)[0]
        assert torch.equal(inpaint(x, (0, 0, 0, 0), model), reconstruct(x, model))

    def test_inpaint_runs_on_masked_input(self, model):
        x = images(1, seed=13)[0]
        want = reconstruct(mask_rect(x, (4, 4, 6, 6)), model)
        assert torch.equal(inpaint(x, (4, 4, 6, 6), model), want)


class TestComposites:
    def test_exact_concatenation_along_width(self):
        a, b = torch.full((1, 4, 4), -1.0), torch.full((1, 4, 4), 1.0)
        out = composite_images(a, b, axis="width")
        assert (out[..., :, :2] == -1).all() and (out[..., :, 2:] == 1).all()

    def test_exact_concatenation_along_height_with_split(self):
        a, b = torch.zeros(1, 4, 4), torch.ones(1, 4, 4)
        out = composite_images(a, b, axis="height", split=1)
        assert (out[..., :1, :] == 0).all() and (out[..., 1:, :] == 1).all()

    def test_identical_halves_reduce_to_reconstruction(self, model):
        x = images(1, seed=14)[0]
        assert torch.equal(merge(x, x, model), reconstruct(x, model))

    def test_invalid_axis_and_split_rejected(self):
        a = torch.zeros(1, 4, 4)
        with pytest.raises(ValueError):
            composite_images(a, a, axis="diagonal")
        with pytest.raises(ValueError):
            composite_images(a, a, split=9)
        with pytest.raises(ValueError):
            composite_images(a, torch.zeros(1, 8, 8))


class TestLatentFiles:
    def test_round_trip_with_sidecar(self, tmp_path, model):
        codes = invert(images(3, seed=15), model)
        path = export_latents(codes, tmp_path / "codes.bin", "abc123", ["x0", "x1", "x2"])
        back, meta = load_latents(tmp_path / "codes.bin")
        assert torch.allclose(back, codes, atol=1e-7)
        assert meta["count"] == 3
        assert meta["d_w"] == 6
        assert meta["checkpoint_id"] == "abc123"
        assert meta["sources"] == ["x0", "x1", "x2"]
        assert path == tmp_path / "codes.bin.json"

    def test_sidecar_is_json(self, tmp_path, model):
        codes = invert(images(1, seed=16), model)
        export_latents(codes, tmp_path / "c.bin", "id", ["a"])
        meta = json.loads((tmp_path / "c.bin.json").read_text())
        assert set(meta) >= {"count", "d_w", "checkpoint_id", "sources"}

    def test_truncated_payload_rejected(self, tmp_path, model):
        codes = invert(images(2, seed=17), model)
        export_latents(codes, tmp_path / "c.bin", "id", ["a", "b"])
        raw = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "c.bin").write_bytes(raw[:-4])
        with pytest.raises(IntegrityError):
            load_latents(tmp_path / "c.bin")

    def test_missing_sidecar_rejected(self, tmp_path, model):
        codes = invert(images(1, seed=18), model)
        export_latents(codes, tmp_path / "c.bin", "id", ["a"])
        (tmp_path / "c.bin.json").unlink()
        with pytest.raises(IntegrityError):
            load_latents(tmp_path / "c.bin")

    def test_source_count_mismatch_rejected(self, tmp_path, model):
        codes = invert(images(2, seed=19), model)
        with pytest.raises(ValueError):
            export_latents(codes, tmp_path / "c.bin", "id", ["only-one"])
