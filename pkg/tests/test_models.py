"""Architecture contracts: shapes, purity, head separation, spec validation."""

import pytest
import torch

from invgan.errors import ConfigError
from invgan.models import (
    BackboneSpec,
    DualHeadDiscriminator,
    InvGan,
    MappingNetwork,
    build_model,
    sample_noise,
)


def tiny_spec(kind="dcgan", **kw):
    base = dict(
        kind=kind, resolution=16, channels=1, d_z=6, d_w=6, d_f=12, widths=(12, 8)
    )
    base.update(kw)
    return BackboneSpec(**base)


@pytest.fixture(scope="module", params=["dcgan", "style_modulated"])
def model(request):
    return build_model(tiny_spec(request.param), seed=0).eval()


def randn(*shape, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=gen)


class TestShapes:
    def test_mapping_output(self, model):
        assert model.map_latent(randn(5, 6)).shape == (5, 6)

    def test_generator_output(self, model):
        assert model.generate(randn(4, 6)).shape == (4, 1, 16, 16)

    def test_discriminator_outputs(self, model):
        out = model.discriminate(torch.tanh(randn(8, 1, 16, 16)))
        assert out.score.shape == (8,)
        assert out.inferred_w.shape == (8, 6)
        assert out.features.shape == (8, 12)

    def test_declared_shapes_at_larger_dims(self):
        spec = BackboneSpec(
            kind="dcgan", resolution=32, channels=1, d_z=64, d_w=64, d_f=256,
            widths=(32, 16, 8),
        )
        m = build_model(spec, seed=0).eval()
        out = m.discriminate(torch.zeros(8, 1, 32, 32))
        assert out.score.shape == (8,)
        assert out.inferred_w.shape == (8, 64)
        assert out.features.shape == (8, 256)

    def test_mapping_rejects_wrong_noise_dim(self, model):
        with pytest.raises(ValueError):
            model.map_latent(randn(3, 7))

    def test_discriminator_rejects_wrong_resolution(self, model):
        with pytest.raises(ValueError):
            model.discriminate(randn(2, 1, 8, 8))


class TestGeneratorRange:
    def test_outputs_bounded(self, model):
        for seed in range(5):
            x = model.generate(3.0 * randn(4, 6, seed=seed))
            assert x.min().item() >= -1.0
            assert x.max().item() <= 1.0


class TestPurity:
    def test_mapping_deterministic(self, model):
        z = randn(3, 6, seed=1)
        assert torch.equal(model.map_latent(z), model.map_latent(z))

    def test_generator_deterministic(self, model):
        w = randn(3, 6, seed=2)
        assert torch.equal(model.generate(w), model.generate(w))

    def test_discriminator_deterministic(self, model):
        x = torch.tanh(randn(3, 1, 16, 16, seed=3))
        a, b = model.discriminate(x), model.discriminate(x)
        assert torch.equal(a.score, b.score)
        assert torch.equal(a.inferred_w, b.inferred_w)
        assert torch.equal(a.features, b.features)


class TestHeadSeparation:
    def test_zeroed_inference_head_leaves_score_unchanged(self):
        m = build_model(tiny_spec(), seed=0).eval()
        x = torch.tanh(randn(4, 1, 16, 16, seed=4))
        before = m.discriminate(x).score.clone()
        with torch.no_grad():
            for p in m.discriminator.inference_parameters():
                p.zero_()
        after = m.discriminate(x).score
        assert torch.equal(before, after)

    def test_score_gradient_wrt_inference_head_is_zero(self):
        m = build_model(tiny_spec(), seed=0).eval()
        x = torch.tanh(randn(4, 1, 16, 16, seed=5))
        score_sum = m.discriminate(x).score.sum()
        inference_params = list(m.discriminator.inference_parameters())
        grads = torch.autograd.grad(score_sum, inference_params, allow_unused=True)
        assert all(g is None or not g.any() for g in grads)

    def test_parameter_groups_partition_discriminator(self):
        d = DualHeadDiscriminator(tiny_spec())
        groups = (
            list(d.trunk_parameters())
            + list(d.score_parameters())
            + list(d.inference_parameters())
        )
        assert len(groups) == len(list(d.parameters()))
        assert {id(p) for p in groups} == {id(p) for p in d.parameters()}


class TestFeatures:
    def test_extract_features_aliases_discriminate(self, model):
        x = torch.tanh(randn(4, 1, 16, 16, seed=6))
        assert torch.equal(model.extract_features(x), model.discriminate(x).features)

    def test_distinct_images_get_distinct_features(self):
        m = build_model(tiny_spec(), seed=0).eval()
        for seed in range(100):
            pair = torch.tanh(randn(2, 1, 16, 16, seed=seed))
            f = m.extract_features(pair)
            assert not torch.equal(f[0], f[1])


class TestMapping:
    def test_zero_noise_propagates_last_layer_bias(self):
        net = MappingNetwork(d_z=4, d_w=4, depth=2)
        with torch.no_grad():
            layers = [m for m in net.modules() if isinstance(m, torch.nn.Linear)]
            for layer in layers:
                layer.weight.copy_(torch.eye(4))
                layer.bias.zero_()
            layers[-1].bias.copy_(torch.tensor([1.0, -2.0, 3.0, 0.5]))
        w = net(torch.zeros(2, 4))
        assert torch.allclose(w, torch.tensor([1.0, -2.0, 3.0, 0.5]).expand(2, 4))

    def test_depth_defaults_per_backbone(self):
        assert tiny_spec("dcgan").mapping_depth == 2
        assert tiny_spec("style_modulated").mapping_depth == 8
        assert tiny_spec("dcgan", mapping_depth=3).mapping_depth == 3

    def test_depth_validated(self):
        with pytest.raises(ConfigError):
            tiny_spec(mapping_depth=0)


class TestStyleInjection:
    def test_broadcast_equals_explicit_list(self):
        m = build_model(tiny_spec("style_modulated"), seed=0).eval()
        w = randn(2, 6, seed=7)
        layers = m.generator.n_style_layers
        broadcast = m.generate(w)
        explicit = m.generate([w] * layers)
        assert torch.equal(broadcast, explicit)

    def test_mixed_styles_differ_from_either_source(self):
        m = build_model(tiny_spec("style_modulated"), seed=0).eval()
        w_a, w_b = randn(2, 6, seed=8), randn(2, 6, seed=9)
        layers = m.generator.n_style_layers
        mixed = m.generate([w_a] * (layers // 2) + [w_b] * (layers - layers // 2))
        assert not torch.equal(mixed, m.generate(w_a))
        assert not torch.equal(mixed, m.generate(w_b))

    def test_wrong_list_length_rejected(self):
        m = build_model(tiny_spec("style_modulated"), seed=0)
        with pytest.raises(ConfigError):
            m.generate([randn(2, 6)] * 99)

    def test_dcgan_rejects_style_lists(self):
        m = build_model(tiny_spec("dcgan"), seed=0)
        with pytest.raises(ConfigError):
            m.generate([randn(2, 6), randn(2, 6)])


class TestNoise:
    def test_sample_noise_shape_and_moments(self):
        gen = torch.Generator().manual_seed(0)
        z = sample_noise(20_000, 8, generator=gen)
        assert z.shape == (20_000, 8)
        assert abs(z.mean().item()) < 0.02
        assert abs(z.std().item() - 1.0) < 0.02

    def test_sample_noise_respects_generator(self):
        a = sample_noise(4, 3, generator=torch.Generator().manual_seed(7))
        b = sample_noise(4, 3, generator=torch.Generator().manual_seed(7))
        assert torch.equal(a, b)


class TestSpecValidation:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            tiny_spec(kind="biggan")

    def test_resolution_must_match_width_count(self):
        with pytest.raises(ConfigError):
            tiny_spec(widths=(12, 8, 4))  # 3 stages would need 32px

    def test_resolution_must_be_power_of_two_times_four(self):
        with pytest.raises(ConfigError):
            tiny_spec(resolution=20, widths=(12, 8))

    def test_channels_validated(self):
        with pytest.raises(ConfigError):
            tiny_spec(channels=2)

    def test_positive_dims_required(self):
        with pytest.raises(ConfigError):
            tiny_spec(d_z=0)
        with pytest.raises(ConfigError):
            tiny_spec(d_f=-1)

    def test_round_trip(self):
        spec = tiny_spec("style_modulated")
        assert BackboneSpec.from_dict(spec.to_dict()) == spec

    def test_seeded_build_is_reproducible(self):
        a = build_model(tiny_spec(), seed=3)
        b = build_model(tiny_spec(), seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        c = build_model(tiny_spec(), seed=4)
        assert any(
            not torch.equal(pa, pc)
            for pa, pc in zip(a.parameters(), c.parameters())
        )
