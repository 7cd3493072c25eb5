"""TOML configuration: strict key checking and full round trips."""

import pytest

from invgan.config import parse_config, parse_config_text, serialize_config
from invgan.errors import ConfigError

MINIMAL = 'variant = "full"\n'

FULL = """
variant = "augmented_naive"
batch_size = 32
lr_d = 1e-4
lr_g = 3e-4
beta1 = 0.5
beta2 = 0.99
epochs = 7
seed = 13
eval_every = 25

[backbone]
kind = "style_modulated"
resolution = 16
channels = 1
d_z = 8
d_w = 8
d_f = 24
widths = [24, 12]
mapping_depth = 4

[weights]
lambda_gan = 1.5
lambda_lat = 2.0
lambda_fm = 0.5
lambda_cyc = 0.25
lambda_mmd = 0.1
lambda_pix = 1.0

[kernel]
bandwidths = [0.5, 1.0]
estimator = "unbiased"
"""


class TestParsing:
    def test_minimal_config_uses_defaults(self):
        cfg = parse_config_text(MINIMAL)
        assert cfg.variant == "full"
        assert cfg.batch_size == 64
        assert cfg.backbone.kind == "dcgan"
        assert cfg.weights.lambda_gan == 1.0
        assert cfg.kernel.bandwidths is None

    def test_full_config_parsed_faithfully(self):
        cfg = parse_config_text(FULL)
        assert cfg.variant == "augmented_naive"
        assert cfg.batch_size == 32
        assert cfg.lr_d == 1e-4
        assert cfg.epochs == 7
        assert cfg.backbone.kind == "style_modulated"
        assert cfg.backbone.widths == (24, 12)
        assert cfg.backbone.mapping_depth == 4
        assert cfg.weights.lambda_cyc == 0.25
        assert cfg.kernel.bandwidths == (0.5, 1.0)
        assert cfg.kernel.estimator == "unbiased"

    def test_missing_variant_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            parse_config_text("batch_size = 8\n")

    def test_unknown_top_level_key_named_in_error(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            parse_config_text(MINIMAL + "learning_rate = 0.1\n")

    def test_unknown_table_key_named_with_section(self):
        text = MINIMAL + "[backbone]\nflavor = 3\n"
        with pytest.raises(ConfigError, match="backbone.flavor"):
            parse_config_text(text)

    def test_unknown_table_rejected(self):
        with pytest.raises(ConfigError, match="optimizer"):
            parse_config_text(MINIMAL + "[optimizer]\nlr = 1.0\n")

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError, match="batch_size"):
            parse_config_text('variant = "full"\nbatch_size = "large"\n')

    def test_int_accepted_for_float_fields(self):
        cfg = parse_config_text(MINIMAL + "lr_d = 1\n")
        assert cfg.lr_d == 1.0

    def test_bool_not_coerced_to_int(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config_text(MINIMAL + "epochs = true\n")

    def test_odd_batch_size_rejected(self):
        with pytest.raises(ConfigError, match="even"):
            parse_config_text(MINIMAL + "batch_size = 9\n")

    def test_invalid_variant_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            parse_config_text('variant = "extra_full"\n')

    def test_invalid_toml_reported_as_config_error(self):
        with pytest.raises(ConfigError):
            parse_config_text("variant = [unterminated\n")


class TestSerialization:
    def test_round_trip_identity(self):
        cfg = parse_config_text(FULL)
        assert parse_config_text(serialize_config(cfg)) == cfg

    def test_round_trip_of_defaults(self):
        cfg = parse_config_text(MINIMAL)
        assert parse_config_text(serialize_config(cfg)) == cfg

    def test_serialized_text_is_fully_resolved(self):
        text = serialize_config(parse_config_text(MINIMAL))
        for needle in ("variant", "batch_size", "[backbone]", "[weights]", "[kernel]"):
            assert needle in text

    def test_parse_config_reads_files(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(FULL)
        assert parse_config(path) == parse_config_text(FULL)

    def test_parse_config_missing_file(self, tmp_path):
        with pytest.raises((ConfigError, OSError)):
            parse_config(tmp_path / "nope.toml")
