"""
Tests for the flat key = value run configuration: resolution order, coercion,
unknown keys, validation and the deterministic text form.
"""

import pytest

from em_seg_adapt.config import KEYS
from em_seg_adapt.config import RunConfig
from em_seg_adapt.config import apply_overrides
from em_seg_adapt.config import arch_from_text
from em_seg_adapt.config import arch_to_text
from em_seg_adapt.config import config_digest
from em_seg_adapt.config import load_run_config
from em_seg_adapt.config import parse_kv_text
from em_seg_adapt.config import to_text
from em_seg_adapt.models import ConfigError
from tests.conftest import TINY_ARCH
from tests.conftest import make_run_config


class TestResolution:
    def test_defaults(self):
        cfg = load_run_config()
        assert cfg == RunConfig()
        assert cfg.train.lr0 == 2e-4
        assert cfg.train.poly_power == 0.9
        assert cfg.train.weights.lambda_rec == 1e-3
        assert cfg.data.train_fraction == 0.67

    def test_file_then_overrides(self, tmp_path):
        """File values replace defaults; overrides replace file values."""
        path = tmp_path / "run.conf"
        path.write_text(
            "# comment line\n"
            "train.total_iters = 300\n"
            "train.en = false\n"
            "eval.threshold = 0.4\n"
        )
        cfg = load_run_config(path, {"train.total_iters": "50"})
        assert cfg.train.total_iters == 50
        assert cfg.train.ablation.en is False
        assert cfg.eval.threshold == 0.4

    def test_tuple_members(self):
        overrides = {"synth.blob_count_min": "2", "train.adam_beta2": "0.99"}
        cfg = apply_overrides(RunConfig(), overrides)
        assert cfg.synth.blob_count_range == (2, 7)
        assert cfg.train.adam_betas == (0.9, 0.99)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "missing.conf")


class TestErrors:
    def test_unknown_keys_named(self):
        """Every unknown key appears in the message."""
        with pytest.raises(ConfigError, match="train.lr, zz.top"):
            apply_overrides(RunConfig(), {"zz.top": "1", "train.lr": "1"})

    def test_bad_number(self):
        with pytest.raises(ConfigError, match="train.total_iters"):
            apply_overrides(RunConfig(), {"train.total_iters": "many"})

    def test_bad_boolean(self):
        with pytest.raises(ConfigError, match="not a boolean"):
            apply_overrides(RunConfig(), {"train.en": "maybe"})

    def test_config_error_is_value_error(self):
        with pytest.raises(ValueError):
            load_run_config(overrides={"eval.threshold": "1.5"})

    @pytest.mark.parametrize(
        "key,value",
        [
            ("data.patch", "60"),
            ("eval.tile", "36"),
            ("eval.overlap", "64"),
            ("data.train_fraction", "1.0"),
            ("train.lambda_feat", "-1"),
            ("train.disc_steps", "0"),
            ("arch.depth", "0"),
        ],
    )
    def test_out_of_domain_values(self, key, value):
        with pytest.raises(ConfigError):
            load_run_config(overrides={key: value})

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("this line has no separator\n")
        with pytest.raises(ConfigError, match="Cannot parse"):
            load_run_config(path)


class TestTextForm:
    def test_to_text_round_trip(self, tmp_path):
        """A config written by to_text loads back to the same config."""
        cfg = make_run_config()
        path = tmp_path / "config.txt"
        path.write_text(to_text(cfg))
        assert load_run_config(path) == cfg

    def test_sorted_and_complete(self):
        lines = to_text(RunConfig()).splitlines()
        keys = [line.split(" = ")[0] for line in lines]
        assert keys == sorted(KEYS)

    def test_digest_tracks_content(self):
        assert config_digest(RunConfig()) == config_digest(RunConfig())
        assert config_digest(RunConfig()) != config_digest(make_run_config())

    def test_arch_text(self):
        assert arch_from_text(arch_to_text(TINY_ARCH)) == TINY_ARCH

    def test_key_case_preserved(self):
        assert parse_kv_text("Mixed.Case = 1") == {"Mixed.Case": "1"}
