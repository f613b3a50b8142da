import pytest

from tacshape.config import ExperimentConfig, config_hash, dump_config, load_config
from tacshape.errors import ConfigError


class TestDefaults:
    def test_defaults_validate(self):
        cfg = load_config()
        assert cfg.experiment.touch_counts == (1, 10, 20)
        assert cfg.eval.n_points == 4096
        assert cfg.mc.resolution == 128
        assert cfg.decoder.latent_dim == 32
        assert cfg.decoder.penc_l == 6
        assert cfg.sensor.image_size == 64

    def test_dump_roundtrip_hash(self, tmp_path):
        cfg = load_config()
        path = tmp_path / "full.cfg"
        path.write_text(dump_config(cfg))
        cfg2 = load_config(path)
        assert config_hash(cfg2) == config_hash(cfg)


class TestFileParsing:
    def test_partial_override(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[corpus]\ncount = 8\nn_train = 4\nn_val = 2\nn_test = 2\n"
                        "[experiment]\ntouch_counts = 1, 5, 9\n")
        cfg = load_config(path)
        assert cfg.corpus.count == 8
        assert cfg.experiment.touch_counts == (1, 5, 9)
        assert cfg.eval.n_points == 4096  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[corpus]\nbananas = 7\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[fruit]\ncount = 7\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_value_type(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[corpus]\ncount = seven\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bool_parsing(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[decoder]\nclamp_enabled = false\n")
        assert load_config(path).decoder.clamp_enabled is False

    def test_comments_ignored(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[mc]\nresolution = 64  # coarse grid\n")
        assert load_config(path).mc.resolution == 64

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")


class TestValidation:
    def test_touch_counts_must_increase(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[experiment]\ntouch_counts = 5, 5, 9\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_split_exceeds_count(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[corpus]\ncount = 5\nn_train = 4\nn_val = 1\nn_test = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_sensor_invariants_enforced(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("[sensor]\nimage_size = 4\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_hash_changes_with_content(self, tmp_path):
        a = load_config()
        path = tmp_path / "c.cfg"
        path.write_text("[mc]\nresolution = 48\n")
        b = load_config(path)
        assert config_hash(a) != config_hash(b)
