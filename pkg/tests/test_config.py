import pytest

from noisemix.config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    apply_profile,
    config_hash,
    load_config_file,
    resolved_text,
    set_key,
)


class TestValidation:
    def test_defaults_valid(self):
        RunConfig().validate()

    @pytest.mark.parametrize(
        "key,value",
        [
            ("data.tasks", "0"),
            ("data.tasks", "25"),
            ("data.samples_per_class", "2"),
            ("pinoise.tau", "-1"),
            ("pinoise.strategy", "bogus"),
            ("classifier.regularization", "0"),
            ("train.momentum", "1.5"),
            ("train.loss_mode", "hinge"),
            ("backbone.buffer_size", "8"),
            ("data.source", "images"),
        ],
    )
    def test_out_of_range_rejected(self, key, value):
        cfg = RunConfig()
        set_key(cfg, key, value)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_unknown_keys_rejected(self):
        cfg = RunConfig()
        with pytest.raises(ConfigError, match="unknown"):
            set_key(cfg, "data.nope", "1")
        with pytest.raises(ConfigError, match="unknown"):
            set_key(cfg, "nosection.x", "1")
        with pytest.raises(ConfigError, match="unknown"):
            set_key(cfg, "bare", "1")

    def test_type_coercion(self):
        cfg = RunConfig()
        set_key(cfg, "train.epochs", "3")
        set_key(cfg, "pinoise.shared_omega", "true")
        set_key(cfg, "data.separation", "2.5")
        assert cfg.train.epochs == 3
        assert cfg.pinoise.shared_omega is True
        assert cfg.data.separation == 2.5
        with pytest.raises(ConfigError):
            set_key(cfg, "train.epochs", "three")
        with pytest.raises(ConfigError):
            set_key(cfg, "pinoise.shared_omega", "maybe")


class TestFileAndOverrides:
    def test_file_parsing(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            """
# comment line
data.num_classes = 10   # trailing comment
train.epochs = 2
output_dir = out/here
""",
            encoding="utf-8",
        )
        cfg = load_config_file(path)
        assert cfg.data.num_classes == 10
        assert cfg.train.epochs == 2
        assert cfg.output_dir == "out/here"

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("data.num_classes 10\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="key = value"):
            load_config_file(path)

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("train.epochs = 2\n", encoding="utf-8")
        cfg = load_config_file(path)
        apply_overrides(cfg, ["train.epochs=7"])
        assert cfg.train.epochs == 7
        with pytest.raises(ConfigError):
            apply_overrides(cfg, ["no-equals-sign"])

    def test_resolved_text_round_trips(self, tmp_path):
        cfg = RunConfig()
        set_key(cfg, "pinoise.latent_dim", "24")
        set_key(cfg, "train.lr_init", "0.0005")
        path = tmp_path / "resolved.cfg"
        path.write_text(resolved_text(cfg), encoding="utf-8")
        again = load_config_file(path)
        assert resolved_text(again) == resolved_text(cfg)
        assert config_hash(again) == config_hash(cfg)

    def test_hash_changes_with_values(self):
        a = RunConfig()
        b = RunConfig()
        set_key(b, "train.epochs", "11")
        assert config_hash(a) != config_hash(b)

    def test_profiles(self):
        cfg = RunConfig()
        apply_profile(cfg, "paper-dims")
        assert cfg.pinoise.latent_dim == 192
        assert cfg.backbone.buffer_size == 16384
        with pytest.raises(ConfigError):
            apply_profile(cfg, "huge")
