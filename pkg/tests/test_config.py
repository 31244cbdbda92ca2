"""
Tests for INI configuration loading, presets and the shared utilities
"""

import logging

import numpy as np
import pytest

from src.core.config import PRESETS, TASK_NAMES, Config, TaskFlags, TrainConfig, load_config, save_config
from src.core.errors import ConfigError
from src.core.utils import MetricsLog, derive_rng, format_duration, setup_logger, write_metrics_file


def _write(tmp_path, text):
    path = tmp_path / "settings.ini"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestPresets:

    def test_m1_enables_mlm_and_msg_only(self):
        assert TaskFlags.preset("M1").enabled() == ["mlm", "msg"]

    def test_m6_is_the_default(self):
        assert TaskFlags.preset("m6") == TaskFlags()
        assert not TaskFlags().legacy_vsa

    def test_m4_uses_legacy_alignment(self):
        flags = TaskFlags.preset("M4")
        assert flags.legacy_vsa and not flags.dual_vsa

    def test_only_m5_subsamples(self):
        assert {name for name, (_, fraction) in PRESETS.items() if fraction < 1.0} == {"M5"}
        assert PRESETS["M5"][1] == 0.01

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="M7"):
            TaskFlags.preset("M7")


class TestLoadConfig:

    def test_defaults_without_file(self):
        config = load_config(None)
        assert config.train.tasks.enabled() == [t for t in TASK_NAMES if t != "legacy_vsa"]
        assert config.train.temperature == 0.7
        assert config.train.momentum == 0.999

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(str(tmp_path / "absent.ini"))

    def test_sections_override_defaults(self, tmp_path):
        config = load_config(_write(tmp_path, (
            "[model]\nhidden_size = 16\nheads = 2\n"
            "[train]\nbatch_size = 3\nlearning_rate = 0.01\nnormalize_embeddings = yes\n"
            "[downstream]\nrecall_ks = 1, 3\n"
            "[paths]\nout_dir = runs/x\n"
        )))
        assert config.train.model.hidden_size == 16
        assert config.train.batch_size == 3
        assert config.train.learning_rate == 0.01
        assert config.train.normalize_embeddings is True
        assert config.downstream.recall_ks == (1, 3)
        assert config.paths.out_dir == "runs/x"

    def test_preset_then_task_overrides(self, tmp_path):
        config = load_config(_write(tmp_path, "[tasks]\npreset = M5\nmsom = false\n"))
        assert config.train.tasks.enabled() == ["mlm", "mfom", "msg", "intra_mfm", "inter_mfm", "dual_vsa"]
        assert config.train.data_fraction == 0.01

    def test_train_section_overrides_preset_fraction(self, tmp_path):
        config = load_config(_write(tmp_path, "[tasks]\npreset = M5\n[train]\ndata_fraction = 0.5\n"))
        assert config.train.data_fraction == 0.5

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="train.batchsize"):
            load_config(_write(tmp_path, "[train]\nbatchsize = 3\n"))

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError, match="optimizer"):
            load_config(_write(tmp_path, "[optimizer]\nlr = 1\n"))

    def test_bad_value(self, tmp_path):
        with pytest.raises(ConfigError, match="train.epochs"):
            load_config(_write(tmp_path, "[train]\nepochs = many\n"))

    @pytest.mark.parametrize("text, field", [
        ("[train]\nmomentum = 1.5\n", "momentum"),
        ("[train]\ntemperature = 0\n", "temperature"),
        ("[train]\ndata_fraction = 0\n", "data_fraction"),
        ("[tasks]\npreset = M1\nmlm = false\nmsg = false\n", "at least one"),
        ("[model]\nhidden_size = 10\n", "divisible"),
        ("[log]\nlog_level = LOUD\n", "log_level"),
    ])
    def test_out_of_range(self, tmp_path, text, field):
        with pytest.raises(ConfigError, match=field):
            load_config(_write(tmp_path, text))

    def test_save_then_load(self, tmp_path):
        config = Config()
        config.train.batch_size = 5
        config.train.tasks = TaskFlags.preset("M3")
        config.downstream.recall_ks = (2, 4)
        path = str(tmp_path / "saved.ini")
        save_config(config, path)
        assert load_config(path) == config

    def test_full_scale(self):
        config = TrainConfig.full_scale()
        config.validate()
        assert (config.batch_size, config.epochs, config.queue_capacity) == (128, 30, 65586)
        assert config.model.hidden_size == 768 and config.model.encoder_blocks == 12


class TestUtils:

    def test_derive_rng_is_order_independent(self):
        first = derive_rng(5, 2, 3).random(4)
        derive_rng(5, 9).random(100)
        np.testing.assert_array_equal(derive_rng(5, 2, 3).random(4), first)
        assert not np.array_equal(derive_rng(5, 3, 2).random(4), first)

    def test_format_duration(self):
        assert format_duration(0.25) == "250 ms"
        assert format_duration(12.34) == "12.3 sec"
        assert format_duration(600) == "10.0 min"

    def test_metrics_log_appends(self, tmp_path):
        path = str(tmp_path / "metrics.tsv")
        with MetricsLog(path, ["step", "loss"]) as log:
            log.write([1, 0.5])
        with MetricsLog(path, ["step", "loss"], append=True) as log:
            log.write([2, 0.25])
        with open(path, encoding="utf-8") as f:
            assert f.read() == "step\tloss\n1\t0.5\n2\t0.25\n"

    def test_metrics_log_width(self, tmp_path):
        with MetricsLog(str(tmp_path / "m.tsv"), ["a", "b"]) as log:
            with pytest.raises(ValueError):
                log.write([1])

    def test_metrics_file(self, tmp_path):
        path = tmp_path / "eval.tsv"
        write_metrics_file(str(path), {"R@1": 0.5, "median_rank": 2})
        assert path.read_text(encoding="utf-8") == "metric\tvalue\nR@1\t0.5\nmedian_rank\t2\n"

    def test_setup_logger_is_idempotent(self, tmp_path):
        log_file = str(tmp_path / "logs" / "run.log")
        setup_logger(log_file, "DEBUG", 1024, 1)
        setup_logger(log_file, "INFO", 1024, 1)
        root = logging.getLogger()
        ours = [h for h in root.handlers if getattr(h, "_vidlang_handler", False)]
        assert len(ours) == 2
        assert root.level == logging.INFO
        for handler in ours:
            root.removeHandler(handler)
            handler.close()
