import os
import subprocess
import sys

import numpy as np
import pytest

from hearken import cli, config
from hearken.errors import ConfigError
from hearken.seeding import derive_rng


class TestConfig:
    def test_defaults_loaded(self):
        cfg = config.load()
        assert cfg["arch"] == "A-mini"
        assert cfg["batch_size"] == 32
        assert cfg["mil.bag_size"] == 2

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("epochs=5\nmil.enabled=true  # comment\n\nlr=0.02\n")
        cfg = config.load(p, overrides=["epochs=7", "rank.loss=huber"], seed=99)
        assert cfg["epochs"] == 7
        assert cfg["mil.enabled"] is True
        assert cfg["lr"] == 0.02
        assert cfg["rank.loss"] == "huber"
        assert cfg["seed"] == 99

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config.load(overrides=["nonsense.key=1"])

    def test_bad_type_rejected(self):
        with pytest.raises(ConfigError):
            config.load(overrides=["epochs=banana"])

    def test_echo_refeed_identity(self, tmp_path):
        cfg = config.load(overrides=["epochs=9", "mil.enabled=true", "stop_accuracy=0.9"])
        p = tmp_path / "echo.cfg"
        p.write_text(config.echo(cfg))
        again = config.load(p)
        assert again == cfg

    def test_hidden_sizes(self):
        assert config.hidden_sizes(config.load()) == (64, 16)
        with pytest.raises(ConfigError):
            config.hidden_sizes(config.load(overrides=["rank.hidden=64"]))


class TestSeedDerivation:
    def test_same_path_same_stream(self):
        a = derive_rng(42, 3, 7).standard_normal(5)
        b = derive_rng(42, 3, 7).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_different_paths_differ(self):
        a = derive_rng(42, 3, 7).standard_normal(5)
        b = derive_rng(42, 3, 8).standard_normal(5)
        c = derive_rng(43, 3, 7).standard_normal(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestCliExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli.main(["synth", "--frobnicate"]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        assert cli.main(["dance"]) == 1

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        rc = cli.main(["eval", "--checkpoint", str(tmp_path / "no.aen"),
                       "--manifest", str(tmp_path / "no.tsv")])
        assert rc == 2

    def test_unknown_config_key_is_data_error(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path), "--set", "bogus=1"]) == 2

    def test_gradcheck_passes(self, capsys):
        rc = cli.main(["gradcheck", "--arch", "A-mini", "--seed", "0"])
        captured = capsys.readouterr()
        assert rc == 0
        assert "max relative error" in captured.out

    def test_synth_writes_manifest(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        rc = cli.main(["synth", "--out", str(out), "--seed", "3",
                       "--set", "synth.clips_per_class=2"])
        assert rc == 0
        assert (out / "manifest.tsv").exists()
        assert (out / "run_config.txt").exists()
        # config echo goes to stderr
        assert "config seed=3" in capsys.readouterr().err

    def test_console_script_installed(self):
        proc = subprocess.run([sys.executable, "-m", "hearken.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "synth" in proc.stdout
