"""
Tests for configuration layering.
"""
import os
from unittest import mock

import pytest

from flowinterp.config import (
    CONFIG_ENV,
    env_overrides,
    find_config_file,
    load_env_files,
    read_config_file,
    resolve_config,
    upsert_config_value,
)
from flowinterp.control import RunConfig
from flowinterp.grid import ConfigError, ImageIOError


class TestFindConfigFile:
    """Test config file discovery."""

    def test_explicit_path_wins(self, tmp_path):
        """Test an explicit path is returned even when the variable is set."""
        explicit = tmp_path / "mine.cfg"
        found = find_config_file(explicit, {CONFIG_ENV: str(tmp_path / "other.cfg")})
        assert found == explicit

    def test_environment_variable(self, tmp_path):
        """Test FLOWINTERP_CONFIG is used without an explicit path."""
        target = tmp_path / "env.cfg"
        assert find_config_file(None, {CONFIG_ENV: str(target)}) == target

    def test_local_file(self, tmp_path, monkeypatch):
        """Test ./flowinterp.cfg is picked up when present."""
        monkeypatch.chdir(tmp_path)
        assert find_config_file(None, {}) is None
        (tmp_path / "flowinterp.cfg").write_text("loop = 1\n")
        assert find_config_file(None, {}) == tmp_path / "flowinterp.cfg"


class TestReadConfigFile:
    """Test parsing of key = value files."""

    def test_parse(self, tmp_config_file):
        """Test comments are skipped and values kept as strings."""
        values = read_config_file(tmp_config_file)
        assert values == {"loop": "1", "pyramid_levels": "2", "lambda_star": "2e5"}

    def test_missing(self, tmp_path):
        """Test a missing file raises ImageIOError."""
        with pytest.raises(ImageIOError):
            read_config_file(tmp_path / "absent.cfg")


class TestEnvOverrides:
    """Test FLOWINTERP_* variables."""

    def test_known_keys_only(self):
        """Test only RunConfig keys are picked up and empty values ignored."""
        environ = {
            "FLOWINTERP_LOOP": "1",
            "FLOWINTERP_N_LOOP": "",
            "FLOWINTERP_UNRELATED": "x",
            "PATH": "/bin",
        }
        assert env_overrides(environ) == {"loop": "1"}


class TestResolveConfig:
    """Test the priority order defaults < file < environment < overrides."""

    def test_defaults(self, tmp_path, monkeypatch):
        """Test with nothing set the defaults come back."""
        monkeypatch.chdir(tmp_path)
        assert resolve_config(None, None, {}) == RunConfig()

    def test_file(self, tmp_config_file):
        """Test file values replace defaults."""
        cfg = resolve_config(tmp_config_file, None, {})
        assert cfg.loop == 1
        assert cfg.pyramid_levels == 2
        assert cfg.lambda_star == 2e5
        assert cfg.n_loop == RunConfig().n_loop

    def test_environment_beats_file(self, tmp_config_file):
        """Test a variable overrides the file."""
        cfg = resolve_config(tmp_config_file, None, {"FLOWINTERP_PYRAMID_LEVELS": "1"})
        assert cfg.pyramid_levels == 1
        assert cfg.loop == 1

    def test_overrides_beat_environment(self, tmp_config_file):
        """Test explicit overrides have the last word."""
        cfg = resolve_config(
            tmp_config_file,
            {"pyramid_levels": 0, "scheme": "tvd"},
            {"FLOWINTERP_PYRAMID_LEVELS": "1", "FLOWINTERP_SCHEME": "char"},
        )
        assert cfg.pyramid_levels == 0
        assert cfg.scheme == "tvd"

    def test_config_file_from_environment(self, tmp_config_file):
        """Test FLOWINTERP_CONFIG selects the file."""
        cfg = resolve_config(None, None, {CONFIG_ENV: str(tmp_config_file)})
        assert cfg.lambda_star == 2e5

    def test_unknown_key(self, tmp_path):
        """Test an unknown key in the file is a ConfigError."""
        bad = tmp_path / "bad.cfg"
        bad.write_text("loop = 1\nlamda_star = 3\n")
        with pytest.raises(ConfigError, match="lamda_star"):
            resolve_config(bad, None, {})

    def test_invalid_value(self, tmp_path, monkeypatch):
        """Test a value that does not coerce is a ConfigError."""
        monkeypatch.chdir(tmp_path)
        with pytest.raises(ConfigError):
            resolve_config(None, None, {"FLOWINTERP_N_LOOP": "many"})

    def test_missing_explicit_file(self, tmp_path):
        """Test a named but missing file raises ImageIOError."""
        with pytest.raises(ImageIOError):
            resolve_config(tmp_path / "nope.cfg", None, {})


class TestUpsertConfigValue:
    """Test writing config values."""

    def test_creates_file(self, tmp_path):
        """Test a new file is created with the key."""
        target = tmp_path / "sub" / "flowinterp.cfg"
        upsert_config_value(target, "loop", "1")
        assert target.read_text() == "loop = 1\n"

    def test_updates_in_place(self, tmp_config_file):
        """Test an existing key is replaced and other lines are kept."""
        upsert_config_value(tmp_config_file, "pyramid_levels", "4")
        text = tmp_config_file.read_text()
        assert "pyramid_levels = 4\n" in text
        assert "pyramid_levels = 2" not in text
        assert text.startswith("# test settings\n")
        assert read_config_file(tmp_config_file)["loop"] == "1"

    def test_appends_after_unterminated_line(self, tmp_path):
        """Test a missing trailing newline does not glue two settings together."""
        target = tmp_path / "flowinterp.cfg"
        target.write_text("loop = 1")
        upsert_config_value(target, "n_loop", "5")
        assert read_config_file(target) == {"loop": "1", "n_loop": "5"}


class TestLoadEnvFiles:
    """Test .env loading."""

    def test_does_not_override(self, tmp_path, monkeypatch):
        """Test variables already set keep their value and new ones are added."""
        home = tmp_path / "home"
        home.mkdir()
        (home / ".env").write_text("FLOWINTERP_LOOP=1\nFLOWINTERP_N_LOOP=7\n")
        work = tmp_path / "work"
        work.mkdir()
        monkeypatch.chdir(work)
        monkeypatch.setenv("FLOWINTERP_LOOP", "2")
        monkeypatch.delenv("FLOWINTERP_N_LOOP", raising=False)
        with mock.patch("pathlib.Path.home", return_value=home):
            load_env_files()
        try:
            assert os.environ["FLOWINTERP_LOOP"] == "2"
            assert os.environ["FLOWINTERP_N_LOOP"] == "7"
        finally:
            os.environ.pop("FLOWINTERP_N_LOOP", None)
