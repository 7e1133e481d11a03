"""Config loading: defaults, JSON files, env overrides, bad input."""

import json

import pytest

from gazemanip.config import AppConfig, load_config


class TestDefaults:
    def test_oracle_backend_out_of_the_box(self):
        cfg = load_config(env={})
        assert cfg.backend.kind == "oracle"
        assert cfg.port == 8080

    def test_paper_gaze_thresholds(self):
        cfg = load_config(env={})
        assert cfg.gaze.dispersion_px == 15.0
        assert cfg.gaze.min_duration_s == 2.0

    def test_panel_grid_shape(self):
        cfg = load_config(env={})
        assert len(cfg.panel.buttons) == 14
        assert cfg.panel.button_px == 120

    def test_to_dict_is_json_serializable(self):
        doc = load_config(env={}).to_dict()
        assert json.loads(json.dumps(doc)) == doc


class TestFile:
    def test_file_values_override_defaults(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({
            "port": 9001,
            "gaze": {"dispersion_px": 22.0},
            "backend": {"kind": "remote", "endpoint": "http://vlm.local/v1",
                        "api_key_env": "KEY", "model": "m-1"},
            "panel": {"origin": [0, 0]},
        }))
        cfg = load_config(p, env={})
        assert cfg.port == 9001
        assert cfg.gaze.dispersion_px == 22.0
        assert cfg.gaze.min_duration_s == 2.0  # untouched fields keep defaults
        assert cfg.backend.endpoint == "http://vlm.local/v1"
        assert cfg.panel.origin == (0, 0)

    def test_non_object_root_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("[1, 2]")
        with pytest.raises(ValueError, match="object"):
            load_config(p, env={})

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.json", env={})


class TestEnvOverrides:
    def test_env_beats_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"port": 9001}))
        cfg = load_config(p, env={"GAZEMANIP_PORT": "7777"})
        assert cfg.port == 7777

    def test_gaze_threshold_override(self):
        cfg = load_config(env={"GAZEMANIP_DISPERSION_PX": "9.5",
                               "GAZEMANIP_MIN_DURATION_S": "1.0"})
        assert cfg.gaze.dispersion_px == 9.5
        assert cfg.gaze.min_duration_s == 1.0

    def test_backend_override(self):
        cfg = load_config(env={
            "GAZEMANIP_BACKEND_KIND": "remote",
            "GAZEMANIP_BACKEND_ENDPOINT": "http://h/v1",
            "GAZEMANIP_BACKEND_API_KEY_ENV": "K",
        })
        assert cfg.backend.kind == "remote"
        assert cfg.backend.endpoint == "http://h/v1"

    def test_unparseable_value_names_the_variable(self):
        with pytest.raises(ValueError, match="GAZEMANIP_PORT"):
            load_config(env={"GAZEMANIP_PORT": "eighty"})

    def test_empty_value_ignored(self):
        cfg = load_config(env={"GAZEMANIP_PORT": ""})
        assert cfg.port == 8080

    def test_invalid_combination_fails_backend_validation(self):
        with pytest.raises(ValueError, match="remote"):
            load_config(env={"GAZEMANIP_BACKEND_KIND": "remote"})


class TestAppConfig:
    def test_frozen(self):
        cfg = AppConfig()
        with pytest.raises(AttributeError):
            cfg.port = 1234
