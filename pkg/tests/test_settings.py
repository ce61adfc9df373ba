"""Tests for precision presets, overrides and config files."""

import math

import pytest

from engine.errors import InvalidArgumentError
from engine.settings import PRESETS, PrecisionLevel, SettingsManager, default_settings, parse_config_file


def test_presets_are_ordered_by_cost():
    quick, standard, full = (PRESETS[level] for level in PrecisionLevel)
    assert quick.fine_resolution < standard.fine_resolution < full.fine_resolution
    assert quick.n_max <= standard.n_max <= full.n_max
    for preset in (quick, standard, full):
        assert preset.fine_resolution % preset.n_max == 0
        assert 2.0 < preset.rough_p <= 3.0


def test_default_is_standard():
    assert default_settings() is PRESETS[PrecisionLevel.STANDARD]


def test_phi_is_log_power():
    s = default_settings()
    assert s.phi(256) == pytest.approx(math.log(256))


def test_manager_levels():
    manager = SettingsManager()
    assert manager.get_level_name() == "Standard"
    manager.set_level(PrecisionLevel.QUICK)
    assert manager.get_current_settings() is PRESETS[PrecisionLevel.QUICK]


def test_overrides_are_coerced():
    manager = SettingsManager(PrecisionLevel.QUICK)
    manager.apply_overrides({"ode_rtol": "1e-8", "n_max": "128", "c_hat": 2, "horizon": None})
    s = manager.get_current_settings()
    assert s.ode_rtol == 1e-8
    assert s.n_max == 128 and isinstance(s.n_max, int)
    assert s.c_hat == 2.0
    assert s.horizon == PRESETS[PrecisionLevel.QUICK].horizon


def test_unknown_or_bad_override():
    manager = SettingsManager()
    with pytest.raises(InvalidArgumentError):
        manager.apply_overrides({"no_such_setting": 1})
    with pytest.raises(InvalidArgumentError):
        manager.apply_overrides({"ode_rtol": "tight"})


def test_integer_settings_reject_fractions():
    manager = SettingsManager(PrecisionLevel.QUICK)
    with pytest.raises(InvalidArgumentError, match="n_max"):
        manager.apply_overrides({"n_max": "100.7"})
    manager.apply_overrides({"n_max": "128.0"})
    assert manager.get_current_settings().n_max == 128


def test_parse_config_file(tmp_path):
    path = tmp_path / "lab.cfg"
    path.write_text("# comment\nkappa = 2.5\n\nphi-exponent=2  # trailing\n")
    assert parse_config_file(path) == {"kappa": "2.5", "phi_exponent": "2"}


def test_parse_config_file_errors(tmp_path):
    path = tmp_path / "lab.cfg"
    path.write_text("kappa 2.5\n")
    with pytest.raises(InvalidArgumentError, match="lab.cfg:1"):
        parse_config_file(path)
    with pytest.raises(InvalidArgumentError):
        parse_config_file(tmp_path / "missing.cfg")


def test_load_config_file(tmp_path):
    path = tmp_path / "lab.cfg"
    path.write_text("swallow_radius = 1e-5\n")
    manager = SettingsManager()
    manager.load_config_file(path)
    assert manager.get_current_settings().swallow_radius == 1e-5
