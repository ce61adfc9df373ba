"""Tests for command dispatch and flag parsing helpers."""

import pytest

from engine.commands import (
    CommandResult,
    LabCommands,
    parse_float_list,
    parse_int_list,
    parse_kappa_seq,
    parse_point,
)
from engine.errors import InvalidArgumentError
from utils.csv_io import read_csv


@pytest.fixture
def commands():
    return LabCommands()


def test_normalize_command_aliases(commands):
    assert commands.normalize_command("trace") == "trace"
    assert commands.normalize_command(" Continuity ") == "compare-kappa"
    assert commands.normalize_command("rough-path") == "roughpath"
    assert commands.normalize_command("dance") is None


def test_parse_lists():
    assert parse_float_list("1, 2.5,") == [1.0, 2.5]
    assert parse_int_list("64,128") == [64, 128]
    with pytest.raises(InvalidArgumentError):
        parse_int_list("64,abc")


def test_parse_kappa_seq():
    assert parse_kappa_seq("geom:1:3", 2.0) == [2.5, 2.25, 2.125]
    assert parse_kappa_seq("geom-:2:3", 1.0) == [0.75, 0.875]
    assert parse_kappa_seq("2.5,2.25", 2.0) == [2.5, 2.25]
    with pytest.raises(InvalidArgumentError):
        parse_kappa_seq("geom:3:1", 2.0)
    with pytest.raises(InvalidArgumentError):
        parse_kappa_seq("geomx:1:2", 2.0)
    with pytest.raises(InvalidArgumentError, match="empty"):
        parse_kappa_seq(",", 2.0)


def test_parse_point():
    assert parse_point("1j") == 1j
    assert parse_point("0.5 + 1j") == 0.5 + 1j
    with pytest.raises(InvalidArgumentError):
        parse_point("north")


def test_unknown_command(commands, tmp_path):
    result, message = commands.execute_command("dance", {"out": str(tmp_path)})
    assert result is CommandResult.INVALID
    assert "dance" in message


def trace_flags(out, **extra):
    flags = {"out": str(out), "precision": "quick", "seed": 1, "kappa": 0.0, "n": 16, "format": "csv,json"}
    flags.update(extra)
    return flags


def test_trace_command_writes_outputs(commands, tmp_path):
    result, message = commands.execute_command("trace", trace_flags(tmp_path))
    assert result is CommandResult.SUCCESS, message
    names = {p.name for p in tmp_path.iterdir()}
    assert {"trace.csv", "driver.csv", "driver.json", "trace.json", "chain.json", "manifest.json"} <= names
    header, rows = read_csv(tmp_path / "trace.csv")
    assert header == ["t", "re", "im"] and len(rows) == 33
    # zero kappa gives the vertical segment, gamma(1) = 2i
    assert float(rows[-1][2]) == pytest.approx(2.0, abs=1e-6)


def test_trace_command_rejects_unknown_format(commands, tmp_path):
    result, _ = commands.execute_command("trace", trace_flags(tmp_path, format="csv,pdf"))
    assert result is CommandResult.INVALID
    assert not (tmp_path / "manifest.json").exists()


def test_trace_command_mesh_mismatch_is_invalid(commands, tmp_path):
    result, message = commands.execute_command("trace", trace_flags(tmp_path, n=3))
    assert result is CommandResult.INVALID
    assert "divide" in message


def test_settings_overrides_flow_through(commands, tmp_path):
    flags = trace_flags(tmp_path, overrides={"fine_resolution": "256"})
    assert commands.settings_for(flags).fine_resolution == 256
    result, _ = commands.execute_command("trace", dict(flags, overrides={"bogus": 1}))
    assert result is CommandResult.INVALID


def test_compare_refuses_supercritical_kappa(commands, tmp_path):
    flags = {"out": str(tmp_path), "precision": "quick", "seed": 1, "kappa": 3.0, "kappa_seq": "2.0"}
    result, message = commands.execute_command("compare-kappa", flags)
    assert result is CommandResult.INVALID
    assert "refused" in message


def test_roughpath_unknown_mode(commands, tmp_path):
    flags = {"out": str(tmp_path), "precision": "quick", "seed": 1, "kappa": 1.0, "mode": "fly"}
    result, _ = commands.execute_command("roughpath", flags)
    assert result is CommandResult.INVALID


def test_replay_without_manifest(commands, tmp_path):
    result, _ = commands.execute_command("replay", {"manifest": str(tmp_path / "none"), "out": str(tmp_path / "o")})
    assert result is CommandResult.NOT_FOUND


def test_replay_reproduces_trace(commands, tmp_path):
    first = tmp_path / "first"
    assert commands.execute_command("trace", trace_flags(first, kappa=2.0))[0] is CommandResult.SUCCESS
    result, message = commands.execute_command("replay", {"manifest": str(first), "out": str(tmp_path / "again")})
    assert result is CommandResult.SUCCESS, message
