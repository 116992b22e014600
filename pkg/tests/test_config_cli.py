import json
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvasim.cli import main
from rvasim.config import (
    RunConfig,
    config_from_dict,
    dump_config,
    packaged_config,
    parse_config_text,
)
from rvasim.errors import ParseError, ValidationError
from rvasim.trials import read_log


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return path


# --- config -----------------------------------------------------------------


def test_empty_object_gives_defaults():
    cfg = parse_config_text("{}")
    assert cfg == RunConfig()
    assert cfg.us.gain_db == 80.0


@pytest.mark.parametrize("data,key", [
    ({"us": {"depth_cm": -1}}, "us.depth_cm"),
    ({"foo": 1}, "foo"),
    ({"us": {"foo": 1}}, "us.foo"),
    ({"us": {"gain_db": "loud"}}, "us.gain_db"),
    ({"safety": {"f_threshold_n": 0}}, "safety.f_threshold_n"),
    ({"safety": {"max_force_retries": -1}}, "safety.max_force_retries"),
    ({"noise": {"detection_noise_mm": True}}, "noise.detection_noise_mm"),
    ({"trials": []}, "trials"),
])
def test_validation_names_the_key(data, key):
    with pytest.raises(ValidationError) as exc:
        config_from_dict(data)
    assert exc.value.key == key


def test_parse_error_position():
    with pytest.raises(ParseError) as exc:
        parse_config_text('{\n  "us": {"gain_db": 80,}\n}')
    assert exc.value.line == 2
    assert exc.value.column == 24  # the stray closing brace


def test_non_finite_numbers_rejected():
    with pytest.raises(ParseError):
        parse_config_text('{"us": {"gain_db": NaN}}')


def test_dump_parse_fixpoint():
    for cfg in (RunConfig(), packaged_config("rat_default"), packaged_config("phantom_default")):
        text = dump_config(cfg)
        again = parse_config_text(text)
        assert again == cfg
        assert dump_config(again) == text


@settings(max_examples=40, deadline=None)
@given(gain=st.floats(1.0, 120.0), sigma=st.floats(0.0, 1.0), f=st.floats(0.01, 10.0), n=st.integers(1, 500))
def test_dump_parse_fixpoint_random(gain, sigma, f, n):
    cfg = config_from_dict({"us": {"gain_db": gain}, "noise": {"detection_noise_mm": sigma},
                            "safety": {"f_threshold_n": f}, "trials": {"n": n}})
    assert parse_config_text(dump_config(cfg)) == cfg


def test_chain_override_round_trip():
    d = RunConfig().to_dict()
    d["chain"]["q_home"][0] = 0.25
    cfg = config_from_dict({"chain": {"q_home": d["chain"]["q_home"]}})
    assert cfg.chain.q_home[0] == 0.25
    assert parse_config_text(dump_config(cfg)) == cfg


# --- CLI --------------------------------------------------------------------


def test_cli_run_phantom(capsys):
    assert main(["run", "--scenario", "phantom", "--n", "10", "--seed", "7"]) == 0
    assert "first_attempt_rate=1.000" in capsys.readouterr().out


def test_cli_run_writes_log_and_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", "rat", "--n", "3", "--seed", "1", "--out", str(out)]) == 0
    assert len(read_log(out / "trials.jsonl")) == 3
    assert (out / "summary.txt").exists() and (out / "mosaic.pgm").exists()
    assert main(["report", "--log", str(out / "trials.jsonl"), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "mosaic.pgm").read_bytes() == (out / "mosaic.pgm").read_bytes()


def test_cli_validation_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, {"us": {"depth_cm": -1}})
    assert main(["attempt", "--config", str(bad)]) == 1
    assert "us.depth_cm" in capsys.readouterr().err
    assert main(["attempt", "--config", str(write_config(tmp_path, "{", "broken.json"))]) == 1
    assert main(["attempt", "--config", str(tmp_path / "missing.json")]) == 1
    assert main(["run", "--n", "0"]) == 1
    assert main(["bogus"]) == 1
    log = write_config(tmp_path, '{"schema": "rva-trial/9"}\n', "log.jsonl")
    assert main(["report", "--log", str(log), "--out", str(tmp_path / "r")]) == 1


def test_cli_runtime_exit_code(tmp_path, capsys):
    empty = write_config(tmp_path, "", "empty.jsonl")
    assert main(["report", "--log", str(empty), "--out", str(tmp_path / "r")]) == 2
    assert "runtime error" in capsys.readouterr().err


def test_cli_config_env_fallback(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path, {"safety": {"f_threshold_n": 1e-9}})
    monkeypatch.setenv("RVA_CONFIG", str(cfg))
    assert main(["attempt", "--scenario", "phantom", "--seed", "0"]) == 0
    assert "reason=MaxRetriesExceeded" in capsys.readouterr().out
    # an explicit flag wins over the environment
    assert main(["attempt", "--scenario", "phantom", "--seed", "0", "--config", str(write_config(tmp_path, {}, "d.json"))]) == 0
    assert "outcome=Success" in capsys.readouterr().out


def test_cli_attempt_deterministic(capsys):
    main(["attempt", "--seed", "3"])
    first = capsys.readouterr().out
    main(["attempt", "--seed", "3"])
    assert capsys.readouterr().out == first
    assert "phase Calibration" in first and "outcome=" in first


def test_cli_render(tmp_path, capsys):
    out = tmp_path / "frame.pgm"
    assert main(["render", "--seed", "2", "--out", str(out)]) == 0
    first = out.read_bytes()
    assert first.startswith(b"P5")
    assert main(["render", "--seed", "2", "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_cli_process_exit_code(tmp_path):
    bad = write_config(tmp_path, {"foo": 1})
    proc = subprocess.run([sys.executable, "-m", "rvasim.cli", "attempt", "--config", str(bad)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 1
    assert "foo" in proc.stderr
