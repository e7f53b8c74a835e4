import json

import numpy as np
import pytest

from slac_time.io import RunLockedError, config_hash, fmt, read_csv, run_lock, write_csv, write_json


def test_config_hash_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_fmt_round_trips_floats():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert float(fmt(np.float64(x))) == x
    assert fmt(np.float64(1.5)) == "1.5"
    assert fmt(3) == "3"


def test_csv_provenance_line(tmp_path):
    p = tmp_path / "x.csv"
    write_csv(p, ["a", "b"], [[1, 0.5], [2, 1e-300]], {"seed": 3, "config_hash": "abc"})
    lines = p.read_text().splitlines()
    assert lines[0] == "# seed=3 config_hash=abc"
    header, rows = read_csv(p)
    assert header == ["a", "b"] and rows == [["1", "0.5"], ["2", "1e-300"]]


def test_json_provenance(tmp_path):
    write_json(tmp_path / "x.json", {"v": 1}, {"seed": 0})
    assert json.loads((tmp_path / "x.json").read_text()) == {"v": 1, "provenance": {"seed": 0}}


def test_run_lock(tmp_path):
    with run_lock(tmp_path / "run"):
        assert (tmp_path / "run" / ".lock").exists()
        with pytest.raises(RunLockedError):
            with run_lock(tmp_path / "run"):
                pass
    assert not (tmp_path / "run" / ".lock").exists()
    with run_lock(tmp_path / "run"):
        pass
