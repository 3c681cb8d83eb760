import json
import math

import numpy as np
import pytest

from adaptstress.config import RunConfig, directory_hash, make_manifest
from adaptstress.numerics import ConfigurationError
from adaptstress.reporting import dumps, fmt, read_csv, read_json, write_csv, write_json


def test_defaults_roundtrip(tmp_path):
    cfg = RunConfig(seed=4, w_in_grid=[3, 5])
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.load(path) == cfg
    assert cfg.overrides() == {"seed": 4, "w_in_grid": [3, 5]}


def test_unknown_and_invalid_keys():
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigurationError):
        RunConfig(tta_mode="sometimes")


def test_hash_ignores_paths_and_jobs():
    a = RunConfig()
    assert a.hash() == RunConfig(output_dir="elsewhere", cohort_dir="x", jobs=4).hash()
    assert a.hash() != RunConfig(seed=1).hash()


def test_manifest_hash_tracks_inputs():
    cfg = RunConfig()
    assert make_manifest("sweep", cfg, {"cohort": "a"}).hash == make_manifest("sweep", cfg, {"cohort": "a"}).hash
    assert make_manifest("sweep", cfg, {"cohort": "a"}).hash != make_manifest("sweep", cfg, {"cohort": "b"}).hash
    assert make_manifest("sweep", cfg).hash != make_manifest("evaluate", cfg).hash


def test_directory_hash(tmp_path):
    (tmp_path / "a.csv").write_text("1")
    h = directory_hash(tmp_path)
    (tmp_path / "note.txt").write_text("ignored")
    assert directory_hash(tmp_path) == h
    (tmp_path / "a.csv").write_text("2")
    assert directory_hash(tmp_path) != h


def test_json_special_values(tmp_path):
    doc = {"b": math.nan, "a": math.inf, "c": np.float64(0.5), "d": np.arange(2)}
    path = write_json(tmp_path / "x.json", doc)
    assert read_json(path) == {"a": "UNBOUNDED", "b": None, "c": 0.5, "d": [0, 1]}
    assert dumps(doc).index('"a"') < dumps(doc).index('"b"')


def test_csv_header_and_formatting(tmp_path):
    path = write_csv(tmp_path / "x.csv", ["k", "v"], [["a", 0.1], ["b", math.nan], ["c", math.inf]], "abc")
    assert path.read_text().splitlines()[0] == "# manifest: abc"
    h, rows = read_csv(path)
    assert h == "abc" and [r["v"] for r in rows] == ["0.1", "nan", "UNBOUNDED"]
    assert fmt(1 / 3) == repr(1 / 3)
