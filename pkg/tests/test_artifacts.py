import json
import math

import numpy as np
import pandas as pd
import pytest

from artifacts import ArtifactBundle, canonical_json, config_hash
from coagkit_errors import ConfigError
from experiment_config import config_from_dict

CONFIG = {"kind": "nonuniq", "t_end": 1.0, "chain": {"N_max": 6}}

RUNTIME = {"python": "3.11.0", "platform": "linux", "physical_cores": 2}


def test_canonical_json_is_key_order_free():
    assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1}) == '{"a":[1,2],"b":1}'


def test_config_hash_tracks_seed():
    reordered = {"chain": {"N_max": 6}, "t_end": 1.0, "kind": "nonuniq"}
    assert config_hash(config_from_dict(CONFIG)) == config_hash(config_from_dict(reordered))
    assert config_hash(config_from_dict(CONFIG, seed=1)) != config_hash(config_from_dict(CONFIG, seed=2))


def test_write_frame_full_precision(tmp_path):
    bundle = ArtifactBundle(str(tmp_path / "run"))
    frame = pd.DataFrame({"t": [0.0, 1 / 3], "value": [math.pi, 1e-300]})
    bundle.write_frame(frame, "table")
    text = (tmp_path / "run" / "table.csv").read_bytes()
    assert b"\r\n" not in text
    back = pd.read_csv(tmp_path / "run" / "table.csv", float_precision="round_trip")
    assert back["t"].tolist() == frame["t"].tolist()
    assert back["value"].tolist() == frame["value"].tolist()
    assert bundle.files == ["table.csv"]


def test_plot_script_per_group(tmp_path):
    bundle = ArtifactBundle(str(tmp_path))
    frame = pd.DataFrame({"t": [0.0, 1.0, 0.0, 1.0], "n": [1, 1, 2, 2], "m_n": [0.5, 0.4, 0.25, 0.2]})
    bundle.write_frame(frame, "chain", plot={"x": "t", "y": "m_n", "group": "n", "logy": True})
    script = (tmp_path / "chain.gp").read_text()
    assert "set logscale y" in script
    assert "n=1" in script and "n=2" in script
    assert "chain.csv" in script
    assert sorted(bundle.files) == ["chain.csv", "chain.gp"]


def test_write_json_handles_numpy_and_non_finite(tmp_path):
    bundle = ArtifactBundle(str(tmp_path))
    bundle.write_json({"values": np.array([1.0, np.inf]), "flag": np.bool_(True), "count": np.int64(3)}, "payload")
    payload = json.loads((tmp_path / "payload.json").read_text())
    assert payload == {"values": [1.0, "inf"], "flag": True, "count": 3}


def test_summary_is_validated(tmp_path):
    config = config_from_dict(CONFIG, seed=3)
    bundle = ArtifactBundle(str(tmp_path))
    summary = bundle.write_summary(config, {"separation": np.float64(0.2)}, 0.0, RUNTIME)
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk == summary
    assert summary["seed"] == 3
    assert summary["config_hash"] == config_hash(config)
    with pytest.raises(ConfigError):
        bundle.write_summary(config, {}, 0.0, {"python": "3.11"})
