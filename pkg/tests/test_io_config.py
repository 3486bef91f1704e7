import json

import numpy as np
import pytest

from hawkes_lab.config import RunConfig, config_schema, load_config
from hawkes_lab.core import HawkesParams, ModelSpec
from hawkes_lab.errors import ConfigError, DataError
from hawkes_lab.io import config_hash, read_events, write_events, write_json
from hawkes_lab.simulate import SimConfig, simulate_hawkes


@pytest.fixture(scope="module")
def marked_path():
    spec = ModelSpec(dim=2).with_link("normexp")
    params = HawkesParams(m=[0.5, 0.3], a=[[0.3, 0.1], [0.2, 0.2]], b=[1.0, 1.5],
                          gamma=[[0.4, 0.0], [0.1, 0.2]], psi=1.0)
    return simulate_hawkes(SimConfig(spec, params, 200.0, seed=3))


def test_event_round_trip_is_exact(tmp_path, marked_path):
    f = write_events(marked_path, tmp_path / "ev.csv")
    back = read_events(f, horizon=marked_path.horizon, dim=2)
    assert back.equals(marked_path)
    assert np.array_equal(back.times, marked_path.times)
    assert np.array_equal(back.marks, marked_path.marks)


def test_rewrite_is_byte_identical(tmp_path, marked_path):
    f1 = write_events(marked_path, tmp_path / "a.csv")
    f2 = write_events(read_events(f1, horizon=marked_path.horizon, dim=2), tmp_path / "b.csv")
    assert f1.read_bytes() == f2.read_bytes()


def test_unmarked_file_has_two_columns(tmp_path, marked_path):
    f = write_events(marked_path.without_marks(), tmp_path / "u.csv")
    assert f.read_text().splitlines()[0] == "time,component"
    assert read_events(f).marks is None


def test_components_are_one_based_on_disk(tmp_path):
    f = tmp_path / "e.csv"
    f.write_text("time,component\n0.5,2\n1.5,1\n")
    r = read_events(f, horizon=2.0)
    assert r.dim == 2
    assert r.components.tolist() == [1, 0]


def test_unsorted_rows_are_sorted(tmp_path):
    f = tmp_path / "e.csv"
    f.write_text("time,component\n3.0,1\n1.0,1\n2.0,1\n")
    assert read_events(f).times.tolist() == [1.0, 2.0, 3.0]


def test_horizon_defaults_to_last_event(tmp_path):
    f = tmp_path / "e.csv"
    f.write_text("time,component\n1.0,1\n4.0,1\n")
    assert read_events(f).horizon == 4.0


@pytest.mark.parametrize("body, fragment", [
    ("", "empty"),
    ("t,c\n1,1\n", "header"),
    ("time,component\nx,1\n", "not a number"),
    ("time,component\n1.0,one\n", "not an integer"),
    ("time,component\n1.0,0\n", "1-based"),
    ("time,component\n1.0\n", "fields"),
    ("time,component\nnan,1\n", "finite"),
    ("time,component,mark\n1.0,1,inf\n", "finite"),
    ("time,component\n1.0,1\n1.0,1\n", "tied"),
])
def test_malformed_files_raise_data_error(tmp_path, body, fragment):
    f = tmp_path / "bad.csv"
    f.write_text(body)
    with pytest.raises(DataError, match=fragment):
        read_events(f)


def test_ties_can_be_jittered(tmp_path):
    f = tmp_path / "e.csv"
    f.write_text("time,component\n1.0,1\n1.0,1\n2.0,1\n")
    r = read_events(f, horizon=3.0, jitter=True)
    assert np.all(np.diff(r.times) > 0)


def test_component_beyond_dimension(tmp_path):
    f = tmp_path / "e.csv"
    f.write_text("time,component\n1.0,3\n")
    with pytest.raises(DataError, match="exceeds"):
        read_events(f, dim=2)


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_write_json_handles_numpy(tmp_path):
    p = write_json({"x": np.arange(3), "y": np.float64(1.5)}, tmp_path / "o.json")
    assert json.loads(p.read_text()) == {"x": [0, 1, 2], "y": 1.5}


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    for body in ({"modle": {}}, {"model": {"dim": 2}}, {"test": {"alpah": 0.1}}):
        p.write_text(json.dumps(body))
        with pytest.raises(ConfigError):
            load_config(p)


def test_config_dimension_mismatch(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"dimension": 2}, "params": {"m": [1.0]}}))
    with pytest.raises(ConfigError, match="dimension"):
        load_config(p)


def test_config_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_builds_spec_and_params():
    cfg = RunConfig.model_validate({
        "model": {"dimension": 2, "linearity": "nonlinear"},
        "params": {"m": [1.0, 0.5], "a": [[0.1, -0.2], [0.0, 0.3]], "b": [1.0, 2.0]},
    })
    spec = cfg.spec()
    assert spec.dim == 2 and spec.nonlinear
    params = cfg.params.to_params()
    params.validate_for(spec)
    assert params.a[0, 1] == -0.2


def test_config_overrides_apply():
    cfg = load_config(None, {"seed": 9, "horizon": 50.0, "jobs": None})
    assert cfg.seed == 9 and cfg.horizon == 50.0


def test_bootstrap_draws_lower_limit():
    with pytest.raises(ConfigError):
        load_config(None, {"test": {"bootstrap_draws": 10}})


def test_shipped_schema_is_current():
    from pathlib import Path

    shipped = json.loads((Path(__file__).parents[1] / "docs" / "config.schema.json").read_text())
    assert shipped == json.loads(json.dumps(config_schema()))
