import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from qrconnect import config as cfgmod
from qrconnect.analytic import ProtocolParams
from qrconnect.sim import MemoryDecayModel


def test_defaults_are_experimental_values():
    cfg = cfgmod.load(None)
    assert cfg.params == ProtocolParams()
    assert cfg.decay == MemoryDecayModel()
    assert cfg.sim.p_values == cfgmod.TABLE_GRID
    assert cfgmod.from_dict({}) == cfg


def test_round_trip_identity():
    cfg = cfgmod.load(None)
    assert cfgmod.from_dict(json.loads(cfgmod.dumps(cfg))) == cfg


def test_null_time_constants_mean_no_decay():
    cfg = cfgmod.from_dict({"decay": {"tau_short": None, "coherence_tau": None}})
    assert math.isinf(cfg.decay.tau_short) and math.isinf(cfg.decay.coherence_tau)
    text = cfgmod.dumps(cfg)
    assert json.loads(text)["decay"]["tau_short"] is None
    assert cfgmod.from_dict(json.loads(text)) == cfg


def test_chi_round_trip_keeps_single_source():
    cfg = cfgmod.from_dict({"params": {"chi": 0.01}})
    out = cfgmod.to_dict(cfg)
    assert "p" not in out["params"]
    assert cfgmod.from_dict(out) == cfg


@settings(max_examples=60, deadline=None)
@given(
    p=hst.floats(1e-5, 1.0),
    n=hst.integers(1, 10**6),
    rounds=hst.integers(1, 10**6),
    seed=hst.integers(0, 2**40),
    mode=hst.sampled_from(["memory", "no-memory", "direct", "both"]),
    grid=hst.lists(hst.floats(1e-4, 1.0), max_size=5),
    tau=hst.one_of(hst.none(), hst.floats(1e-6, 1.0)),
    bases=hst.lists(hst.sampled_from(["HH", "VD", "RA", "LL"]), min_size=1, max_size=4),
)
def test_round_trip_property(p, n, rounds, seed, mode, grid, tau, bases):
    data = {
        "params": {"p": p, "n": n},
        "decay": {"tau_long_3": tau},
        "sim": {"rounds": rounds, "master_seed": seed, "mode": mode, "p_values": grid},
        "tomo": {"bases": bases},
    }
    cfg = cfgmod.from_dict(data)
    assert cfgmod.from_dict(json.loads(cfgmod.dumps(cfg))) == cfg


@pytest.mark.parametrize("data, message", [
    ({"sim": {"roundz": 3}}, "sim.roundz: unknown field"),
    ({"sim": {"rounds": 1.5}}, "sim.rounds: expected an integer"),
    ({"sim": {"rounds": True}}, "sim.rounds: expected an integer"),
    ({"params": {"p": "0.1"}}, "params.p: expected a number"),
    ({"params": {"p": 2.0}}, "params: p=2.0 outside"),
    ({"sim": {"p_values": 0.1}}, "sim.p_values: expected a list"),
    ({"sim": {"p_values": [0.1, "x"]}}, r"sim.p_values\[1\]: expected a number"),
    ({"sim": {"mode": "fast"}}, "sim.mode: unknown mode"),
    ({"sim": {"record_states": 1}}, "sim.record_states: expected true/false"),
    ({"params": {"A": None}}, "params.A: null is not allowed"),
    ({"extra": {}}, "extra: unknown section"),
    ({"sim": []}, "sim: expected an object"),
])
def test_schema_errors(data, message):
    with pytest.raises(cfgmod.ConfigError, match=message):
        cfgmod.from_dict(data)


def test_json_syntax_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "sim": {"rounds": 5,}\n}')
    with pytest.raises(cfgmod.ConfigError, match="line 2 column"):
        cfgmod.load(path)


def test_missing_file(tmp_path):
    with pytest.raises(cfgmod.ConfigError, match="cannot read"):
        cfgmod.load(tmp_path / "nope.json")


def test_manifest_is_accepted(tmp_path):
    cfg = cfgmod.from_dict({"sim": {"rounds": 77}})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"config": cfgmod.to_dict(cfg), "outputs": {}}))
    assert cfgmod.load(path) == cfg


def test_sim_config_builds_each_mode():
    cfg = cfgmod.from_dict({"sim": {"rounds": 12, "master_seed": 9}})
    sc = cfg.sim_config("no-memory", 0.003)
    assert sc.rounds == 12 and sc.master_seed == 9 and sc.params.p == 0.003
    assert sc.mode.value == "no-memory"
