import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehmm.coefficients import ConstantModel, DebyeModel, LaminateModel, SmoothPeriodicModel
from fehmm.config import ScenarioConfig, load_config, parse_config
from fehmm.errors import ConfigError

BASIC = """
[scenario]
name = demo
model = laminate
n_e = 1

[model]
m_profile = {"kind": "two-phase", "values": [2, 4], "fraction": 0.5}
axis = 2

[macro]
cells = 2, 3, 4

[micro]
cells = 6

[time]
T = 1.0
tau = 0.1
"""


def test_parse_basic():
    cfg = parse_config(BASIC)
    assert cfg.name == "demo" and cfg.n == 9 and cfg.n_steps == 10
    assert cfg.macro_cells == (2, 3, 4) and cfg.micro_cells == (6, 6, 6)
    m = cfg.build_model()
    assert isinstance(m, LaminateModel) and m.axis == 2 and m.n_e == 1
    np.testing.assert_allclose(cfg.times[-1], 1.0)


def test_roundtrip_through_ini():
    cfg = parse_config(BASIC)
    again = parse_config(cfg.to_ini())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


@pytest.mark.parametrize("text,match", [
    ("[time]\nT = 1\ntau = 0.3\n", "does not divide"),
    ("[scenario]\nmodel = plasma\n", "unknown model"),
    ("[scenario]\nmodel = debye\nn_e = 0\n", "n_e = 1"),
    ("[tolerances]\nbound = 0\n", "positive"),
    ("[macro]\ncells = 1,2\n", "one or three"),
    ("[macro]\nwidth = 3\n", "unknown key"),
    ("[plot]\nx = 1\n", "unknown section"),
    ("[model]\nm_profile = {bad json\n", "invalid JSON"),
    ("[micro]\norder = 3\n", "micro.order"),
    ("[scenario]\nn_e = two\n", "cannot parse"),
    ("[data]\ninitial = gaussian\n", "data.initial"),
])
def test_validation_messages_name_the_field(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_model_selection():
    assert isinstance(ScenarioConfig(model="debye", n_e=1).build_model(), DebyeModel)
    assert isinstance(ScenarioConfig(model="smooth-periodic").build_model(), SmoothPeriodicModel)
    m = ScenarioConfig(model="constant", model_params={"M": np.diag([2.0] * 6).tolist()}).build_model()
    assert isinstance(m, ConstantModel) and m.M0[0, 0] == 2.0


def test_case_sensitive_model_keys():
    text = "[model]\nM = " + str(np.diag([1.0, 1, 1, 3, 3, 3]).tolist()) + "\n"
    assert parse_config(text).build_model().M0[4, 4] == 3.0


def test_tensor_key_tracks_inputs():
    base = parse_config(BASIC)
    assert base.tensor_key() == parse_config(BASIC).tensor_key()
    assert base.replace(tau=0.05).tensor_key() != base.tensor_key()
    assert base.replace(micro_cells=(8, 8, 8)).tensor_key() != base.tensor_key()
    # output location and seed do not change the tensors
    assert base.replace(out_dir="elsewhere", seed=9).tensor_key() == base.tensor_key()


@given(st.integers(1, 50), st.sampled_from([0.01, 0.02, 0.05, 0.1, 0.25]))
def test_tau_dividing_T_is_accepted(steps, tau):
    cfg = ScenarioConfig(T=steps * tau, tau=tau)
    assert cfg.n_steps == steps


def test_shipped_configs_parse():
    from pathlib import Path

    files = sorted((Path(__file__).parents[1] / "configs").glob("*.ini"))
    assert len(files) >= 5
    for f in files:
        cfg = load_config(f)
        assert cfg.build_model().n == cfg.n
