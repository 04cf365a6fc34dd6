import json

import pytest

from config import ScenarioConfig, env_overrides, load_config
from errors import ConfigError


def write(tmp_path, payload, name="scenario.json"):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return path


def test_defaults_describe_the_flagship_scenario():
    config = load_config(environ={})
    assert config.model.name == "tanh-well"
    assert config.model.alpha == 1.5
    assert config.grid.half_width == 32.0 and config.grid.n_points == 2048
    assert config.perturbation.epsilons == [0.1, 0.05]
    assert config.observables == ["tanh"]
    assert config.solver.method == "exponential-splitting"
    assert config.tolerances.max_boundary_mass == 5e-3


def test_missing_file_names_the_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(tmp_path / "nope.json", environ={})


def test_invalid_json_and_non_object(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "{model:"), environ={})
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, [1, 2]), environ={})


@pytest.mark.parametrize(
    "payload",
    [
        {"grid": {"n_points": 1000}},
        {"perturbation": {"epsilons": [0.05, 0.1]}},
        {"perturbation": {"epsilons": [0.1, -0.05]}},
        {"response": {"smoothing_window": 4}},
        {"model": {"alpha": 2.0}},
        {"model": {"name": "custom"}},
        {"observables": ["cube"]},
        {"colour": "blue"},
    ],
)
def test_invalid_scenarios_are_config_errors(tmp_path, payload):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, payload), environ={})


def test_model_shorthand(tmp_path):
    config = load_config(write(tmp_path, {"model": "stable-ou"}), environ={})
    assert config.model.name == "stable-ou"


def test_environment_overrides():
    overrides = env_overrides({"LEVY_FDT__ENSEMBLE__N_TRAJ": "500", "LEVY_FDT__MODEL__NAME": "stable-ou",
                               "LEVY_FDT_LOG_LEVEL": "DEBUG"})
    assert overrides == {"ensemble": {"n_traj": 500}, "model": {"name": "stable-ou"}}
    config = load_config(environ={"LEVY_FDT__ENSEMBLE__N_TRAJ": "500"})
    assert config.ensemble.n_traj == 500


def test_file_values_win_over_environment(tmp_path):
    path = write(tmp_path, {"ensemble": {"n_traj": 64}})
    config = load_config(path, environ={"LEVY_FDT__ENSEMBLE__N_TRAJ": "500", "LEVY_FDT__ENSEMBLE__X0": "1.5"})
    assert config.ensemble.n_traj == 64
    assert config.ensemble.x0 == 1.5


def test_overrides_and_hash():
    base = ScenarioConfig()
    moved = base.with_overrides(threads=3, output="elsewhere")
    assert moved.ensemble.threads == 3
    assert moved.output.directory == "elsewhere"
    assert moved.config_hash() == base.config_hash()
    reseeded = base.with_overrides(seed=base.ensemble.master_seed + 1)
    assert reseeded.config_hash() != base.config_hash()
    assert len(base.config_hash()) == 64


def test_trajectory_count_override():
    base = ScenarioConfig()
    assert base.ensemble.n_paths == 0
    assert base.with_overrides(trajectories=4).ensemble.n_paths == 4
    assert base.with_overrides().ensemble.n_paths == 0
