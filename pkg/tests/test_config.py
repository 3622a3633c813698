import json

import pytest

from reflected_coherence.config import PRESETS, RunConfig, build_field, list_presets
from reflected_coherence.exceptions import ConfigError
from reflected_coherence.velocity import ConstantField


def spectrum_document(**extra):
    document = dict(
        experiment="spectrum",
        grid=dict(tau=1.0, n_time=4, bounds=[[0, 2], [0, 1]], boxes=[4, 2], bc="reflecting"),
        field=dict(kind="double-gyre"),
        epsilon=0.1,
    )
    document.update(extra)
    return document


def config_error_key(document):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(document)
    return info.value.key


@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("scale", ["full", "ci"])
def test_presets_validate(name, scale):
    config = RunConfig.from_dict(PRESETS[name].build(scale))
    assert config.preset == name
    assert config.name == name
    assert config.scale == scale
    config.build_grid()
    config.build_field()


def test_list_presets_is_stable():
    names = [name for name, _ in list_presets()]
    assert names == list(PRESETS)
    assert "double-gyre-spectrum" in names


def test_reproduce_resolves_the_preset():
    config = RunConfig.from_dict(dict(experiment="reproduce", preset="double-gyre-spectrum", scale="ci", seed=3))
    assert config.experiment == "spectrum"
    assert config.grid["n_time"] == 40
    assert config.seed == 3


def test_reproduce_unknown_preset():
    assert config_error_key(dict(experiment="reproduce", preset="nope")) == "preset"


def test_defaults_are_filled_in():
    config = RunConfig.from_dict(spectrum_document())
    assert config.solver["n_eigenvalues"] == 6
    assert config.solver["ordering"] == "smallest-magnitude"
    assert config.seed is None


def test_round_trip():
    config = RunConfig.from_dict(spectrum_document(name="small"))
    again = RunConfig.from_dict(config.to_dict())
    assert again == config


@pytest.mark.parametrize(
    "extra, key",
    [
        (dict(bogus=1), "bogus"),
        (dict(experiment="dance"), "experiment"),
        (dict(solver=dict(bogus=1)), "solver.bogus"),
        (dict(solver=dict(n_eigenvalues=True)), "solver.n_eigenvalues"),
        (dict(solver=dict(n_eigenvalues="six")), "solver.n_eigenvalues"),
        (dict(solver=dict(n_eigenvalues=0)), "solver.n_eigenvalues"),
        (dict(solver=dict(ordering="largest-imag")), "solver.ordering"),
        (dict(solver=[]), "solver"),
        (dict(epsilon=-0.1), "epsilon"),
        (dict(seed=-1), "seed"),
        (dict(scale="huge"), "scale"),
        (dict(field=dict(kind="hurricane")), "field.kind"),
        (dict(field=dict(amplitude=0.1)), "field"),
        (dict(grid=dict(tau=1.0)), "grid"),
        (dict(simulation=dict(scheme="leapfrog")), "simulation.scheme"),
        (dict(flux=dict(family="triangle")), "flux.family"),
    ],
)
def test_config_errors_name_the_key(extra, key):
    assert config_error_key(spectrum_document(**extra)) == key


@pytest.mark.parametrize("experiment", ["coherence-mc", "side-switch", "optimize"])
def test_stochastic_runs_need_a_seed(experiment):
    assert config_error_key(spectrum_document(experiment=experiment)) == "seed"


def test_side_switch_needs_a_split():
    document = spectrum_document(experiment="side-switch", seed=1, simulation=dict(lower=[0, 0], upper=[1, 1]))
    assert config_error_key(document) == "simulation.split"


def test_feature_target_needs_a_feature():
    document = spectrum_document(experiment="optimize", seed=1, optimization=dict(target="feature"))
    assert config_error_key(document) == "optimization.feature"


def test_overrides():
    config = RunConfig.from_dict(PRESETS["double-gyre-increase"].build("ci"))
    changed = config.with_overrides({"optimization.steps": 1, "epsilon": 0.05})
    assert changed.optimization["steps"] == 1
    assert changed.epsilon == 0.05
    assert config.optimization["steps"] == 2

    with pytest.raises(ConfigError):
        config.with_overrides({"optimization.radius": -1.0})
    with pytest.raises(ConfigError):
        config.with_overrides({"epsilon.value": 1.0})


def test_from_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(spectrum_document()))
    assert RunConfig.from_json(path).experiment == "spectrum"

    path.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.from_json(path)


def test_build_field_constant():
    field = build_field(dict(kind="constant", vector=[1.0, 0.0]), 2.0)
    assert isinstance(field, ConstantField)
    assert field.tau == 2.0


def test_build_field_requires_parameters():
    with pytest.raises(ConfigError) as info:
        build_field(dict(kind="traveling-wave"), 4.0)
    assert info.value.key == "field.amplitude"
    with pytest.raises(ConfigError) as info:
        build_field(dict(kind="double-gyre", omega=3), 4.0)
    assert info.value.key == "field.omega"
