import math

import pytest

from reflected_coherence.config import PRESETS, RunConfig
from reflected_coherence.runner import run

pytestmark = pytest.mark.slow


def run_preset(name, scale, tmp_path, **overrides):
    config = RunConfig.from_dict(PRESETS[name].build(scale))
    if overrides:
        config = config.with_overrides(overrides)
    return run(config, tmp_path).results


def test_double_gyre_spectrum(tmp_path):
    results = run_preset("double-gyre-spectrum", "full", tmp_path)
    mu = [complex(e["re"], e["im"]) for e in results["eigenvalues"]]
    assert abs(mu[0]) < 1e-10
    assert mu[1].real == pytest.approx(-0.09033, abs=0.015)
    assert results["sigma"][1] == pytest.approx(math.exp(4 * mu[1].real))


def test_bickley_companions(tmp_path):
    results = run_preset("bickley-spectrum", "ci", tmp_path)
    assert results["companions"]
    for companion in results["companions"]:
        assert abs(companion["k"]) >= 1
        assert companion["correlation"] >= 0.99


def test_flux_identity(tmp_path):
    flux = run_preset("flux-identity-demo", "full", tmp_path)["flux"]
    assert flux["identity_discrepancy"] <= 1e-3
    assert flux["reflected_discrepancy"] <= 1e-3


def test_traveling_wave_feature_decreases(tmp_path):
    optimization = run_preset("traveling-wave-feature", "ci", tmp_path)["optimization"]
    trajectory = optimization["trajectory"]
    assert all(b < a for a, b in zip(trajectory, trajectory[1:]))
