import pandas as pd
import pytest

from reflected_coherence.artifacts import verify
from reflected_coherence.config import RunConfig
from reflected_coherence.exceptions import PhaseError
from reflected_coherence.runner import MANIFEST_NAME, RunManifest, rerun, run, scalar_differences

GYRE_GRID = dict(tau=1.0, n_time=4, bounds=[[0, 2], [0, 1]], boxes=[6, 3], bc="reflecting")


def gyre_config(**extra):
    document = dict(
        experiment="spectrum",
        grid=GYRE_GRID,
        field=dict(kind="double-gyre"),
        epsilon=0.1,
        solver=dict(n_eigenvalues=4),
    )
    document.update(extra)
    return RunConfig.from_dict(document)


@pytest.fixture
def spectrum_run(tmp_path):
    out = tmp_path / "spectrum"
    phases = []
    manifest = run(gyre_config(), out, workers=1, on_phase=phases.append)
    return out, manifest, phases


def test_spectrum_run_writes_artifacts(spectrum_run):
    out, manifest, phases = spectrum_run
    assert phases[:3] == ["assemble", "eigensolve", "companions"]
    assert [p["name"] for p in manifest.phases] == phases

    results = manifest.results
    assert results["dimension"] == 72
    assert abs(results["eigenvalues"][0]["re"]) < 1e-8
    assert results["sigma"][0] == pytest.approx(1.0)
    assert len(results["eigenvalues"]) == 4

    for name in ["spectrum.csv", "eigenvectors.bin", "eigenvector01_slab000.csv", "eigenvector01_slab002.pgm"]:
        assert (out / name).exists()
    frame = pd.read_csv(out / "spectrum.csv")
    assert len(frame) == 4

    assert (out / MANIFEST_NAME).exists()
    assert verify(out, manifest.artifacts) == []


def test_manifest_round_trip(spectrum_run):
    out, manifest, _ = spectrum_run
    loaded = RunManifest.from_json(out / MANIFEST_NAME)
    assert loaded.config == manifest.config
    assert loaded.run_config() == gyre_config()
    assert loaded.artifacts == manifest.artifacts


def test_rerun_reproduces_results(spectrum_run, tmp_path):
    out, manifest, _ = spectrum_run
    again = rerun(out / MANIFEST_NAME, tmp_path / "again", workers=2)
    loaded = RunManifest.from_json(out / MANIFEST_NAME)
    assert scalar_differences(loaded.results, RunManifest.from_json(tmp_path / "again" / MANIFEST_NAME).results) == []
    assert again.config == manifest.config


def test_failed_phase_is_named(tmp_path):
    config = gyre_config(grid=dict(GYRE_GRID, n_time=2, boxes=[2, 1]), solver=dict(n_eigenvalues=6))
    with pytest.raises(PhaseError) as info:
        run(config, tmp_path)
    assert info.value.phase == "eigensolve"


def test_flux_run(tmp_path):
    config = RunConfig.from_dict(
        dict(
            experiment="flux",
            grid=GYRE_GRID,
            field=dict(kind="constant", vector=[1.0, 0.0]),
            flux=dict(family="static-rectangle", lower=[0.0, 0.0], upper=[1.0, 1.0], n_t=20, n_r=40),
        )
    )
    flux = run(config, tmp_path).results["flux"]
    assert flux["cumulative_outflux"] == pytest.approx(1.0)
    assert flux["cumulative_absolute"] == pytest.approx(2.0)
    assert flux["mirrored_outflux"] == pytest.approx(2.0)
    assert flux["reflected_augmented_outflux"] == pytest.approx(2.0)
    assert flux["identity_discrepancy"] < 1e-9
    assert flux["reflected_discrepancy"] < 1e-9
    assert (tmp_path / "flux.csv").exists()


def test_coherence_mc_run_is_seeded(tmp_path):
    config = gyre_config(experiment="coherence-mc", seed=7, simulation=dict(n=500, mode=2))
    first = run(config, tmp_path / "a").results["coherence_ratio"]
    second = run(config, tmp_path / "b").results["coherence_ratio"]
    assert 0.0 <= first["value"] <= 1.0
    assert first == second
    assert (tmp_path / "a" / "family_mask.csv").exists()


def test_coherence_ratio_respects_the_bound(tmp_path):
    config = gyre_config(
        experiment="coherence-mc",
        seed=11,
        grid=dict(GYRE_GRID, tau=4.0, n_time=16, boxes=[32, 16]),
        simulation=dict(n=20000, mode=2),
    )
    ratio = run(config, tmp_path).results["coherence_ratio"]
    assert ratio["bound"] is not None
    assert not ratio["heuristic"]
    assert 0.0 < ratio["bound"] < 1.0
    assert ratio["value"] >= ratio["bound"] - 3 * ratio["stderr"]


def test_side_switch_run(tmp_path):
    config = gyre_config(
        experiment="side-switch",
        seed=3,
        simulation=dict(n=400, lower=[0.0, 0.0], upper=[1.0, 1.0], split=1.0, epsilons=[0.1, 0.01]),
    )
    rows = run(config, tmp_path).results["side_switch"]
    assert [r["epsilon"] for r in rows] == [0.1, 0.01]
    assert all(0.0 <= r["fraction"] <= 1.0 for r in rows)
    assert len(pd.read_csv(tmp_path / "side_switch.csv")) == 2


def test_optimize_run(tmp_path):
    config = gyre_config(
        experiment="optimize",
        seed=1,
        dictionary=dict(k=[1, 2], l=[1], r=[0]),
        optimization=dict(target="feature", steps=1, radius=0.01, feature=dict(kind="cosine", wavenumber=6.0, axis=1)),
    )
    steps = []
    manifest = run(config, tmp_path, on_phase=steps.append)
    result = manifest.results["optimization"]
    assert result["target"] == "feature"
    assert result["steps"] in (0, 1)
    assert len(result["z"]) == 1
    assert "optimize step 1" in steps
    for name in ["optimization.csv", "coefficients.csv", "coefficient_groups.csv", "streamfunction.csv"]:
        assert (tmp_path / name).exists()
    stream = pd.read_csv(tmp_path / "streamfunction.csv")
    assert list(stream.columns) == ["x", "y", "psi"]


def test_unknown_feature_kind(tmp_path):
    config = gyre_config(
        experiment="optimize", seed=1, dictionary=dict(k=[1], l=[1], r=[0]), optimization=dict(target="feature", feature=dict(kind="gaussian"))
    )
    with pytest.raises(PhaseError) as info:
        run(config, tmp_path)
    assert info.value.phase == "perturbations"


def test_scalar_differences():
    a = dict(x=1.0, y=[1, 2], z=dict(w=float("nan")))
    b = dict(x=1.0, y=[1, 3], z=dict(w=float("nan")), extra=None)
    assert scalar_differences(a, b) == ["y.1"]
    assert scalar_differences(a, dict(a, x=2.0)) == ["x"]
