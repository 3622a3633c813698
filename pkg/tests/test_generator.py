import numpy as np
import pytest

from reflected_coherence.config import PRESETS, RunConfig
from reflected_coherence.exceptions import AssemblyError
from reflected_coherence.generator import (
    GeneratorKind,
    Quadrature,
    assemble_augmented,
    assemble_diffusion,
    assemble_drift,
    perturbation_generator,
    slice_generator,
    time_coupling,
)
from reflected_coherence.grid import SpaceTimeGrid
from reflected_coherence.velocity import ConstantField, FunctionField, double_gyre


def test_augmented_is_rate_matrix(gyre_grid, gyre):
    G = assemble_augmented(gyre_grid, gyre, 0.1)
    assert G.kind is GeneratorKind.FULL_AUGMENTED
    assert G.shape == (gyre_grid.dimension, gyre_grid.dimension)
    assert G.is_rate_matrix()
    assert np.allclose(G.row_sums(), 0, atol=1e-10)


def test_constants_are_in_the_kernel(gyre_grid, gyre):
    G = assemble_augmented(gyre_grid, gyre, 0.05)
    assert np.allclose(G @ np.ones(gyre_grid.dimension), 0, atol=1e-10)


def test_divergence_free_field_preserves_uniform_density(gyre_grid, gyre):
    # exact streamfunction fluxes balance in every box, so the uniform density is stationary
    G = assemble_augmented(gyre_grid, gyre, 0.1, quadrature=Quadrature.GAUSS3)
    leak = G.transpose() @ np.ones(gyre_grid.dimension)
    assert np.max(np.abs(leak)) < 1e-2 * G.max_abs_diagonal()


def test_time_coupling_rates(unit_grid):
    T = time_coupling(unit_grid).toarray()
    n = unit_grid.n_space
    h = unit_grid.h
    assert T[0, 0] == pytest.approx(-1 / h)
    assert T[0, n] == pytest.approx(1 / h)
    # the last slab wraps to the first
    assert T[n, 0] == pytest.approx(1 / h)


def test_diffusion_rates(unit_grid):
    D = assemble_diffusion(unit_grid, 0.2, slab=0).to_dense()
    rate = 0.2 ** 2 / (2 * 0.25 ** 2)
    assert D[0, 1] == pytest.approx(rate)
    assert D[0, 4] == pytest.approx(rate)
    # corner box: two neighbours, reflecting walls contribute nothing
    assert D[0, 0] == pytest.approx(-2 * rate)
    assert D[5, 5] == pytest.approx(-4 * rate)


def test_diffusion_needs_square_boxes():
    grid = SpaceTimeGrid(tau=1.0, n_time=2, lower=[0, 0], upper=[2, 1], n_boxes=[2, 2], bc="reflecting")
    with pytest.raises(AssemblyError):
        assemble_diffusion(grid, 0.1)
    # no diffusion, no restriction
    assemble_diffusion(grid, 0.0)


def test_nearly_square_boxes_use_per_axis_rates():
    grid = SpaceTimeGrid(tau=1.0, n_time=2, lower=[0, 0], upper=[1.005, 1], n_boxes=[2, 2], bc="reflecting")
    D = assemble_diffusion(grid, 0.2, slab=0).to_dense()
    # box 1 is the y neighbour of box 0, box 2 the x neighbour
    assert D[0, 1] == pytest.approx(0.2 ** 2 / (2 * 0.5 ** 2))
    assert D[0, 2] == pytest.approx(0.2 ** 2 / (2 * 0.5025 ** 2))
    assert np.allclose(D.sum(axis=1), 0)


def test_bickley_preset_geometry_assembles():
    config = RunConfig.from_dict(PRESETS["bickley-spectrum"].build("ci"))
    preset = config.build_grid()
    grid = SpaceTimeGrid(tau=preset.tau, n_time=2, lower=preset.lower, upper=preset.upper, n_boxes=preset.n_boxes, bc=preset.bc)
    G = assemble_augmented(grid, config.build_field(), config.epsilon)
    assert G.kind is GeneratorKind.FULL_AUGMENTED
    assert G.is_rate_matrix()
    # outflow walls only lose mass
    assert np.all(G.row_sums() <= 1e-10)
    assert np.any(G.row_sums() < -1e-10)


def test_negative_epsilon_rejected(unit_grid, zero_field):
    with pytest.raises(AssemblyError):
        assemble_augmented(unit_grid, zero_field, -0.1)


def test_upwind_constant_drift(unit_grid):
    field = ConstantField([1.0, 0.0])
    D = assemble_drift(unit_grid, field, slab=0).to_dense()
    # rate |v| * area / volume = 1 / delta into the downstream neighbour only
    assert D[0, 4] == pytest.approx(4.0)
    assert D[4, 0] == 0
    # reflecting wall on the right: the last column keeps its mass
    assert D[12, 12] == pytest.approx(0.0)
    assert D[0, 0] == pytest.approx(-4.0)


def test_reflected_slab_reverses_drift(unit_grid):
    field = ConstantField([1.0, 0.0])
    D = assemble_drift(unit_grid, field, slab=1).to_dense()
    assert D[4, 0] == pytest.approx(4.0)
    assert D[0, 4] == 0


def test_full_drift_stacks_slab_blocks(unit_grid):
    field = ConstantField([1.0, 0.0])
    D = assemble_drift(unit_grid, field)
    assert D.kind is GeneratorKind.SPATIAL_SLAB
    assert D.slab is None
    assert D.shape == (unit_grid.dimension, unit_grid.dimension)
    n = unit_grid.n_space
    dense = D.to_dense()
    assert np.allclose(dense[n:, n:], assemble_drift(unit_grid, field, slab=1).to_dense())
    assert not dense[:n, n:].any()


def test_outflow_losses_on_diagonal_only():
    grid = SpaceTimeGrid(tau=1.0, n_time=2, lower=[0, 0], upper=[1, 1], n_boxes=[4, 4], bc="outflow")
    D = assemble_drift(grid, ConstantField([1.0, 0.0]), slab=0)
    assert D.to_dense()[12, 12] == pytest.approx(-4.0)
    sums = D.row_sums()
    assert np.allclose(sums[12:], -4.0)
    assert np.allclose(sums[:12], 0.0)
    G = assemble_augmented(grid, ConstantField([1.0, 0.0]), 0.1)
    assert G.is_rate_matrix()
    assert np.all(G.row_sums() <= 1e-12)


def test_periodic_faces_wrap():
    grid = SpaceTimeGrid(tau=1.0, n_time=2, lower=[0, 0], upper=[1, 1], n_boxes=[4, 4], bc=["periodic", "reflecting"])
    D = assemble_drift(grid, ConstantField([1.0, 0.0]), slab=0).to_dense()
    assert D[12, 0] == pytest.approx(4.0)
    assert np.allclose(D.sum(axis=1), 0)


def test_reuse_reflection_matches_direct(gyre_grid, gyre):
    direct = assemble_augmented(gyre_grid, gyre, 0.1)
    reused = assemble_augmented(gyre_grid, gyre, 0.1, reuse_reflection=True)
    assert abs(direct.matrix - reused.matrix).max() < 1e-12


def test_workers_do_not_change_the_matrix(gyre_grid, gyre):
    serial = assemble_augmented(gyre_grid, gyre, 0.1, workers=1)
    threaded = assemble_augmented(gyre_grid, gyre, 0.1, workers=3)
    assert abs(serial.matrix - threaded.matrix).max() == 0


def test_domain_mismatch_rejected(unit_grid, gyre):
    with pytest.raises(AssemblyError):
        assemble_augmented(unit_grid, gyre, 0.1)


def test_slice_generator_removes_time_coupling(gyre_grid, gyre):
    G = assemble_augmented(gyre_grid, gyre, 0.1)
    block = slice_generator(G, 2)
    assert block.kind is GeneratorKind.SPATIAL_SLAB
    assert block.shape == (gyre_grid.n_space, gyre_grid.n_space)
    assert np.allclose(block.row_sums(), 0, atol=1e-10)


def test_perturbation_generator_is_linear_in_the_field(gyre_grid):
    # upwinding is positively homogeneous, so scaling the field scales the generator
    swirl = double_gyre(tau=1.0)
    E = perturbation_generator(gyre_grid, swirl)
    E3 = perturbation_generator(gyre_grid, 3 * swirl)
    assert abs(E3.matrix - 3 * E.matrix).max() < 1e-10
    assert E.kind is GeneratorKind.PERTURBATION_DRIFT


def test_perturbation_generator_logs_divergent_fields(gyre_grid, caplog):
    source = FunctionField(lambda t, x: x - 0.5, bounds=[(0, 2), (0, 1)])
    perturbation_generator(gyre_grid, source)
    assert any("divergence" in record.message for record in caplog.records)
