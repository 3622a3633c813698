import numpy as np
import pytest
import scipy.linalg

from reflected_coherence.coherent import BoxFamily
from reflected_coherence.exceptions import SimulationError
from reflected_coherence.generator import assemble_augmented, slice_generator
from reflected_coherence.grid import SpaceTimeGrid
from reflected_coherence.simulate import (
    BLOCK_SIZE,
    Domain,
    MonteCarloEstimate,
    ParticleEnsemble,
    coherence_ratio_mc,
    default_dt,
    integrate_ensemble,
    propagate_density,
    seed_in_family,
    side_switch_fraction,
)
from reflected_coherence.velocity import ConstantField


def periodic_domain(length=10.0):
    return Domain([[0.0, length], [0.0, length]], ["periodic", "periodic"])


def test_zero_field_without_noise_stays_put(zero_field):
    ensemble = ParticleEnsemble.uniform([0, 0], [1, 1], 50, seed=3)
    final = integrate_ensemble(zero_field, 0.0, ensemble, 0.0, 1.0, 0.1, domain=periodic_domain())
    assert np.allclose(final.positions, ensemble.positions)
    assert final.time == 1.0


def test_constant_drift_is_exact():
    field = ConstantField([1.0, 0.5])
    ensemble = ParticleEnsemble(np.array([[1.0, 1.0], [2.0, 3.0]]))
    final = integrate_ensemble(field, 0.0, ensemble, 0.0, 2.0, 0.25, domain=periodic_domain())
    assert np.allclose(final.positions, [[3.0, 2.0], [4.0, 4.0]])


def test_periodic_wrap():
    field = ConstantField([1.0, 0.0])
    ensemble = ParticleEnsemble(np.array([[9.5, 1.0]]))
    final = integrate_ensemble(field, 0.0, ensemble, 0.0, 1.0, 0.5, domain=periodic_domain())
    assert final.positions[0].tolist() == pytest.approx([0.5, 1.0])


def test_reflecting_wall():
    field = ConstantField([1.0, 0.0])
    domain = Domain([[0.0, 1.0], [0.0, 1.0]], ["reflecting", "reflecting"])
    ensemble = ParticleEnsemble(np.array([[0.95, 0.5]]))
    final = integrate_ensemble(field, 0.0, ensemble, 0.0, 0.1, 0.05, domain=domain)
    assert final.positions[0, 0] == pytest.approx(0.95)
    assert final.alive.all()


def test_outflow_kills_for_good():
    field = ConstantField([1.0, 0.0])
    domain = Domain([[0.0, 1.0], [0.0, 1.0]], ["outflow", "reflecting"])
    ensemble = ParticleEnsemble(np.array([[0.95, 0.5], [0.1, 0.5]]))
    final = integrate_ensemble(field, 0.0, ensemble, 0.0, 0.5, 0.05, domain=domain)
    assert final.alive.tolist() == [False, True]
    # the dead particle stopped just past the face it left through
    assert 1.0 < final.positions[0, 0] < 1.1


def test_results_do_not_depend_on_workers(zero_field):
    n = 2 * BLOCK_SIZE + 17
    ensemble = ParticleEnsemble.uniform([0, 0], [10, 10], n, seed=11)
    serial = integrate_ensemble(zero_field, 0.1, ensemble, 0.0, 0.5, 0.1, domain=periodic_domain(), workers=1)
    threaded = integrate_ensemble(zero_field, 0.1, ensemble, 0.0, 0.5, 0.1, domain=periodic_domain(), workers=3)
    assert np.array_equal(serial.positions, threaded.positions)


def test_seeds_give_different_paths(zero_field):
    a = ParticleEnsemble.uniform([0, 0], [10, 10], 100, seed=1)
    b = ParticleEnsemble.uniform([0, 0], [10, 10], 100, seed=2)
    assert not np.allclose(a.positions, b.positions)
    again = ParticleEnsemble.uniform([0, 0], [10, 10], 100, seed=1)
    assert np.array_equal(a.positions, again.positions)


def test_noise_variance(zero_field):
    epsilon = 0.1
    ensemble = ParticleEnsemble(np.full((20000, 2), 5.0), seed=5)
    final = integrate_ensemble(zero_field, epsilon, ensemble, 0.0, 1.0, 0.05, domain=periodic_domain())
    variance = np.var(final.positions - 5.0, axis=0)
    assert variance.tolist() == pytest.approx([epsilon ** 2, epsilon ** 2], rel=0.05)


def test_euler_and_rk4_agree_on_constant_drift():
    field = ConstantField([0.3, -0.2])
    ensemble = ParticleEnsemble(np.array([[5.0, 5.0]]))
    euler = integrate_ensemble(field, 0.0, ensemble, 0.0, 1.0, 0.1, scheme="euler-maruyama", domain=periodic_domain())
    rk4 = integrate_ensemble(field, 0.0, ensemble, 0.0, 1.0, 0.1, scheme="rk4-maruyama", domain=periodic_domain())
    assert np.allclose(euler.positions, rk4.positions)


def test_unknown_scheme(zero_field):
    with pytest.raises(SimulationError):
        integrate_ensemble(zero_field, 0.0, ParticleEnsemble(np.zeros((1, 2))), 0.0, 1.0, 0.1, scheme="leapfrog", domain=periodic_domain())


def test_step_must_divide_interval(zero_field):
    with pytest.raises(SimulationError):
        integrate_ensemble(zero_field, 0.0, ParticleEnsemble(np.zeros((1, 2))), 0.0, 1.0, 0.3, domain=periodic_domain())


def test_default_dt(gyre_grid):
    assert default_dt(gyre_grid) == pytest.approx(1.0 / 32)


def test_monte_carlo_estimate_stderr():
    estimate = MonteCarloEstimate.from_counts(25, 100)
    assert estimate.value == 0.25
    assert estimate.stderr == pytest.approx(np.sqrt(0.25 * 0.75 / 100))


def test_seed_in_family_stays_in_initial_set(unit_grid):
    masks = np.zeros((unit_grid.n_half + 1, unit_grid.n_space), dtype=bool)
    masks[:, 0] = True
    family = BoxFamily(unit_grid, masks)
    ensemble = seed_in_family(family, 500, seed=4)
    assert np.all(ensemble.positions >= 0)
    assert np.all(ensemble.positions <= 0.25)


def test_whole_domain_family_is_perfectly_coherent(unit_grid, zero_field):
    masks = np.ones((unit_grid.n_half + 1, unit_grid.n_space), dtype=bool)
    estimate = coherence_ratio_mc(BoxFamily(unit_grid, masks), zero_field, 0.2, 1000, seed=9)
    assert estimate.value == 1.0
    assert estimate.check_interval == pytest.approx(default_dt(unit_grid))


def test_drifting_particles_leave_a_static_box():
    grid = SpaceTimeGrid(tau=1.0, n_time=2, lower=[0, 0], upper=[1, 1], n_boxes=[2, 2], bc="reflecting")
    masks = np.zeros((grid.n_half + 1, grid.n_space), dtype=bool)
    masks[:, 0] = True  # lower-left quarter
    estimate = coherence_ratio_mc(BoxFamily(grid, masks), ConstantField([1.0, 0.0]), 0.0, 400, seed=1)
    assert estimate.value == 0.0


def test_side_switch_without_motion(zero_field):
    estimate = side_switch_fraction(
        zero_field, 0.0, 1000, [0, 0], [2, 1], 1.0, t1=1.0, dt=0.1, domain=Domain([[0, 2], [0, 1]], ["reflecting"] * 2)
    )
    assert estimate.value == 0.0


def test_side_switch_with_uniform_drift():
    # every particle in [0.5, 1] x [0, 1] crosses x = 1 when pushed by 0.6 in x
    field = ConstantField([0.6, 0.0])
    estimate = side_switch_fraction(
        field, 0.0, 1000, [0.5, 0], [1.0, 1], 1.0, t1=1.0, dt=0.1, domain=Domain([[0, 2], [0, 1]], ["reflecting"] * 2)
    )
    assert estimate.value == 1.0


def test_propagate_density_matches_matrix_exponentials(gyre_grid, gyre):
    G = assemble_augmented(gyre_grid, gyre, 0.1)
    slices = [slice_generator(G, s) for s in range(gyre_grid.n_time)]
    f0 = np.linspace(1, 2, gyre_grid.n_space)
    result = propagate_density(slices, f0, slabs=[0, 1, 2])
    expected = f0
    for s in [0, 1, 2]:
        expected = scipy.linalg.expm(gyre_grid.h * slices[s].to_dense()) @ expected
    assert np.allclose(result, expected, rtol=1e-9)


def test_propagate_density_transpose_conserves_mass(gyre_grid, gyre):
    G = assemble_augmented(gyre_grid, gyre, 0.1)
    slices = [slice_generator(G, s) for s in range(gyre_grid.n_time)]
    p0 = np.zeros(gyre_grid.n_space)
    p0[3] = 1.0
    p = propagate_density(slices, p0, transpose=True)
    assert p.sum() == pytest.approx(1.0, rel=1e-10)
    assert np.all(p > -1e-10)


def test_propagate_density_needs_slab_generators(gyre_grid, gyre):
    G = assemble_augmented(gyre_grid, gyre, 0.1)
    with pytest.raises(SimulationError):
        propagate_density([G], np.ones(gyre_grid.n_space))
