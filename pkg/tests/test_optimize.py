import math

import numpy as np
import pytest

from reflected_coherence.exceptions import (
    ConstraintError,
    DictionaryError,
    OptimizationError,
    StationaryError,
)
from reflected_coherence.generator import assemble_augmented, perturbation_generators
from reflected_coherence.optimize import (
    CombinedFeatureTarget,
    ConstraintForm,
    EigenTarget,
    FeatureTarget,
    Sense,
    build_dictionary,
    combine_cost_vectors,
    cosine_profile,
    cost_vector_eigen,
    cost_vector_feature,
    feature_objective,
    feature_vector,
    gram_matrix,
    group_by_spatial_mode,
    iterate_optimization,
    normalize_feature,
    perturbation_streamfunction,
    solve_step,
    temporal_modulation,
)
from reflected_coherence.spectral import left_right_pairs, pairing
from reflected_coherence.velocity import divergence_check

GYRE_BOUNDS = [(0.0, 2.0), (0.0, 1.0)]


@pytest.fixture(scope="module")
def small_dictionary():
    return build_dictionary([1, 2], [1], GYRE_BOUNDS, tau=1.0)


@pytest.fixture
def gyre_feature(gyre_grid):
    return normalize_feature(feature_vector(gyre_grid, cosine_profile(2 * math.pi, axis=1)), gyre_grid)


@pytest.mark.parametrize(
    "c, matrix, z, u_min",
    [
        ([1.0, 0.0], np.eye(2), 0.5, [-1.0, 0.0]),
        ([3.0, 4.0], np.eye(2), 2.5, [-0.6, -0.8]),
        ([2.0, 0.0], np.diag([4.0, 1.0]), 0.5, [-0.5, 0.0]),
    ],
)
def test_solve_step_hand_cases(c, matrix, z, u_min):
    constraint = ConstraintForm(matrix)
    u, got_z = solve_step(c, constraint, sense=Sense.DESTROY)
    assert got_z == pytest.approx(z, abs=1e-12)
    assert u.tolist() == pytest.approx(u_min, abs=1e-12)
    assert constraint.energy(u) == pytest.approx(1.0, abs=1e-12)

    enhanced, _ = solve_step(c, constraint, sense="enhance")
    assert enhanced.tolist() == pytest.approx([-x for x in u_min], abs=1e-12)


def test_solve_step_radius_scales_update():
    u, z = solve_step([1.0, 0.0], ConstraintForm.identity(2), radius=2.0, sense=Sense.DESTROY)
    assert z == pytest.approx(0.25)
    assert u.tolist() == pytest.approx([-2.0, 0.0])


def test_solve_step_zero_cost_is_stationary():
    with pytest.raises(StationaryError):
        solve_step([0.0, 0.0], ConstraintForm.identity(2))


def test_solve_step_length_mismatch():
    with pytest.raises(OptimizationError):
        solve_step([1.0, 0.0, 0.0], ConstraintForm.identity(2))


@pytest.mark.parametrize(
    "matrix, radius",
    [
        (np.ones((2, 3)), 1.0),
        ([[1.0, 0.5], [0.0, 1.0]], 1.0),
        ([[1.0, 0.0], [0.0, -1.0]], 1.0),
        (np.eye(2), 0.0),
    ],
)
def test_constraint_form_rejects(matrix, radius):
    with pytest.raises(ConstraintError):
        ConstraintForm(matrix, radius=radius)


def test_temporal_modulation():
    assert temporal_modulation(-1, 4.0)(1.0) == pytest.approx(0.25)
    assert temporal_modulation(0, 4.0)(1.3) == pytest.approx(1.0)
    assert temporal_modulation(2, 4.0)(1.0) == pytest.approx(1.0)
    with pytest.raises(DictionaryError):
        temporal_modulation(-2, 4.0)


def test_dictionary_ordering(small_dictionary):
    labels = [e.label for e in small_dictionary.entries]
    assert labels == [
        "k=1 l=1 r=-1",
        "k=1 l=1 r=0",
        "k=1 l=1 r=2",
        "k=2 l=1 r=-1",
        "k=2 l=1 r=0",
        "k=2 l=1 r=2",
    ]
    frame = small_dictionary.as_dataframe()
    assert frame["k"].tolist() == [1, 1, 1, 2, 2, 2]


def test_dictionary_entries_have_unit_norm(small_dictionary):
    form = gram_matrix(small_dictionary)
    assert np.allclose(np.diag(form.matrix), 1.0, atol=1e-10)
    assert np.allclose(form.matrix, form.matrix.T)


def test_sobolev_gram_adds_derivative_terms(small_dictionary):
    l2 = gram_matrix(small_dictionary)
    h1 = gram_matrix(small_dictionary, omega=[1.0, 0.5], m=1)
    assert h1.order == 1
    assert np.all(np.diag(h1.matrix) > np.diag(l2.matrix))
    with pytest.raises(ConstraintError):
        gram_matrix(small_dictionary, omega=[1.0], m=1)
    with pytest.raises(ConstraintError):
        gram_matrix(small_dictionary, m=2)


def test_dictionary_fields_are_divergence_free(small_dictionary):
    for field in small_dictionary.fields():
        assert field.divergence_free
        assert divergence_check(field) < 1e-4


@pytest.mark.parametrize(
    "k_values, l_values, periodic",
    [([], [1], (False, False)), ([0, 1], [1], (False, False)), ([1, 2], [2], (True, False)), ([2], [1], (False, True))],
)
def test_bad_dictionaries(k_values, l_values, periodic):
    with pytest.raises(DictionaryError):
        build_dictionary(k_values, l_values, GYRE_BOUNDS, tau=1.0, periodic=periodic)


def test_combination_and_streamfunction(small_dictionary):
    x = np.array([[0.3, 0.4], [1.5, 0.8]])
    coefficients = np.zeros(len(small_dictionary))
    coefficients[1] = 2.0
    combined = small_dictionary.combination(coefficients)
    assert np.allclose(combined.evaluate(0.3, x), 2 * small_dictionary.velocity(1, 0.3, x))

    xs, ys, psi = perturbation_streamfunction(small_dictionary, np.zeros(len(small_dictionary)), 0.25, n_x=5, n_y=4)
    assert psi.shape == (4, 5)
    assert np.all(psi == 0)
    with pytest.raises(OptimizationError):
        small_dictionary.combination([1.0])


def test_group_by_spatial_mode(small_dictionary):
    groups = group_by_spatial_mode(small_dictionary, [0.0, 0.0, 0.1, 3.0, 4.0, 0.0])
    assert groups[["k", "l"]].values.tolist() == [[2, 1], [1, 1]]
    assert groups["magnitude"].tolist() == pytest.approx([5.0, 0.1])


def test_feature_vector_mirrors_time(gyre_grid):
    phi = feature_vector(gyre_grid, lambda t, x: t + np.asarray(x)[..., 0])
    fibers = gyre_grid.fibers(phi)
    for s in range(gyre_grid.n_time):
        assert np.allclose(fibers[s], fibers[gyre_grid.n_time - 1 - s])


def test_normalize_feature(gyre_grid, gyre_feature):
    assert gyre_feature.mean() == pytest.approx(0.0, abs=1e-12)
    assert gyre_grid.cell_measure * np.dot(gyre_feature, gyre_feature) == pytest.approx(1.0)
    with pytest.raises(OptimizationError):
        normalize_feature(np.ones(gyre_grid.dimension), gyre_grid)


def test_cosine_profile_vanishes_at_offset():
    profile = cosine_profile(2.0, axis=1, offset=0.5)
    assert profile(0.0, np.array([[0.2, 0.5]]))[0] == pytest.approx(0.0)


def test_feature_cost_matches_finite_difference(gyre_grid, gyre, small_dictionary, gyre_feature):
    G = assemble_augmented(gyre_grid, gyre, 0.1)
    generators = perturbation_generators(gyre_grid, small_dictionary.fields()[:2])
    cost = cost_vector_feature(G, gyre_feature, generators)

    def objective(matrix):
        action = matrix @ gyre_feature
        return gyre_grid.cell_measure * np.dot(action, action)

    assert feature_objective(G, gyre_feature) == pytest.approx(objective(G.matrix))
    delta = 1e-4
    for E, c in zip(generators, cost):
        fd = (objective(G.matrix + delta * E.matrix) - objective(G.matrix - delta * E.matrix)) / (2 * delta)
        assert fd == pytest.approx(c, rel=1e-2, abs=1e-10)


def test_eigen_cost_is_real_part_of_first_variation(gyre_grid, gyre, small_dictionary):
    G = assemble_augmented(gyre_grid, gyre, 0.1)
    generators = perturbation_generators(gyre_grid, small_dictionary.fields()[:2])
    pairs = left_right_pairs(G, 4, indices=[1])
    g, f = pairs.left_vectors[:, 0], pairs.right_vectors[:, 0]
    cost = cost_vector_eigen(G, g, f, generators)
    for E, c in zip(generators, cost):
        assert c == pytest.approx(pairing(g, E @ f, gyre_grid).real)
    with pytest.raises(OptimizationError):
        cost_vector_eigen(G, g[:-1], f, generators)


def test_combine_cost_vectors():
    assert combine_cost_vectors([1.0, 2.0], [3.0, 4.0], 1.0, 2.0).tolist() == [-5.0, -6.0]
    with pytest.raises(OptimizationError):
        combine_cost_vectors([1.0], [1.0], alpha_destroy=0.0)


def test_target_senses(gyre_feature):
    assert EigenTarget(1).maximizes(Sense.ENHANCE)
    assert not FeatureTarget(gyre_feature).maximizes(Sense.ENHANCE)
    assert CombinedFeatureTarget(gyre_feature, gyre_feature).maximizes(Sense.DESTROY)


def test_zero_steps_leave_the_field_alone(gyre_grid, gyre, small_dictionary, gyre_feature):
    state = iterate_optimization(
        gyre_grid, gyre, 0.1, small_dictionary, ConstraintForm.identity(len(small_dictionary)), FeatureTarget(gyre_feature), steps=0
    )
    assert state.records == []
    assert state.trajectory.size == 0
    assert np.all(state.coefficients == 0)
    with pytest.raises(OptimizationError):
        iterate_optimization(
            gyre_grid, gyre, 0.1, small_dictionary, ConstraintForm.identity(len(small_dictionary)), FeatureTarget(gyre_feature), steps=-1
        )


def check_state(state, steps, radius):
    if state.halted is None:
        assert len(state.records) == steps
    else:
        assert not state.records[-1].accepted
        assert all(r.accepted for r in state.records[:-1])
    assert len(state.trajectory) == state.steps_taken + 1
    for record in state.records:
        assert record.z > 0
        assert np.dot(record.update, record.update) == pytest.approx(radius ** 2)


def test_feature_optimization_moves_downhill(gyre_grid, gyre, small_dictionary, gyre_feature):
    seen = []
    state = iterate_optimization(
        gyre_grid,
        gyre,
        0.1,
        small_dictionary,
        ConstraintForm.identity(len(small_dictionary), radius=0.02),
        FeatureTarget(gyre_feature),
        sense=Sense.ENHANCE,
        steps=2,
        callback=seen.append,
    )
    assert seen == state.records
    check_state(state, 2, 0.02)
    assert np.all(np.diff(state.trajectory) < 0)
    assert state.target == "feature"


def test_eigen_optimization_tracks_the_mode(gyre_grid, gyre, small_dictionary):
    state = iterate_optimization(
        gyre_grid,
        gyre,
        0.1,
        small_dictionary,
        ConstraintForm.identity(len(small_dictionary), radius=0.02),
        EigenTarget(1, n_eigenvalues=4),
        steps=2,
    )
    check_state(state, 2, 0.02)
    assert state.initial_index == 1
    assert state.initial_objective == pytest.approx(state.initial_eigenvalue.real)
    assert np.all(np.diff(state.trajectory) > 0)
    frame = state.as_dataframe()
    assert list(frame["step"]) == [r.step for r in state.records]
