import numpy as np
import pytest

from reflected_coherence.exceptions import FluxError
from reflected_coherence.flux import (
    MirroredFamily,
    StaticRectangle,
    TranslatingDisk,
    augmented_flux,
    cumulative_outflux,
)
from reflected_coherence.velocity import ConstantField, reflect


class ClockwiseDisk(TranslatingDisk):
    def position(self, t, r):
        return super().position(t, -np.asarray(r))

    def tangent(self, t, r, step=None):
        return -super().tangent(t, -np.asarray(r))


@pytest.fixture
def unit_square():
    return StaticRectangle([0, 0], [1, 1], horizon=1.0)


@pytest.fixture
def eastward():
    return ConstantField([1.0, 0.0], tau=1.0)


def test_static_square_in_uniform_flow(unit_square, eastward):
    # everything leaves through the right side, the same amount enters on the left
    assert cumulative_outflux(unit_square, eastward) == pytest.approx(1.0)
    assert cumulative_outflux(unit_square, eastward, positive_part=False) == pytest.approx(2.0)


def test_rectangle_boundary_is_counterclockwise(unit_square):
    corners = unit_square.position(0.0, np.array([0.0, 0.25, 0.5, 0.75]))
    assert np.allclose(corners, [[0, 0], [1, 0], [1, 1], [0, 1]])


def test_static_disk_in_uniform_flow(eastward):
    disk = TranslatingDisk([0.5, 0.5], 0.5, horizon=1.0)
    # the positive part of cos over the circle integrates to 2 R
    assert cumulative_outflux(disk, eastward) == pytest.approx(1.0, rel=1e-3)


def test_disk_moving_with_the_flow_has_no_flux(eastward):
    disk = TranslatingDisk([0.5, 0.5], 0.25, velocity=[1.0, 0.0], horizon=1.0)
    assert cumulative_outflux(disk, eastward) == pytest.approx(0.0, abs=1e-12)
    assert augmented_flux(disk, eastward) == pytest.approx(0.0, abs=1e-6)


def test_augmented_flux_matches_relative_flux(eastward):
    disk = TranslatingDisk([0.5, 0.5], 0.25, velocity=[0.2, 0.0], horizon=1.0)
    assert augmented_flux(disk, eastward) == pytest.approx(cumulative_outflux(disk, eastward), rel=1e-6)
    assert augmented_flux(disk, eastward, absolute=True) == pytest.approx(
        cumulative_outflux(disk, eastward, positive_part=False), rel=1e-6
    )


def test_reflected_outflux_equals_absolute_flux(eastward):
    disk = TranslatingDisk([0.5, 0.5], 0.25, velocity=[0.2, 0.0], horizon=1.0)
    absolute = cumulative_outflux(disk, eastward, positive_part=False)
    # |0.8 cos| around a circle of radius 1/4 for unit time
    assert absolute == pytest.approx(0.8, rel=1e-3)
    assert augmented_flux(disk, reflect(eastward, 1.0)) == pytest.approx(absolute, rel=1e-6)


def test_reflected_identity_on_static_square(unit_square, eastward):
    assert augmented_flux(unit_square, reflect(eastward)) == pytest.approx(2.0)
    mirrored = MirroredFamily(unit_square)
    assert mirrored.horizon == 2.0
    assert cumulative_outflux(mirrored, reflect(eastward)) == pytest.approx(2.0)


def test_mirrored_family_runs_backwards():
    disk = TranslatingDisk([0.0, 0.0], 1.0, velocity=[1.0, 0.0], horizon=1.0)
    mirrored = MirroredFamily(disk)
    r = np.array([0.0, 0.3])
    assert np.allclose(mirrored.position(1.5, r), disk.position(0.5, r))
    assert np.allclose(mirrored.boundary_velocity(1.5, r), [[-1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(FluxError):
        MirroredFamily(mirrored)


def test_clockwise_boundary_rejected(eastward):
    disk = ClockwiseDisk([0.5, 0.5], 0.25, horizon=1.0)
    with pytest.raises(FluxError):
        cumulative_outflux(disk, eastward, n_t=4)


def test_bad_shapes_rejected():
    with pytest.raises(FluxError):
        TranslatingDisk([0, 0], 0.0)
    with pytest.raises(FluxError):
        StaticRectangle([0, 0], [1, 0])


def test_workers_do_not_change_the_flux(eastward):
    disk = TranslatingDisk([0.5, 0.5], 0.25, velocity=[0.2, 0.1], horizon=1.0)
    serial = cumulative_outflux(disk, eastward, workers=1)
    threaded = cumulative_outflux(disk, eastward, workers=4)
    assert serial == threaded
