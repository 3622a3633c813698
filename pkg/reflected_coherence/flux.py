# Copyright 2020 reflected_coherence developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import logging
import math
from typing import Optional, Sequence

import numpy as np

from .exceptions import FluxError
from .utils import parallel_map
from .velocity import ReflectedField, VelocityField

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

_DEGENERATE = 1e-12


class ParamFamily:
    """
    A planar family of sets ``A_t`` for ``t`` in ``[0, horizon]``, given by its boundary.

    ``position(t, r)`` traces the boundary counterclockwise for ``r`` in ``[0, 1)``;
    ``boundary_velocity(t, r)`` is the analytic time derivative of ``position``.
    Both are vectorized over ``r`` and return arrays of shape ``r.shape + (2,)``.
    """

    horizon: float

    def position(self, t: float, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_velocity(self, t: float, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tangent(self, t: float, r: np.ndarray, step: float = 1e-6) -> np.ndarray:
        """``d position / d r`` by central differences."""
        return (self.position(t, r + step) - self.position(t, r - step)) / (2 * step)


class TranslatingDisk(ParamFamily):
    """A disk of fixed radius whose center moves with constant velocity."""

    def __init__(self, center: Sequence[float], radius: float, velocity: Sequence[float] = (0.0, 0.0), horizon: float = 1.0):
        if radius <= 0:
            raise FluxError("disk radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.velocity = np.asarray(velocity, dtype=float)
        self.horizon = float(horizon)

    def __repr__(self):
        return "TranslatingDisk(center={}, radius={}, velocity={})".format(
            self.center.tolist(), self.radius, self.velocity.tolist()
        )

    def position(self, t, r):
        r = np.asarray(r, dtype=float)
        angle = 2 * math.pi * r
        circle = self.radius * np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        return self.center + t * self.velocity + circle

    def boundary_velocity(self, t, r):
        return np.broadcast_to(self.velocity, np.shape(r) + (2,)).copy()

    def tangent(self, t, r, step=None):
        angle = 2 * math.pi * np.asarray(r, dtype=float)
        return 2 * math.pi * self.radius * np.stack([-np.sin(angle), np.cos(angle)], axis=-1)


class StaticRectangle(ParamFamily):
    """An axis-aligned rectangle that does not move; each side takes a quarter of ``r``."""

    def __init__(self, lower: Sequence[float], upper: Sequence[float], horizon: float = 1.0):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise FluxError("rectangle needs lower < upper")
        self.horizon = float(horizon)
        (x0, y0), (x1, y1) = self.lower, self.upper
        self._corners = np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)])

    def position(self, t, r):
        r = np.mod(np.asarray(r, dtype=float), 1.0)
        side = np.minimum((4 * r).astype(int), 3)
        s = 4 * r - side
        start = self._corners[side]
        end = self._corners[side + 1]
        return start + s[..., None] * (end - start)

    def boundary_velocity(self, t, r):
        return np.zeros(np.shape(r) + (2,))

    def tangent(self, t, r, step=None):
        r = np.mod(np.asarray(r, dtype=float), 1.0)
        side = np.minimum((4 * r).astype(int), 3)
        return 4 * (self._corners[side + 1] - self._corners[side])


class MirroredFamily(ParamFamily):
    """
    The forward-backward family over ``[0, 2 tau]``: ``A_t`` for ``t <= tau`` and ``A_{2 tau - t}`` after,
    with the boundary velocity negated on the second half.
    """

    def __init__(self, base: ParamFamily, tau: Optional[float] = None):
        if isinstance(base, MirroredFamily):
            raise FluxError("family is already mirrored")
        self.base = base
        self.tau = float(base.horizon if tau is None else tau)
        self.horizon = 2 * self.tau

    def __repr__(self):
        return "MirroredFamily({!r})".format(self.base)

    def _mirror(self, t):
        return (t, 1.0) if t <= self.tau else (2 * self.tau - t, -1.0)

    def position(self, t, r):
        s, _ = self._mirror(t)
        return self.base.position(s, r)

    def boundary_velocity(self, t, r):
        s, sign = self._mirror(t)
        return sign * self.base.boundary_velocity(s, r)

    def tangent(self, t, r, step=1e-6):
        s, _ = self._mirror(t)
        return self.base.tangent(s, r, step)


def _midpoints(n: int, length: float) -> np.ndarray:
    return (np.arange(n) + 0.5) * length / n


def _outward(tangent: np.ndarray) -> np.ndarray:
    # rotate a counterclockwise tangent clockwise: unnormalized outward normal, |n| = dS/dr
    return np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1)


def _check_nodes(family: ParamFamily, t: float, points: np.ndarray, element: np.ndarray):
    if np.any(element <= _DEGENERATE):
        raise FluxError("degenerate boundary parameterization at t = {}: zero surface element".format(t))
    x, y = points[:, 0], points[:, 1]
    area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if area <= 0:
        raise FluxError("boundary of {!r} at t = {} is not traced counterclockwise".format(family, t))


def _combine(values: np.ndarray, absolute: bool) -> np.ndarray:
    return np.abs(values) if absolute else np.maximum(values, 0.0)


def cumulative_outflux(
    family: ParamFamily,
    field: VelocityField,
    positive_part: bool = True,
    n_t: int = 200,
    n_r: int = 200,
    workers: Optional[int] = None,
) -> float:
    """
    Outflow of ``field`` through the moving boundary, integrated over the family's horizon.

    Integrates ``<v - b, n>^+`` (or ``|<v - b, n>|`` when ``positive_part`` is off)
    over the boundary and over time with a tensor-product midpoint rule.
    """
    horizon = family.horizon
    r = _midpoints(n_r, 1.0)
    times = _midpoints(n_t, horizon)

    def at(t):
        points = family.position(t, r)
        normal = _outward(family.tangent(t, r))
        _check_nodes(family, t, points, np.linalg.norm(normal, axis=-1))
        relative = field.evaluate(t, points) - family.boundary_velocity(t, r)
        return _combine(np.sum(relative * normal, axis=-1), not positive_part).sum() / n_r

    total = float(np.sum(parallel_map(at, times, workers)) * horizon / n_t)
    logger.debug("Cumulative {} flux of {!r}: {}".format("out" if positive_part else "absolute", family, total))
    return total


def augmented_flux(
    family: ParamFamily,
    field: VelocityField,
    absolute: bool = False,
    n_t: int = 200,
    n_r: int = 200,
    step: float = 1e-6,
    workers: Optional[int] = None,
) -> float:
    """
    Flux of the time-augmented field ``(1, v)`` out of the lateral boundary of ``{(t, x): x in A_t}``.

    The lateral surface is the image of ``(t, r) -> (t, a(t, r))``; its normal is the
    cross product of the two tangents, taken by central differences of the lifted map.
    The temporal caps carry no flux. A reflected field mirrors the family first and
    integrates over ``[0, 2 tau]``.
    """
    if isinstance(field, ReflectedField) and not isinstance(family, MirroredFamily):
        family = MirroredFamily(family, field.tau)
    horizon = family.horizon
    r = _midpoints(n_r, 1.0)
    times = _midpoints(n_t, horizon)
    dt = min(step, 0.25 * horizon / n_t)

    def at(t):
        points = family.position(t, r)
        d_t = (family.position(t + dt, r) - family.position(t - dt, r)) / (2 * dt)
        d_r = family.tangent(t, r, step)
        # (0, d_r) x (1, d_t), oriented so the spatial part points out of a counterclockwise boundary
        normal_t = d_t[:, 1] * d_r[:, 0] - d_t[:, 0] * d_r[:, 1]
        normal_x = _outward(d_r)
        _check_nodes(family, t, points, np.linalg.norm(normal_x, axis=-1))
        flux = normal_t + np.sum(field.evaluate(t, points) * normal_x, axis=-1)
        return _combine(flux, absolute).sum() / n_r

    total = float(np.sum(parallel_map(at, times, workers)) * horizon / n_t)
    logger.debug("Augmented {} flux of {!r}: {}".format("absolute" if absolute else "out", family, total))
    return total
