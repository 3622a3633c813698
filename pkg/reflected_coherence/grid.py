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

import enum
import logging
import math
from typing import Any, Mapping, Sequence, Tuple, Union

import numpy as np

from .exceptions import DomainError, GridError

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

# relative slack when deciding which box a point on a face belongs to
_FACE_SLACK = 1e-12
# spacings closer than this count as square boxes
SQUARE_BOX_RTOL = 1e-2


class BoundaryCondition(enum.Enum):
    REFLECTING = "reflecting"
    OUTFLOW = "outflow"
    PERIODIC = "periodic"

    @classmethod
    def parse(cls, value: Union[str, "BoundaryCondition"]) -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().lower()
        aliases = {"neumann": cls.REFLECTING, "dirichlet": cls.OUTFLOW}
        if normalized in aliases:
            return aliases[normalized]
        try:
            return cls(normalized)
        except ValueError:
            raise GridError(
                "unknown boundary condition {!r}; expected one of {}".format(
                    value, ", ".join(bc.value for bc in cls)
                )
            )


class SpaceTimeGrid:
    """
    A uniform box partition of the time circle ``[0, 2 tau)`` times a spatial rectangle.

    Flat indices are slab-major: ``index = slab * n_space + spatial``, where the
    spatial index is row-major over the spatial axes (the last axis varies fastest).
    """

    def __init__(
        self,
        tau: float,
        n_time: int,
        lower: Sequence[float],
        upper: Sequence[float],
        n_boxes: Sequence[int],
        bc: Union[str, BoundaryCondition, Sequence[Union[str, BoundaryCondition]]],
    ):
        lower = np.array(lower, dtype=float).ravel()
        upper = np.array(upper, dtype=float).ravel()
        n_boxes = tuple(int(n) for n in np.ravel(n_boxes))

        if not (np.isfinite(tau) and tau > 0):
            raise GridError("tau must be positive and finite, got {}".format(tau))
        if int(n_time) != n_time or n_time < 2 or n_time % 2 != 0:
            raise GridError("n_time must be an even integer >= 2, got {}".format(n_time))
        if not (len(lower) == len(upper) == len(n_boxes)):
            raise GridError("bounds and box counts disagree on the number of spatial axes")
        if not 1 <= len(n_boxes) <= 3:
            raise GridError("only 1, 2 or 3 spatial axes are supported")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise GridError("spatial bounds must be finite")
        if np.any(upper <= lower):
            raise GridError("degenerate spatial bounds {} .. {}".format(lower, upper))
        if any(n < 1 for n in n_boxes):
            raise GridError("box counts must be >= 1, got {}".format(n_boxes))

        if isinstance(bc, (str, BoundaryCondition)):
            bc = [bc] * len(n_boxes)
        bc = tuple(BoundaryCondition.parse(b) for b in bc)
        if len(bc) != len(n_boxes):
            raise GridError("need exactly one boundary condition per spatial axis")

        self.tau = float(tau)
        self.n_time = int(n_time)
        self.lower = lower
        self.upper = upper
        self.n_boxes = n_boxes
        self.bc = bc

        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

        self.h = 2 * self.tau / self.n_time
        self.spacing = (self.upper - self.lower) / np.array(self.n_boxes)
        self.spacing.setflags(write=False)
        self.box_volume = float(np.prod(self.spacing))
        self.n_space = int(np.prod(self.n_boxes))
        self.dimension = self.n_time * self.n_space

    def __repr__(self):
        return "{}(tau={}, n_time={}, lower={}, upper={}, n_boxes={}, bc={})".format(
            self.__class__.__name__,
            self.tau,
            self.n_time,
            self.lower.tolist(),
            self.upper.tolist(),
            self.n_boxes,
            [b.value for b in self.bc],
        )

    def __eq__(self, other):
        if not isinstance(other, SpaceTimeGrid):
            return NotImplemented
        return (
            self.tau == other.tau
            and self.n_time == other.n_time
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and self.n_boxes == other.n_boxes
            and self.bc == other.bc
        )

    def __hash__(self):
        return hash((self.tau, self.n_time, tuple(self.lower), tuple(self.upper), self.n_boxes, self.bc))

    @property
    def d(self) -> int:
        return len(self.n_boxes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n_time, *self.n_boxes)

    @property
    def cell_measure(self) -> float:
        """Space-time volume of one box, the weight of the discrete L2 pairing."""
        return self.h * self.box_volume

    @property
    def n_half(self) -> int:
        return self.n_time // 2

    @property
    def periodic(self) -> Tuple[bool, ...]:
        return tuple(b is BoundaryCondition.PERIODIC for b in self.bc)

    def is_isotropic(self, rtol: float = SQUARE_BOX_RTOL) -> bool:
        """Whether all box spacings agree with the first to within ``rtol``."""
        return bool(np.allclose(self.spacing, self.spacing[0], rtol=rtol, atol=0))

    def slab_midpoints(self) -> np.ndarray:
        return (np.arange(self.n_time) + 0.5) * self.h

    def slab_boundaries(self) -> np.ndarray:
        return np.arange(self.n_time + 1) * self.h

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.lower[axis] + (np.arange(self.n_boxes[axis]) + 0.5) * self.spacing[axis]

    def box_centers(self) -> np.ndarray:
        """Centers of the spatial boxes, shape ``(n_space, d)``, in flat spatial order."""
        mesh = np.meshgrid(*(self.axis_centers(a) for a in range(self.d)), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def ravel(self, slab: int, multi_index: Sequence[int]) -> int:
        if not 0 <= slab < self.n_time:
            raise GridError("slab {} out of range".format(slab))
        return int(slab * self.n_space + np.ravel_multi_index(tuple(multi_index), self.n_boxes))

    def unravel(self, index: int) -> Tuple[int, Tuple[int, ...]]:
        if not 0 <= index < self.dimension:
            raise GridError("flat index {} out of range".format(index))
        slab, spatial = divmod(int(index), self.n_space)
        return slab, tuple(int(i) for i in np.unravel_index(spatial, self.n_boxes))

    def center(self, index: int) -> Tuple[float, np.ndarray]:
        """Return ``(t, x)`` at the center of the space-time box with the given flat index."""
        slab, multi = self.unravel(index)
        x = self.lower + (np.array(multi) + 0.5) * self.spacing
        return (slab + 0.5) * self.h, x

    def fibers(self, vector: np.ndarray) -> np.ndarray:
        """View a flat augmented vector as ``(n_time, n_space)`` slab fibers."""
        vector = np.asarray(vector)
        if vector.shape[0] != self.dimension:
            raise GridError(
                "vector of length {} does not live on a grid of dimension {}".format(
                    vector.shape[0], self.dimension
                )
            )
        return vector.reshape((self.n_time, self.n_space) + vector.shape[1:])

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Wrap coordinates along periodic axes into ``[lower, upper)``."""
        x = np.array(x, dtype=float)
        for axis, periodic in enumerate(self.periodic):
            if periodic:
                length = self.upper[axis] - self.lower[axis]
                x[..., axis] = self.lower[axis] + np.mod(x[..., axis] - self.lower[axis], length)
        return x

    def inside(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed domain along every non-periodic axis."""
        x = np.asarray(x, dtype=float)
        slack = _FACE_SLACK * (self.upper - self.lower)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for axis, periodic in enumerate(self.periodic):
            if not periodic:
                ok &= (x[..., axis] >= self.lower[axis] - slack[axis]) & (
                    x[..., axis] <= self.upper[axis] + slack[axis]
                )
        return ok

    def spatial_index(self, x: np.ndarray) -> np.ndarray:
        """
        Vectorized spatial box lookup for points of shape ``(..., d)``.

        Points on a face belong to the lower-index box.
        Raises :class:`DomainError` for points outside a non-periodic axis.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise DomainError("points have {} coordinates, grid has {}".format(x.shape[-1], self.d))
        if not np.all(self.inside(x)):
            raise DomainError("point outside the spatial domain {} .. {}".format(self.lower, self.upper))
        x = self.wrap(x)
        multi = []
        for axis in range(self.d):
            q = (x[..., axis] - self.lower[axis]) / self.spacing[axis]
            idx = np.ceil(q - _FACE_SLACK * self.n_boxes[axis]).astype(int) - 1
            multi.append(np.clip(idx, 0, self.n_boxes[axis] - 1))
        return np.ravel_multi_index(tuple(multi), self.n_boxes)

    def slab_index(self, t: Union[float, np.ndarray]) -> np.ndarray:
        """Slab containing time ``t`` (taken modulo ``2 tau``); slab boundaries go to the lower slab."""
        t = np.mod(np.asarray(t, dtype=float), 2 * self.tau)
        idx = np.ceil(t / self.h - _FACE_SLACK * self.n_time).astype(int) - 1
        return np.clip(idx, 0, self.n_time - 1)


def build_grid(config: Mapping[str, Any]) -> SpaceTimeGrid:
    """
    Build a :class:`SpaceTimeGrid` from a grid configuration mapping.

    The mapping has keys ``tau``, ``n_time``, ``bounds`` (a list of
    ``[lower, upper]`` pairs, one per axis), ``boxes`` (a list of counts) and
    ``bc`` (one name, or one per axis).
    """
    missing = [key for key in ("tau", "n_time", "bounds", "boxes") if key not in config]
    if missing:
        raise GridError("grid configuration is missing {}".format(", ".join(missing)))

    bounds = np.asarray(config["bounds"], dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise GridError("grid bounds must be a list of [lower, upper] pairs")

    n_time = config["n_time"]
    if isinstance(n_time, float) and not n_time.is_integer():
        raise GridError("n_time must be an integer, got {}".format(n_time))

    grid = SpaceTimeGrid(
        tau=float(config["tau"]),
        n_time=int(n_time),
        lower=bounds[:, 0],
        upper=bounds[:, 1],
        n_boxes=config["boxes"],
        bc=config.get("bc", BoundaryCondition.REFLECTING),
    )
    logger.debug(
        "Built {} with h={:.6g}, spacing={}, dimension={}".format(
            grid, grid.h, grid.spacing.tolist(), grid.dimension
        )
    )
    return grid


def locate(grid: SpaceTimeGrid, t: float, x: Sequence[float]) -> int:
    """Return the flat index of the space-time box containing ``(t, x)``."""
    x = np.asarray(x, dtype=float).reshape(grid.d)
    slab = int(grid.slab_index(t))
    return slab * grid.n_space + int(grid.spatial_index(x))


def is_close_to_multiple(value: float, step: float, rtol: float = 1e-9) -> bool:
    ratio = value / step
    return math.isclose(ratio, round(ratio), rel_tol=0, abs_tol=rtol * max(1.0, abs(ratio)))
