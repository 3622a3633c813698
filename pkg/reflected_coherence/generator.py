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

"""
Ulam-type discretization of the reflected, time-augmented Fokker-Planck generator.

Matrices are rate matrices: ``G[i, j] >= 0`` is the rate of moving from box
``i`` to box ``j`` and rows sum to zero, or less than zero where mass leaves
through an outflow boundary. Functions evolve by the right action ``G @ f``
and densities by the left action ``G.T @ p``.
"""

import enum
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import AssemblyError, GridError
from .grid import BoundaryCondition, SpaceTimeGrid
from .utils import parallel_map
from .velocity import ReflectedField, VelocityField, divergence_check, reflect

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


class GeneratorKind(enum.Enum):
    FULL_AUGMENTED = "full-augmented"
    SPATIAL_SLAB = "spatial-slab"
    PERTURBATION_DRIFT = "perturbation-drift"


class Quadrature(enum.Enum):
    MIDPOINT = "midpoint"
    GAUSS3 = "gauss3"

    @property
    def rule(self) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes in ``[0, 1]`` and weights summing to one."""
        if self is Quadrature.MIDPOINT:
            return np.array([0.5]), np.array([1.0])
        offset = 0.5 * np.sqrt(3 / 5)
        return np.array([0.5 - offset, 0.5, 0.5 + offset]), np.array([5, 8, 5]) / 18


class GeneratorMatrix:
    """A compiled sparse generator together with the grid and diffusion it was built for."""

    def __init__(self, matrix, grid: SpaceTimeGrid, epsilon: float, kind: GeneratorKind, slab: Optional[int] = None):
        self.matrix = sp.csr_matrix(matrix)
        self.grid = grid
        self.epsilon = float(epsilon)
        self.kind = kind
        self.slab = slab

    def __repr__(self):
        return "GeneratorMatrix(kind={}, dimension={}, nnz={}, epsilon={})".format(
            self.kind.value, self.dimension, self.nnz, self.epsilon
        )

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def __matmul__(self, other):
        return self.matrix @ other

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def max_abs_diagonal(self) -> float:
        diag = self.matrix.diagonal()
        return float(np.max(np.abs(diag))) if diag.size else 0.0

    def transpose(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_rate_matrix(self, rtol: float = 1e-12) -> bool:
        """Check nonnegative off-diagonals and zero (reflecting) or nonpositive (outflow) row sums."""
        off = self.matrix - sp.diags(self.matrix.diagonal())
        if off.nnz and off.data.min() < 0:
            return False
        sums = self.row_sums()
        slack = rtol * max(1.0, self.max_abs_diagonal())
        if any(b is BoundaryCondition.OUTFLOW for b in self.grid.bc):
            return bool(np.all(sums <= slack))
        return bool(np.all(np.abs(sums) <= slack))


def _as_reflected(field: VelocityField, grid: SpaceTimeGrid) -> ReflectedField:
    if isinstance(field, ReflectedField):
        if abs(field.tau - grid.tau) > 1e-12 * grid.tau:
            raise AssemblyError("field is reflected about tau={}, grid has tau={}".format(field.tau, grid.tau))
        return field
    return reflect(field, grid.tau)


def _check_domain(field: VelocityField, grid: SpaceTimeGrid):
    if field.dimension != grid.d:
        raise AssemblyError("{}-dimensional field on a {}-dimensional grid".format(field.dimension, grid.d))
    if field.bounds is not None:
        expected = np.stack([grid.lower, grid.upper], axis=-1)
        if not np.allclose(field.bounds, expected, rtol=1e-9, atol=1e-12):
            raise AssemblyError(
                "field domain {} does not match grid domain {}".format(field.bounds.tolist(), expected.tolist())
            )


def _face_fluxes(grid: SpaceTimeGrid, field: VelocityField, t: float, axis: int, quadrature: Quadrature):
    """
    Upwind face rates across every face normal to ``axis``, boundaries included.

    Returns ``(plus, minus)`` arrays of shape ``n_boxes`` with ``n_boxes[axis] + 1``
    entries along ``axis``: ``plus`` is the rate from the box below the face to the
    box above it, ``minus`` the rate in the opposite direction.
    """
    nodes, weights = quadrature.rule
    q = len(nodes)
    coords = []
    coord_weights = []
    for b in range(grid.d):
        if b == axis:
            coords.append(grid.lower[b] + np.arange(grid.n_boxes[b] + 1) * grid.spacing[b])
            coord_weights.append(np.ones(grid.n_boxes[b] + 1))
        else:
            local = (np.arange(grid.n_boxes[b])[:, None] + nodes[None, :]) * grid.spacing[b]
            coords.append((grid.lower[b] + local).ravel())
            coord_weights.append(np.tile(weights, grid.n_boxes[b]))

    mesh = np.meshgrid(*coords, indexing="ij")
    points = np.stack(mesh, axis=-1)
    normal = field.evaluate(t, points)[..., axis]

    w = coord_weights[0]
    for cw in coord_weights[1:]:
        w = np.multiply.outer(w, cw)

    plus = np.maximum(normal, 0.0) * w
    minus = np.maximum(-normal, 0.0) * w

    # sum the transverse quadrature nodes back into their faces
    shape = []
    sum_axes = []
    for b in range(grid.d):
        if b == axis:
            shape.append(grid.n_boxes[b] + 1)
        else:
            shape.extend([grid.n_boxes[b], q])
            sum_axes.append(len(shape) - 1)
    plus = plus.reshape(shape).sum(axis=tuple(sum_axes))
    minus = minus.reshape(shape).sum(axis=tuple(sum_axes))

    # face area over box volume
    return plus / grid.spacing[axis], minus / grid.spacing[axis]


def _face_pairs(grid: SpaceTimeGrid, axis: int):
    """
    Flat spatial indices of the boxes on either side of each face normal to ``axis``.

    Yields ``(face_selector, lower_boxes, upper_boxes)`` for interior (and periodic
    wrap) faces, where ``face_selector`` indexes the face arrays of :func:`_face_fluxes`.
    """
    n = grid.n_boxes[axis]
    index = np.arange(grid.n_space).reshape(grid.n_boxes)
    pairs = []
    if n > 1:
        faces = [slice(None)] * grid.d
        faces[axis] = slice(1, n)
        below = [slice(None)] * grid.d
        below[axis] = slice(0, n - 1)
        above = [slice(None)] * grid.d
        above[axis] = slice(1, n)
        pairs.append((tuple(faces), index[tuple(below)].ravel(), index[tuple(above)].ravel()))
    if grid.bc[axis] is BoundaryCondition.PERIODIC and n > 1:
        faces = [slice(None)] * grid.d
        faces[axis] = slice(n, n + 1)
        below = [slice(None)] * grid.d
        below[axis] = slice(n - 1, n)
        above = [slice(None)] * grid.d
        above[axis] = slice(0, 1)
        pairs.append((tuple(faces), index[tuple(below)].ravel(), index[tuple(above)].ravel()))
    return pairs


def _boundary_boxes(grid: SpaceTimeGrid, axis: int):
    """Faces and boxes on the lower and upper boundary along ``axis``."""
    n = grid.n_boxes[axis]
    index = np.arange(grid.n_space).reshape(grid.n_boxes)
    lower_face = [slice(None)] * grid.d
    lower_face[axis] = slice(0, 1)
    upper_face = [slice(None)] * grid.d
    upper_face[axis] = slice(n, n + 1)
    lower_box = [slice(None)] * grid.d
    lower_box[axis] = slice(0, 1)
    upper_box = [slice(None)] * grid.d
    upper_box[axis] = slice(n - 1, n)
    return (
        (tuple(lower_face), index[tuple(lower_box)].ravel()),
        (tuple(upper_face), index[tuple(upper_box)].ravel()),
    )


class _SlabRates:
    """Off-diagonal triplets and boundary losses of one spatial block."""

    def __init__(self, n_space: int):
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []
        self.loss = np.zeros(n_space)

    def add(self, rows, cols, vals):
        keep = (vals != 0) & (rows != cols)
        self.rows.append(rows[keep])
        self.cols.append(cols[keep])
        self.vals.append(vals[keep])

    def compile(self, n_space: int) -> sp.csr_matrix:
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, dtype=int)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, dtype=int)
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        off = sp.coo_matrix((vals, (rows, cols)), shape=(n_space, n_space)).tocsr()
        off.sum_duplicates()
        diag = -np.asarray(off.sum(axis=1)).ravel() - self.loss
        return (off + sp.diags(diag)).tocsr()


def _drift_fluxes(grid: SpaceTimeGrid, field: VelocityField, t: float, quadrature: Quadrature):
    return [_face_fluxes(grid, field, t, axis, quadrature) for axis in range(grid.d)]


def _add_drift(rates: _SlabRates, grid: SpaceTimeGrid, fluxes):
    for axis, (plus, minus) in enumerate(fluxes):
        for faces, below, above in _face_pairs(grid, axis):
            rates.add(below, above, plus[faces].ravel())
            rates.add(above, below, minus[faces].ravel())
        if grid.bc[axis] is BoundaryCondition.OUTFLOW:
            (lower_face, lower_boxes), (upper_face, upper_boxes) = _boundary_boxes(grid, axis)
            np.add.at(rates.loss, lower_boxes, minus[lower_face].ravel())
            np.add.at(rates.loss, upper_boxes, plus[upper_face].ravel())


def _add_diffusion(rates: _SlabRates, grid: SpaceTimeGrid, epsilon: float):
    for axis in range(grid.d):
        r = epsilon ** 2 / (2 * grid.spacing[axis] ** 2)
        for _, below, above in _face_pairs(grid, axis):
            rate = np.full(below.shape, r)
            rates.add(below, above, rate)
            rates.add(above, below, rate)
        if grid.bc[axis] is BoundaryCondition.OUTFLOW:
            (_, lower_boxes), (_, upper_boxes) = _boundary_boxes(grid, axis)
            np.add.at(rates.loss, lower_boxes, r)
            np.add.at(rates.loss, upper_boxes, r)


def _swap(fluxes):
    return [(minus, plus) for plus, minus in fluxes]


def _slab_fluxes(grid, field, quadrature, reuse_reflection, workers, slabs):
    """Drift face rates for the requested slabs, sampled at slab midpoints."""
    times = grid.slab_midpoints()
    if not reuse_reflection:
        computed = parallel_map(lambda s: _drift_fluxes(grid, field, times[s], quadrature), list(slabs), workers)
        return dict(zip(slabs, computed))

    # slab s and its mirror n - 1 - s see opposite fields, so their rates swap roles
    first_half = sorted({s if s < grid.n_half else grid.n_time - 1 - s for s in slabs})
    computed = dict(
        zip(first_half, parallel_map(lambda s: _drift_fluxes(grid, field, times[s], quadrature), first_half, workers))
    )
    return {s: computed[s] if s < grid.n_half else _swap(computed[grid.n_time - 1 - s]) for s in slabs}


def _spatial_blocks(
    grid: SpaceTimeGrid,
    field: Optional[ReflectedField],
    epsilon: float,
    quadrature: Quadrature,
    reuse_reflection: bool,
    workers: Optional[int],
    slabs: Sequence[int],
) -> List[sp.csr_matrix]:
    fluxes = _slab_fluxes(grid, field, quadrature, reuse_reflection, workers, slabs) if field is not None else {}

    def block(s):
        rates = _SlabRates(grid.n_space)
        if field is not None:
            _add_drift(rates, grid, fluxes[s])
        if epsilon > 0:
            _add_diffusion(rates, grid, epsilon)
        return rates.compile(grid.n_space)

    return parallel_map(block, list(slabs), workers)


def _validate_slab(grid: SpaceTimeGrid, slab: int):
    if not 0 <= slab < grid.n_time:
        raise GridError("slab {} out of range for {} slabs".format(slab, grid.n_time))


def assemble_drift(
    grid: SpaceTimeGrid,
    field: VelocityField,
    slab: Optional[int] = None,
    quadrature: Quadrature = Quadrature.MIDPOINT,
    reuse_reflection: bool = False,
    workers: Optional[int] = None,
) -> GeneratorMatrix:
    """
    Assemble the upwind drift rates of the reflected field.

    With ``slab`` given, return that slab's spatial block; otherwise return the
    block-diagonal matrix over all slabs (no time coupling).
    """
    field = _as_reflected(field, grid)
    _check_domain(field, grid)
    quadrature = Quadrature(quadrature)
    if slab is not None:
        _validate_slab(grid, slab)
        (block,) = _spatial_blocks(grid, field, 0.0, quadrature, reuse_reflection, workers, [slab])
        return GeneratorMatrix(block, grid, 0.0, GeneratorKind.SPATIAL_SLAB, slab=slab)
    blocks = _spatial_blocks(grid, field, 0.0, quadrature, reuse_reflection, workers, range(grid.n_time))
    return GeneratorMatrix(sp.block_diag(blocks, format="csr"), grid, 0.0, GeneratorKind.SPATIAL_SLAB)


def assemble_diffusion(grid: SpaceTimeGrid, epsilon: float, slab: Optional[int] = None) -> GeneratorMatrix:
    """
    Assemble the finite-difference Laplacian rates ``epsilon**2 / (2 delta**2)``.

    With ``slab`` given, return one spatial block; otherwise the block-diagonal
    matrix over all slabs.
    """
    if epsilon < 0:
        raise AssemblyError("epsilon must be nonnegative, got {}".format(epsilon))
    if epsilon > 0 and grid.d >= 2 and not grid.is_isotropic():
        raise AssemblyError("isotropic diffusion needs square boxes, spacing is {}".format(grid.spacing.tolist()))
    rates = _SlabRates(grid.n_space)
    if epsilon > 0:
        _add_diffusion(rates, grid, epsilon)
    block = rates.compile(grid.n_space)
    if slab is not None:
        _validate_slab(grid, slab)
        return GeneratorMatrix(block, grid, epsilon, GeneratorKind.SPATIAL_SLAB, slab=slab)
    full = sp.kron(sp.identity(grid.n_time, format="csr"), block, format="csr")
    return GeneratorMatrix(full, grid, epsilon, GeneratorKind.SPATIAL_SLAB)


def time_coupling(grid: SpaceTimeGrid) -> sp.csr_matrix:
    """Rate ``1/h`` from every box to the same box in the next slab, cyclically."""
    shift = sp.diags([np.ones(grid.n_time - 1), np.ones(1)], [1, -(grid.n_time - 1)], shape=(grid.n_time, grid.n_time))
    advance = (shift - sp.identity(grid.n_time)) / grid.h
    return sp.kron(advance, sp.identity(grid.n_space), format="csr")


def assemble_augmented(
    grid: SpaceTimeGrid,
    field: VelocityField,
    epsilon: float,
    quadrature: Quadrature = Quadrature.MIDPOINT,
    reuse_reflection: bool = False,
    workers: Optional[int] = None,
) -> GeneratorMatrix:
    """Assemble the full augmented generator: per-slab drift and diffusion plus cyclic slab advance."""
    if epsilon < 0:
        raise AssemblyError("epsilon must be nonnegative, got {}".format(epsilon))
    if epsilon > 0 and grid.d >= 2 and not grid.is_isotropic():
        raise AssemblyError("isotropic diffusion needs square boxes, spacing is {}".format(grid.spacing.tolist()))
    field = _as_reflected(field, grid)
    _check_domain(field, grid)
    quadrature = Quadrature(quadrature)

    blocks = _spatial_blocks(grid, field, epsilon, quadrature, reuse_reflection, workers, range(grid.n_time))
    matrix = (sp.block_diag(blocks, format="csr") + time_coupling(grid)).tocsr()
    matrix.sum_duplicates()
    generator = GeneratorMatrix(matrix, grid, epsilon, GeneratorKind.FULL_AUGMENTED)
    logger.debug("Assembled {} on {}".format(generator, grid))
    return generator


def slice_generator(aug: GeneratorMatrix, slab: int) -> GeneratorMatrix:
    """The spatial block of slab ``slab``, with the time-coupling rates removed."""
    if aug.kind is not GeneratorKind.FULL_AUGMENTED:
        raise AssemblyError("can only slice a full augmented generator, got {}".format(aug.kind.value))
    grid = aug.grid
    _validate_slab(grid, slab)
    lo, hi = slab * grid.n_space, (slab + 1) * grid.n_space
    block = aug.matrix[lo:hi, lo:hi] + sp.identity(grid.n_space) / grid.h
    block = sp.csr_matrix(block)
    block.eliminate_zeros()
    return GeneratorMatrix(block, grid, aug.epsilon, GeneratorKind.SPATIAL_SLAB, slab=slab)


def perturbation_generator(
    grid: SpaceTimeGrid,
    phi: VelocityField,
    quadrature: Quadrature = Quadrature.MIDPOINT,
    workers: Optional[int] = None,
    divergence_tolerance: float = 1e-6,
) -> GeneratorMatrix:
    """
    Drift-only generator of a perturbation field, reflected like the base field.

    A field not flagged divergence-free is sampled; a large divergence is logged, not raised.
    """
    if not phi.divergence_free:
        base = phi.base if isinstance(phi, ReflectedField) else phi
        worst = divergence_check(base)
        if worst > divergence_tolerance:
            logger.warning("Perturbation field has sampled divergence {:.3g}".format(worst))
    drift = assemble_drift(grid, phi, quadrature=quadrature, reuse_reflection=True, workers=workers)
    return GeneratorMatrix(drift.matrix, grid, 0.0, GeneratorKind.PERTURBATION_DRIFT)


def perturbation_generators(
    grid: SpaceTimeGrid,
    fields: Sequence[VelocityField],
    quadrature: Quadrature = Quadrature.MIDPOINT,
    workers: Optional[int] = None,
) -> List[GeneratorMatrix]:
    """Assemble one perturbation generator per field, in parallel over fields."""
    generators = parallel_map(lambda f: perturbation_generator(grid, f, quadrature=quadrature), list(fields), workers)
    logger.debug("Assembled {} perturbation generators".format(len(generators)))
    return generators
