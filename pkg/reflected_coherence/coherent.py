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
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from .exceptions import FamilyError, SEBAError
from .grid import BoundaryCondition, SpaceTimeGrid

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


def _real(vector: np.ndarray, what: str = "vector") -> np.ndarray:
    vector = np.asarray(vector)
    if np.iscomplexobj(vector):
        if np.max(np.abs(vector.imag), initial=0.0) > 1e-10 * max(np.max(np.abs(vector)), 1e-300):
            logger.warning("Taking the real part of a complex {}".format(what))
        vector = vector.real
    return np.asarray(vector, dtype=float)


def boundary_fiber(vector: np.ndarray, grid: SpaceTimeGrid, boundary: int) -> np.ndarray:
    """Value of an augmented vector at time ``boundary * h``: the mean of the two adjacent slab fibers."""
    fibers = grid.fibers(vector)
    return 0.5 * (fibers[(boundary - 1) % grid.n_time] + fibers[boundary % grid.n_time])


class BoxFamily:
    """
    A box-resolved family of sets ``A_t`` for ``t`` in ``[0, tau]``.

    ``masks[b]`` marks the spatial boxes in ``A_t`` at ``t = b h`` for
    ``b = 0 .. n_time / 2``.
    """

    def __init__(self, grid: SpaceTimeGrid, masks: np.ndarray):
        masks = np.array(masks, dtype=bool)
        if masks.shape != (grid.n_half + 1, grid.n_space):
            raise FamilyError(
                "family masks must have shape {}, got {}".format((grid.n_half + 1, grid.n_space), masks.shape)
            )
        if not masks[0].any():
            raise FamilyError("family is empty at t = 0")
        self.grid = grid
        self.masks = masks
        self.masks.setflags(write=False)

    def __repr__(self):
        return "BoxFamily(boxes at t=0: {}, at t=tau: {})".format(int(self.masks[0].sum()), int(self.masks[-1].sum()))

    @property
    def initial(self) -> np.ndarray:
        return self.masks[0]

    @property
    def final(self) -> np.ndarray:
        return self.masks[-1]

    def measure(self, boundary: int = 0) -> float:
        """Lebesgue measure of the set at time ``boundary * h``."""
        return float(self.masks[boundary].sum() * self.grid.box_volume)

    def mask_at(self, t: float) -> np.ndarray:
        boundary = int(np.clip(round(t / self.grid.h), 0, self.grid.n_half))
        return self.masks[boundary]

    def contains(self, t: float, x: np.ndarray) -> np.ndarray:
        """Whether points ``x`` (shape ``(N, d)``) lie in the set at time ``t``; points off the grid do not."""
        x = np.asarray(x, dtype=float)
        inside = self.grid.inside(x)
        result = np.zeros(len(x), dtype=bool)
        if inside.any():
            boxes = self.grid.spatial_index(x[inside])
            result[inside] = self.mask_at(t)[boxes]
        return result

    def as_dataframe(self) -> pd.DataFrame:
        boundaries, boxes = np.nonzero(self.masks)
        return pd.DataFrame(dict(boundary=boundaries, time=boundaries * self.grid.h, box=boxes))


def _level_mask(fiber: np.ndarray, sign: int) -> np.ndarray:
    # zeros go to the positive side so the two signs partition the boxes
    return fiber >= 0 if sign == 1 else fiber < 0


def level_set_family(eigvec: np.ndarray, grid: SpaceTimeGrid, sign: int = 1) -> BoxFamily:
    """The family ``{f(t, .) >= 0}`` (``sign=1``) or its complement ``{f(t, .) < 0}`` at every slab boundary in ``[0, tau]``."""
    if sign not in (1, -1):
        raise FamilyError("sign must be +1 or -1")
    f = _real(eigvec, "eigenvector")
    masks = np.stack([_level_mask(boundary_fiber(f, grid, b), sign) for b in range(grid.n_half + 1)])
    return BoxFamily(grid, masks)


def superlevel_family(vector: np.ndarray, grid: SpaceTimeGrid, level: float = 0.4) -> BoxFamily:
    """The family ``{phi(t, .) > level}``, for max-normalized sparse vectors."""
    phi = _real(vector)
    masks = np.stack([boundary_fiber(phi, grid, b) > level for b in range(grid.n_half + 1)])
    return BoxFamily(grid, masks)


@dataclass
class SparseBasis:
    """Sparse vectors spanning (approximately) the same space as a set of eigenvectors."""

    vectors: np.ndarray
    rotation: np.ndarray
    thresholds: np.ndarray
    iterations: int
    converged: bool

    def __len__(self):
        return self.vectors.shape[1]

    def principal_angle(self, inputs: np.ndarray) -> float:
        """Largest principal angle between the span of ``inputs`` and the span of the sparse vectors."""
        return float(np.max(scipy.linalg.subspace_angles(_real(inputs), self.vectors)))


def _soft_threshold(Z: np.ndarray, base: float) -> Tuple[np.ndarray, np.ndarray]:
    mu = np.minimum(base, 0.99 * np.max(np.abs(Z), axis=0))
    return np.sign(Z) * np.maximum(np.abs(Z) - mu[None, :], 0.0), mu


def _max_normalize(S: np.ndarray) -> np.ndarray:
    peaks = np.max(np.abs(S), axis=0)
    peaks[peaks == 0] = 1.0
    return S / peaks[None, :]


def seba(vectors: np.ndarray, max_iter: int = 5000, tol: float = 1e-12, threshold: Optional[float] = None) -> SparseBasis:
    """
    Sparse eigenbasis approximation.

    Alternates a soft threshold of the rotated basis with an orthogonal
    Procrustes update of the rotation until the rotation stops changing.
    Output columns have nonnegative sums and unit maximum.
    """
    V = _real(np.atleast_2d(np.asarray(vectors).T).T, "input basis")
    if V.ndim != 2 or V.shape[1] < 1:
        raise SEBAError("need at least one input vector")
    p, r = V.shape
    if np.linalg.matrix_rank(V) < r:
        raise SEBAError("input vectors are linearly dependent")

    V, _ = np.linalg.qr(V)
    base = 0.99 / math.sqrt(p) if threshold is None else float(threshold)
    R = np.eye(r)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        S, mu = _soft_threshold(V @ R.T, base)
        S = _max_normalize(S)
        U, _, Wt = np.linalg.svd(S.T @ V)
        R_new = U @ Wt
        change = np.linalg.norm(R_new - R)
        R = R_new
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("SEBA did not converge in {} iterations; returning the last iterate".format(max_iter))

    S, mu = _soft_threshold(V @ R.T, base)
    signs = np.where(S.sum(axis=0) < 0, -1.0, 1.0)
    S = _max_normalize(S * signs[None, :])
    logger.debug("SEBA finished after {} iterations".format(iterations))
    return SparseBasis(vectors=S, rotation=R, thresholds=mu, iterations=iterations, converged=converged)


def combination_coefficients(sparse_vectors: np.ndarray, eigvecs: np.ndarray) -> np.ndarray:
    """Least-squares coefficients ``alpha`` with ``eigvecs @ alpha[:, j] ~ sparse_vectors[:, j]``."""
    alphas, *_ = np.linalg.lstsq(_real(eigvecs), _real(sparse_vectors), rcond=None)
    return alphas


@dataclass(frozen=True)
class ContributionCheck:
    alphas: np.ndarray
    contributions: np.ndarray
    zeroed: List[int]


def contribution_check(alphas: np.ndarray, eigvecs: np.ndarray, family: BoxFamily) -> ContributionCheck:
    """
    Zero every coefficient whose mode contributes negative mass on the final set.

    The contribution of mode ``i`` is ``alpha_i`` times the integral of
    ``f_i(tau, .)`` over ``A_tau``.
    """
    grid = family.grid
    alphas = np.asarray(alphas, dtype=float).ravel()
    F = _real(eigvecs)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[1] != len(alphas):
        raise FamilyError("{} coefficients for {} eigenvectors".format(len(alphas), F.shape[1]))
    final = family.final
    contributions = np.array(
        [alphas[i] * boundary_fiber(F[:, i], grid, grid.n_half)[final].sum() * grid.box_volume for i in range(len(alphas))]
    )
    zeroed = [int(i) for i in np.flatnonzero(contributions < 0)]
    adjusted = alphas.copy()
    adjusted[zeroed] = 0.0
    if zeroed:
        logger.debug("Zeroed coefficients {} with contributions {}".format(zeroed, contributions[zeroed].tolist()))
    return ContributionCheck(alphas=adjusted, contributions=contributions, zeroed=zeroed)


@dataclass(frozen=True)
class CoherenceBound:
    """``exp(mu tau) / (sup |f(0)| |A_0|)``; ``heuristic`` marks runs with outflow boundaries."""

    value: float
    mu: float
    sup_norm: float
    measure: float
    scale: float
    heuristic: bool


def coherence_bound(mu: complex, eigvec: np.ndarray, grid: SpaceTimeGrid, sign: int = 1) -> CoherenceBound:
    """
    Lower bound on the coherence ratio of the level-set family of an eigenvector.

    The vector is first rescaled so its fiber at ``t = tau`` has L1 norm 2.
    """
    mu = complex(mu)
    if abs(mu.imag) > 1e-8 * max(1.0, abs(mu)):
        raise FamilyError("the bound needs a real eigenvalue, got {}".format(mu))
    mu = mu.real
    if mu >= 0:
        raise FamilyError("the bound needs a negative eigenvalue, got {}".format(mu))
    if sign not in (1, -1):
        raise FamilyError("sign must be +1 or -1")

    f = _real(eigvec, "eigenvector")
    l1 = np.abs(boundary_fiber(f, grid, grid.n_half)).sum() * grid.box_volume
    if l1 == 0:
        raise FamilyError("eigenvector vanishes at t = tau")
    scale = 2.0 / l1
    initial = scale * boundary_fiber(f, grid, 0)
    measure = float(np.count_nonzero(_level_mask(initial, sign)) * grid.box_volume)
    if measure == 0:
        raise FamilyError("the initial set has zero measure")
    sup_norm = float(np.max(np.abs(initial)))
    value = math.exp(mu * grid.tau) / (sup_norm * measure)
    heuristic = any(b is BoundaryCondition.OUTFLOW for b in grid.bc)
    return CoherenceBound(value=value, mu=mu, sup_norm=sup_norm, measure=measure, scale=scale, heuristic=heuristic)
