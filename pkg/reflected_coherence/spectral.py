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
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    ConvergenceError,
    FactorizationError,
    MultiplicityError,
    SpectrumError,
    TrackingError,
)
from .generator import GeneratorMatrix
from .grid import SpaceTimeGrid, is_close_to_multiple

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

# eigenpairs whose imaginary part is below this (relative to |mu|, floored at 1) count as real
REAL_TOLERANCE = 1e-8


class Ordering(enum.Enum):
    SMALLEST_MAGNITUDE = "smallest-magnitude"
    LARGEST_REAL = "largest-real"


@dataclass(frozen=True)
class SolverSettings:
    """Shift-invert Arnoldi parameters, recorded in run manifests."""

    ncv: Optional[int] = None
    tol: float = 1e-10
    maxiter: int = 50
    shift_scale: float = 1e-3
    max_shift_doublings: int = 8
    residual_tol: float = 1e-6

    def subspace_size(self, k: int, n: int) -> int:
        ncv = self.ncv if self.ncv is not None else max(4 * k, 40)
        return int(min(max(ncv, 2 * k + 1), n))


class SpectrumResult:
    """
    Eigenpairs of a generator.

    ``right_vectors`` (and ``left_vectors``, when present) hold one column per
    eigenvalue, indexed like the generator's flat space-time index.
    """

    def __init__(
        self,
        eigenvalues,
        right_vectors,
        residual_norms,
        shift: complex,
        ordering: Ordering,
        grid: Optional[SpaceTimeGrid] = None,
        left_vectors=None,
    ):
        self.eigenvalues = np.asarray(eigenvalues, dtype=complex)
        self.right_vectors = np.asarray(right_vectors, dtype=complex)
        self.left_vectors = None if left_vectors is None else np.asarray(left_vectors, dtype=complex)
        self.residual_norms = np.asarray(residual_norms, dtype=float)
        self.shift = complex(shift)
        self.ordering = ordering
        self.grid = grid

        for array in (self.eigenvalues, self.right_vectors, self.residual_norms):
            array.setflags(write=False)
        if self.left_vectors is not None:
            self.left_vectors.setflags(write=False)

    def __len__(self):
        return len(self.eigenvalues)

    def __repr__(self):
        return "SpectrumResult({})".format(", ".join("{:.5g}".format(mu) for mu in self.eigenvalues))

    def is_real(self, index: int) -> bool:
        mu = self.eigenvalues[index]
        return abs(mu.imag) <= REAL_TOLERANCE * max(1.0, abs(mu))

    def singular_values(self, tau: float) -> np.ndarray:
        return np.array([to_singular_value(mu, tau) for mu in self.eigenvalues])

    def as_dataframe(self, tau: float, companions: Optional[Dict[int, "Companion"]] = None) -> pd.DataFrame:
        """One row per eigenpair; companion modes report their parent and lattice index instead of sigma."""
        companions = companions or {}
        rows = []
        for idx, mu in enumerate(self.eigenvalues):
            companion = companions.get(idx)
            rows.append(
                dict(
                    index=idx + 1,
                    re=mu.real,
                    im=mu.imag,
                    sigma=np.nan if companion is not None else to_singular_value(mu, tau),
                    residual=self.residual_norms[idx],
                    companion_of=companion.parent + 1 if companion is not None else pd.NA,
                    companion_k=companion.k if companion is not None else pd.NA,
                )
            )
        return pd.DataFrame(rows, columns=["index", "re", "im", "sigma", "residual", "companion_of", "companion_k"])


@dataclass(frozen=True)
class Companion:
    index: int
    parent: int
    k: int
    distance: float
    correlation: Optional[float]


def _sort_order(eigenvalues: np.ndarray, ordering: Ordering) -> np.ndarray:
    # rounding keeps conjugate pairs adjacent, positive imaginary part first
    if ordering is Ordering.SMALLEST_MAGNITUDE:
        return np.lexsort((-eigenvalues.imag, np.round(np.abs(eigenvalues), 10)))
    return np.lexsort((-eigenvalues.imag, -np.round(eigenvalues.real, 10)))


def _fix_phase(vector: np.ndarray, mu: complex, n_space: int) -> np.ndarray:
    """Unit Euclidean norm, largest fiber-0 entry real positive, and real modes with nonnegative fiber-0 mean."""
    vector = vector / np.linalg.norm(vector)
    fiber = vector[:n_space]
    if np.max(np.abs(fiber)) <= 1e-14:
        fiber = vector
    anchor = fiber[np.argmax(np.abs(fiber))]
    vector = vector * (np.conj(anchor) / abs(anchor))
    if abs(mu.imag) <= REAL_TOLERANCE * max(1.0, abs(mu)):
        vector = vector.real.astype(complex)
        mean = vector[:n_space].real.mean()
        if mean < -1e-12 * np.max(np.abs(vector[:n_space])):
            vector = -vector
    return vector


def _residuals(matrix, eigenvalues: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    applied = matrix @ vectors
    return np.linalg.norm(applied - vectors * eigenvalues[None, :], axis=0) / np.linalg.norm(vectors, axis=0)


def default_shift(G: Union[GeneratorMatrix, sp.spmatrix], scale: float = 1e-3) -> float:
    """The real shift ``-gamma`` with ``gamma = scale * max |diagonal|``."""
    matrix = G.matrix if isinstance(G, GeneratorMatrix) else G
    gamma = scale * float(np.max(np.abs(matrix.diagonal()))) if matrix.shape[0] else scale
    return -(gamma if gamma > 0 else scale)


def _factor(matrix: sp.spmatrix, shift: complex, settings: SolverSettings, explicit: bool):
    """Factor ``matrix - shift I``; a failing default shift is pushed further left, doubling each time."""
    n = matrix.shape[0]
    identity = sp.identity(n, dtype=complex, format="csc")
    for attempt in range(settings.max_shift_doublings + 1):
        try:
            lu = spla.splu((matrix - shift * identity).tocsc())
            return lu, shift
        except RuntimeError as e:
            if explicit:
                raise FactorizationError("LU factorization failed at shift {}: {}".format(shift, e))
            logger.warning("LU factorization failed at shift {}, doubling".format(shift))
            shift = 2 * shift
    raise FactorizationError("LU factorization failed on every shift down to {}".format(shift))


def _dense_spectrum(matrix, k: int):
    eigenvalues, vectors = scipy.linalg.eig(matrix.toarray())
    return eigenvalues, vectors


def leading_spectrum(
    G: Union[GeneratorMatrix, sp.spmatrix],
    k: int,
    ordering: Union[str, Ordering] = Ordering.SMALLEST_MAGNITUDE,
    shift: Optional[complex] = None,
    settings: SolverSettings = SolverSettings(),
    grid: Optional[SpaceTimeGrid] = None,
) -> SpectrumResult:
    """
    Compute ``k`` eigenpairs by shift-invert Arnoldi.

    ``G - shift I`` is factored once with SuperLU and ARPACK runs on the inverse
    action; eigenvalues are back-transformed and residuals checked against ``G``
    itself. Small problems (``k > n - 2``) go to a dense eigensolver instead.
    """
    ordering = Ordering(ordering)
    if isinstance(G, GeneratorMatrix):
        matrix, grid = G.matrix, G.grid
    else:
        matrix = sp.csr_matrix(G)
    n = matrix.shape[0]
    if matrix.shape[0] != matrix.shape[1]:
        raise SpectrumError("generator must be square, got shape {}".format(matrix.shape))
    if not 1 <= k <= n:
        raise SpectrumError("cannot compute {} eigenpairs of a {}-dimensional matrix".format(k, n))

    explicit = shift is not None
    shift = complex(shift) if explicit else complex(default_shift(matrix, settings.shift_scale))
    n_space = grid.n_space if grid is not None else n
    matrix = matrix.astype(complex)

    # largest-real is found by over-requesting around the shift and re-sorting
    n_request = k if ordering is Ordering.SMALLEST_MAGNITUDE else min(2 * k + 2, n)

    if n_request > n - 2:
        eigenvalues, vectors = _dense_spectrum(matrix, k)
        logger.debug("Dense eigensolve of dimension {}".format(n))
    else:
        lu, shift = _factor(matrix, shift, settings, explicit)
        inverse = spla.LinearOperator((n, n), matvec=lu.solve, dtype=complex)
        v0 = np.random.default_rng(0).standard_normal(n).astype(complex)
        try:
            eigenvalues, vectors = spla.eigs(
                matrix,
                k=n_request,
                sigma=shift,
                OPinv=inverse,
                which="LM",
                v0=v0,
                ncv=settings.subspace_size(n_request, n),
                tol=settings.tol,
                maxiter=settings.maxiter,
            )
        except spla.ArpackNoConvergence as e:
            raise ConvergenceError(
                "Arnoldi found only {} of {} eigenpairs".format(len(e.eigenvalues), n_request)
            )
        logger.debug(
            "Shift-invert Arnoldi: dimension {}, shift {:.4g}, {} pairs".format(n, shift, n_request)
        )

    order = _sort_order(eigenvalues, ordering)[:k]
    eigenvalues = eigenvalues[order]
    vectors = np.column_stack([_fix_phase(vectors[:, i], eigenvalues[j], n_space) for j, i in enumerate(order)])
    eigenvalues = np.array(
        [mu.real + 0j if abs(mu.imag) <= REAL_TOLERANCE * max(1.0, abs(mu)) else mu for mu in eigenvalues]
    )

    residuals = _residuals(matrix, eigenvalues, vectors)
    scale = max(1.0, float(np.max(np.abs(matrix.diagonal()))))
    bad = np.flatnonzero(residuals > settings.residual_tol * scale)
    if bad.size:
        raise ConvergenceError(
            "eigenpairs {} have residuals {} above {:.2g}".format(
                (bad + 1).tolist(), residuals[bad].tolist(), settings.residual_tol * scale
            )
        )

    return SpectrumResult(eigenvalues, vectors, residuals, shift, ordering, grid=grid)


def _pairing_weight(grid: Optional[SpaceTimeGrid]) -> float:
    return grid.cell_measure if grid is not None else 1.0


def pairing(a: np.ndarray, b: np.ndarray, grid: Optional[SpaceTimeGrid] = None) -> complex:
    """The volume-weighted discrete L2 pairing ``<a, b> = sum conj(a) b dm``."""
    return complex(np.vdot(a, b) * _pairing_weight(grid))


def left_right_pairs(
    G: GeneratorMatrix,
    k: int,
    indices: Optional[Sequence[int]] = None,
    right: Optional[SpectrumResult] = None,
    settings: SolverSettings = SolverSettings(),
    gap_tol: float = 1e-8,
) -> SpectrumResult:
    """
    Right and left eigenvectors, biorthonormalized so ``<f, f> = 1`` and ``<g, f> = 1``.

    Left vectors come from the transpose at the same shift and are matched to
    the right pairs by eigenvalue. With ``indices`` only those pairs are returned.
    """
    grid = G.grid if isinstance(G, GeneratorMatrix) else None
    matrix = G.matrix if isinstance(G, GeneratorMatrix) else sp.csr_matrix(G)
    if right is None:
        right = leading_spectrum(G, k, settings=settings)
    indices = list(range(len(right))) if indices is None else [int(i) for i in indices]

    scale = max(1.0, float(np.max(np.abs(matrix.diagonal()))))
    for i in indices:
        mu = right.eigenvalues[i]
        others = np.delete(right.eigenvalues, i)
        close = others[np.abs(others - mu) <= gap_tol * max(1.0, abs(mu))]
        if close.size:
            raise MultiplicityError(
                "eigenvalue {:.6g} is not simple".format(mu), cluster=[mu, *close.tolist()]
            )

    n = matrix.shape[0]
    n_left = min(len(right) + 2, n)
    left = leading_spectrum(matrix.T.tocsr(), n_left, ordering=right.ordering, shift=right.shift, settings=settings)

    weight = _pairing_weight(grid)
    eigenvalues, rights, lefts, residuals = [], [], [], []
    for i in indices:
        mu = right.eigenvalues[i]
        j = int(np.argmin(np.abs(left.eigenvalues - mu)))
        if abs(left.eigenvalues[j] - mu) > 1e-6 * scale:
            raise SpectrumError("no left eigenvector matches eigenvalue {:.6g}".format(mu))
        f = right.right_vectors[:, i]
        f = f / math.sqrt(weight * np.vdot(f, f).real)
        g = np.conj(left.right_vectors[:, j])
        overlap = weight * np.vdot(g, f)
        if abs(overlap) <= 1e-14:
            raise SpectrumError("left and right eigenvectors of {:.6g} are orthogonal".format(mu))
        g = g / np.conj(overlap)
        eigenvalues.append(mu)
        rights.append(f)
        lefts.append(g)
        residuals.append(right.residual_norms[i])

    return SpectrumResult(
        eigenvalues,
        np.column_stack(rights),
        residuals,
        right.shift,
        right.ordering,
        grid=grid,
        left_vectors=np.column_stack(lefts),
    )


def to_singular_value(mu: complex, tau: float) -> float:
    """``sigma = exp(tau Re mu) cos(tau Im mu)``, the square-root branch of ``exp(2 tau mu) = sigma**2``."""
    mu = complex(mu)
    return math.exp(tau * mu.real) * math.cos(tau * mu.imag)


def companion_shift(k: int, h: float, tau: float) -> complex:
    """The lattice shift ``(1 - omega**k) / h`` with ``omega = exp(2 pi i h / (2 tau))``."""
    if not is_close_to_multiple(2 * tau, h):
        raise SpectrumError("slab width {} does not divide 2 tau = {}".format(h, 2 * tau))
    n_time = int(round(2 * tau / h))
    k = int(k) % n_time
    omega = np.exp(2j * np.pi * h / (2 * tau))
    return complex((1 - omega ** k) / h)


def time_phase(k: int, grid: SpaceTimeGrid) -> np.ndarray:
    """The slab-wise multiplier ``omega**(k s)``, repeated over each fiber."""
    omega = np.exp(2j * np.pi / grid.n_time)
    return np.repeat(omega ** (k * np.arange(grid.n_time)), grid.n_space)


def companion_correlation(w_m: np.ndarray, w_n: np.ndarray, k: int, grid: SpaceTimeGrid) -> complex:
    """
    ``<psi_k w_m, w_n> / (|psi_k w_m| |w_n|)``.

    Companion eigenvectors of ``mu`` at ``mu - mu^(k)`` are ``psi_k`` times the
    parent, so their correlation with the parent has magnitude close to one.
    """
    w_m = np.asarray(w_m)
    w_n = np.asarray(w_n)
    if w_m.shape != w_n.shape or w_m.shape[0] != grid.dimension:
        raise SpectrumError("vectors must both live on the grid")
    shifted = time_phase(k, grid) * w_m
    norm = np.linalg.norm(shifted) * np.linalg.norm(w_n)
    if norm == 0:
        raise SpectrumError("cannot correlate a zero vector")
    return complex(np.vdot(shifted, w_n) / norm)


def classify_companions(
    result: SpectrumResult,
    tau: float,
    h: float,
    grid: Optional[SpaceTimeGrid] = None,
    tol: float = 5e-3,
    max_k: int = 3,
    min_correlation: float = 0.5,
) -> Dict[int, Companion]:
    """
    Find complex eigenvalues that sit at ``mu - mu^(k)`` for a real eigenvalue ``mu`` of the same spectrum.

    When a grid is available the eigenvector correlation must also reach ``min_correlation``.
    """
    grid = grid if grid is not None else result.grid
    shifts = {k: companion_shift(k, h, tau) for k in range(-max_k, max_k + 1) if k != 0}
    parents = [i for i in range(len(result)) if result.is_real(i)]
    companions = {}
    for j in range(len(result)):
        if result.is_real(j):
            continue
        best = None
        for i in parents:
            for k, shift in shifts.items():
                distance = abs(result.eigenvalues[j] - (result.eigenvalues[i] - shift))
                if distance > tol:
                    continue
                correlation = None
                if grid is not None:
                    correlation = abs(
                        companion_correlation(result.right_vectors[:, i], result.right_vectors[:, j], k, grid)
                    )
                    if correlation < min_correlation:
                        continue
                if best is None or distance < best.distance:
                    best = Companion(j, i, k, distance, correlation)
        if best is not None:
            companions[j] = best
            logger.debug(
                "Eigenvalue {} ({:.5g}) is the k={} companion of eigenvalue {}".format(j + 1, result.eigenvalues[j], best.k, best.parent + 1)
            )
    return companions


def track_eigenpair(reference: np.ndarray, spectrum: SpectrumResult, threshold: float = 0.5) -> Tuple[int, float]:
    """Return ``(index, correlation)`` of the eigenvector best aligned with ``reference``."""
    if len(spectrum) == 0:
        raise TrackingError("cannot track into an empty spectrum")
    reference = np.asarray(reference)
    if np.linalg.norm(reference) == 0:
        raise TrackingError("reference vector is zero", correlation=0.0)
    vectors = spectrum.right_vectors
    norms = np.linalg.norm(vectors, axis=0) * np.linalg.norm(reference)
    correlations = np.abs(vectors.conj().T @ reference) / norms
    index = int(np.argmax(correlations))
    best = float(correlations[index])
    if best < threshold:
        raise TrackingError(
            "best eigenvector correlation {:.3g} is below {:.3g}".format(best, threshold), correlation=best
        )
    return index, best
