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
Optimal velocity perturbations.

A perturbation is a coefficient vector over a dictionary of divergence-free
sine-mode fields. Each step maximizes (or minimizes) the linearized change
of an objective over the energy ellipsoid ``u^T B u <= R^2``, which has the
closed-form Lagrange solution implemented in :func:`solve_step`.
"""

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg

from .exceptions import ConstraintError, DictionaryError, KKTError, OptimizationError, StationaryError
from .generator import GeneratorMatrix, Quadrature, assemble_augmented, perturbation_generators
from .grid import SpaceTimeGrid
from .spectral import SolverSettings, leading_spectrum, left_right_pairs, pairing, track_eigenpair
from .utils import format_complex
from .velocity import FunctionField, Streamfunction, VelocityField

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

TEMPORAL_MODES = (-1, 0, 2)


class SineModeStreamfunction(Streamfunction):
    """
    ``Psi = sin(k pi (x - a_x - c_x t) / L_x) sin(l pi (y - a_y - c_y t) / L_y)``.

    The induced field has ``k`` gyres across and ``l`` gyres up, is divergence
    free, and (for zero speeds) has no normal component on the rectangle's edges.
    """

    def __init__(self, k: int, l: int, bounds, speeds: Sequence[float] = (0.0, 0.0)):
        (ax, bx), (ay, by) = bounds
        self.k = int(k)
        self.l = int(l)
        self.origin = (float(ax), float(ay))
        self.wavenumbers = (self.k * math.pi / (bx - ax), self.l * math.pi / (by - ay))
        self.speeds = (float(speeds[0]), float(speeds[1]))

    def _phases(self, t, x, y):
        t = np.asarray(t, dtype=float)
        return (
            self.wavenumbers[0] * (x - self.origin[0] - self.speeds[0] * t),
            self.wavenumbers[1] * (y - self.origin[1] - self.speeds[1] * t),
        )

    def psi(self, t, x, y):
        px, py = self._phases(t, x, y)
        return np.sin(px) * np.sin(py)

    def dpsi_dx(self, t, x, y):
        px, py = self._phases(t, x, y)
        return self.wavenumbers[0] * np.cos(px) * np.sin(py)

    def dpsi_dy(self, t, x, y):
        px, py = self._phases(t, x, y)
        return self.wavenumbers[1] * np.sin(px) * np.cos(py)


def temporal_modulation(r: int, tau: float) -> Callable:
    """``t / tau`` for ``r = -1``, otherwise ``sin(2 pi t / tau) ** r``."""
    r = int(r)
    if r == -1:
        return lambda t: np.asarray(t, dtype=float) / tau
    if r < -1:
        raise DictionaryError("temporal index must be -1 or nonnegative, got {}".format(r))
    return lambda t: np.sin(2 * np.pi * np.asarray(t, dtype=float) / tau) ** r


@dataclass(frozen=True)
class DictionaryEntry:
    k: int
    l: int
    r: int
    speeds: Tuple[float, float]
    norm: float

    @property
    def label(self) -> str:
        return "k={} l={} r={}".format(self.k, self.l, self.r)


def _gauss(lo: float, hi: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1), half * weights


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Legendre nodes over ``(0, tau) x X``."""

    times: np.ndarray
    time_weights: np.ndarray
    points: np.ndarray
    space_weights: np.ndarray

    @classmethod
    def build(cls, bounds, tau: float, n_time: int, n_x: int, n_y: int) -> "QuadratureRule":
        times, time_weights = _gauss(0.0, tau, n_time)
        (ax, bx), (ay, by) = bounds
        xs, wx = _gauss(ax, bx, n_x)
        ys, wy = _gauss(ay, by, n_y)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        points = np.stack([X.ravel(), Y.ravel()], axis=-1)
        return cls(times, time_weights, points, np.outer(wx, wy).ravel())


class PerturbationDictionary:
    """
    Normalized perturbation fields ``phi_r(t) psi_kl(t, x) / N`` on ``[0, tau] x X``.

    Every entry has unit space-time L2 norm.
    """

    def __init__(self, entries: Sequence[DictionaryEntry], bounds, tau: float, periodic=(False, False)):
        if not entries:
            raise DictionaryError("dictionary has no entries")
        self.entries = list(entries)
        self.bounds = np.asarray(bounds, dtype=float).reshape(2, 2)
        self.tau = float(tau)
        self.periodic = tuple(bool(p) for p in periodic)
        self._modes = [SineModeStreamfunction(e.k, e.l, self.bounds, e.speeds) for e in self.entries]
        self._modulations = [temporal_modulation(e.r, self.tau) for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def __repr__(self):
        return "PerturbationDictionary({} entries, tau={})".format(len(self), self.tau)

    def raw_velocity(self, i: int, t, x) -> np.ndarray:
        """The unnormalized field of entry ``i``."""
        x = np.asarray(x, dtype=float)
        u, v = self._modes[i].velocity(t, x[..., 0], x[..., 1])
        amplitude = np.asarray(self._modulations[i](t))[..., None]
        return amplitude * np.stack(np.broadcast_arrays(u, v), axis=-1)

    def velocity(self, i: int, t, x) -> np.ndarray:
        return self.raw_velocity(i, t, x) / self.entries[i].norm

    def _metadata(self):
        return dict(dimension=2, tau=self.tau, bounds=self.bounds, periodic=self.periodic, divergence_free=True)

    def field(self, i: int) -> VelocityField:
        return FunctionField(lambda t, x: self.velocity(i, t, x), **self._metadata())

    def fields(self) -> List[VelocityField]:
        return [self.field(i) for i in range(len(self))]

    def combination(self, coefficients: Sequence[float]) -> VelocityField:
        """The field ``sum_i coefficients[i] phi_i``."""
        coefficients = self.check_coefficients(coefficients)
        active = np.flatnonzero(coefficients)

        def evaluate(t, x):
            x = np.asarray(x, dtype=float)
            total = np.zeros(np.broadcast_shapes(np.shape(t) + (1,), x.shape))
            for i in active:
                total = total + coefficients[i] * self.velocity(i, t, x)
            return total

        return FunctionField(evaluate, **self._metadata())

    def streamfunction(self, coefficients: Sequence[float], t: float, x, y) -> np.ndarray:
        """Streamfunction ``sum_i c_i phi_r(t) Psi_kl(t, x, y) / N_i`` of a combination."""
        coefficients = self.check_coefficients(coefficients)
        total = 0.0
        for i in np.flatnonzero(coefficients):
            total = total + coefficients[i] * self._modulations[i](t) * self._modes[i].psi(t, x, y) / self.entries[i].norm
        return np.broadcast_to(total, np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

    def check_coefficients(self, coefficients) -> np.ndarray:
        coefficients = np.asarray(coefficients, dtype=float).ravel()
        if len(coefficients) != len(self):
            raise OptimizationError("{} coefficients for a {}-entry dictionary".format(len(coefficients), len(self)))
        return coefficients

    def default_rule(self) -> QuadratureRule:
        k_max = max(e.k for e in self.entries)
        l_max = max(e.l for e in self.entries)
        return QuadratureRule.build(
            self.bounds, self.tau, n_time=48, n_x=max(32, 4 * k_max + 24), n_y=max(32, 4 * l_max + 24)
        )

    def as_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(
            [dict(index=i, k=e.k, l=e.l, r=e.r, c_x=e.speeds[0], c_y=e.speeds[1], norm=e.norm) for i, e in enumerate(self.entries)]
        )


def _sample(dictionary: PerturbationDictionary, t: float, points: np.ndarray, axis: Optional[int], step: float) -> np.ndarray:
    """Raw entry values (or their ``axis`` derivative) at ``points``, flattened to ``(N, 2 P)``."""
    rows = []
    for i in range(len(dictionary)):
        if axis is None:
            values = dictionary.raw_velocity(i, t, points)
        else:
            offset = np.zeros(2)
            offset[axis] = step
            values = (dictionary.raw_velocity(i, t, points + offset) - dictionary.raw_velocity(i, t, points - offset)) / (2 * step)
        rows.append(values.ravel())
    return np.array(rows)


def _raw_products(
    dictionary: PerturbationDictionary, rule: QuadratureRule, axis: Optional[int] = None, step: float = 1e-5
) -> np.ndarray:
    weights = np.repeat(rule.space_weights, 2)
    products = np.zeros((len(dictionary), len(dictionary)))
    for t, w in zip(rule.times, rule.time_weights):
        F = _sample(dictionary, t, rule.points, axis, step)
        products += w * (F * weights) @ F.T
    return products


def build_dictionary(
    k_values: Sequence[int],
    l_values: Sequence[int],
    bounds,
    tau: float,
    r_values: Sequence[int] = TEMPORAL_MODES,
    speeds: Sequence[float] = (0.0, 0.0),
    periodic: Sequence[bool] = (False, False),
) -> PerturbationDictionary:
    """
    Enumerate the Cartesian product of spatial modes ``(k, l)`` and temporal indices ``r``.

    Entries are ordered ``k`` slowest, then ``l``, then ``r``, and normalized to
    unit L2 norm over ``(0, tau) x X`` by Gauss-Legendre quadrature.
    """
    k_values = [int(k) for k in k_values]
    l_values = [int(l) for l in l_values]
    r_values = [int(r) for r in r_values]
    if not k_values or not l_values or not r_values:
        raise DictionaryError("mode ranges must be nonempty")
    if min(k_values) < 1 or min(l_values) < 1:
        raise DictionaryError("mode indices must be at least 1")
    if periodic[0] and any(k % 2 for k in k_values):
        raise DictionaryError("a periodic x axis needs even k, got {}".format(k_values))
    if periodic[1] and any(l % 2 for l in l_values):
        raise DictionaryError("a periodic y axis needs even l, got {}".format(l_values))
    speeds = (float(speeds[0]), float(speeds[1]))

    entries = [DictionaryEntry(k, l, r, speeds, 1.0) for k, l, r in itertools.product(k_values, l_values, r_values)]
    unit = PerturbationDictionary(entries, bounds, tau, periodic)
    norms = np.sqrt(np.diag(_raw_products(unit, unit.default_rule())))
    if np.any(norms <= 0):
        raise DictionaryError("an entry vanishes identically")
    entries = [DictionaryEntry(e.k, e.l, e.r, e.speeds, float(n)) for e, n in zip(entries, norms)]
    logger.debug("Built a dictionary of {} entries".format(len(entries)))
    return PerturbationDictionary(entries, bounds, tau, periodic)


class ConstraintForm:
    """The energy ellipsoid ``u^T B u <= R^2`` over dictionary coefficients."""

    def __init__(self, matrix: np.ndarray, omega: Sequence[float] = (1.0,), order: int = 0, radius: float = 1.0):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConstraintError("Gram matrix must be square, got shape {}".format(matrix.shape))
        scale = max(float(np.max(np.abs(matrix))), 1e-300)
        if np.max(np.abs(matrix - matrix.T)) > 1e-12 * scale:
            raise ConstraintError("Gram matrix is not symmetric")
        if radius <= 0:
            raise ConstraintError("radius must be positive, got {}".format(radius))
        try:
            self._factor = scipy.linalg.cho_factor(matrix)
        except np.linalg.LinAlgError:
            smallest = float(np.min(np.linalg.eigvalsh(matrix)))
            raise ConstraintError(
                "Gram matrix is not positive definite (smallest eigenvalue {:.3g}); refine the quadrature".format(smallest)
            )
        self.matrix = matrix
        self.omega = tuple(float(w) for w in omega)
        self.order = int(order)
        self.radius = float(radius)

    def __repr__(self):
        return "ConstraintForm(N={}, m={}, R={})".format(self.dimension, self.order, self.radius)

    @classmethod
    def identity(cls, n: int, radius: float = 1.0) -> "ConstraintForm":
        return cls(np.eye(n), radius=radius)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def solve(self, c: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._factor, c)

    def energy(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.matrix @ u)

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))


def gram_matrix(
    dictionary: PerturbationDictionary,
    omega: Optional[Sequence[float]] = None,
    m: int = 0,
    radius: float = 1.0,
    rule: Optional[QuadratureRule] = None,
) -> ConstraintForm:
    """
    ``B_ij = sum_{|alpha| <= m} omega_|alpha| <D^alpha phi_i, D^alpha phi_j>`` over ``(0, tau) x X``.

    ``omega`` holds one weight per derivative order; first-order terms use the
    spatial derivatives, taken by central differences.
    """
    if m not in (0, 1):
        raise ConstraintError("Sobolev order must be 0 or 1, got {}".format(m))
    omega = (1.0,) * (m + 1) if omega is None else tuple(float(w) for w in omega)
    if len(omega) != m + 1 or min(omega) <= 0:
        raise ConstraintError("need {} positive weights, got {}".format(m + 1, omega))
    rule = rule or dictionary.default_rule()

    norms = np.array([e.norm for e in dictionary.entries])
    scale = np.outer(norms, norms)
    B = omega[0] * _raw_products(dictionary, rule) / scale
    if m == 1:
        for axis in range(2):
            B += omega[1] * _raw_products(dictionary, rule, axis=axis) / scale
    B = 0.5 * (B + B.T)
    form = ConstraintForm(B, omega, m, radius)
    logger.debug("Gram matrix of order {}: condition number {:.3g}".format(m, form.condition_number()))
    return form


class Sense(enum.Enum):
    ENHANCE = "enhance"
    DESTROY = "destroy"


def _check_vectors(G: GeneratorMatrix, vectors: Sequence[np.ndarray], generators: Sequence[GeneratorMatrix]):
    n = G.shape[0]
    for v in vectors:
        if np.shape(v) != (n,):
            raise OptimizationError("vector of shape {} for a generator of dimension {}".format(np.shape(v), n))
    for E in generators:
        if E.shape != G.shape:
            raise OptimizationError("perturbation generator of shape {} for a generator of shape {}".format(E.shape, G.shape))


def cost_vector_eigen(
    G: GeneratorMatrix, g: np.ndarray, f: np.ndarray, generators: Sequence[GeneratorMatrix]
) -> np.ndarray:
    """
    First variation of the eigenvalue of the biorthonormal pair ``(g, f)`` along each dictionary field.

    ``c_l = Re <g, E_l f>``; the real part is the rate of change of ``Re mu``.
    """
    _check_vectors(G, [g, f], generators)
    return np.array([pairing(g, E @ f, G.grid).real for E in generators])


def cost_vector_feature(G: GeneratorMatrix, phi: np.ndarray, generators: Sequence[GeneratorMatrix]) -> np.ndarray:
    """``c_l = 2 <G phi, E_l phi>``, the first variation of ``||G phi||**2``."""
    _check_vectors(G, [phi], generators)
    action = G @ phi
    weight = G.grid.cell_measure
    return np.array([2 * weight * float(np.dot(action, E @ phi)) for E in generators])


def combine_cost_vectors(
    c_destroy: np.ndarray, c_enhance: np.ndarray, alpha_destroy: float = 1.0, alpha_enhance: float = 1.0
) -> np.ndarray:
    """``alpha_1 c_phi1 - alpha_2 c_phi2``: destroy the first feature while enhancing the second."""
    if alpha_destroy <= 0 or alpha_enhance <= 0:
        raise OptimizationError("feature weights must be positive")
    return alpha_destroy * np.asarray(c_destroy, dtype=float) - alpha_enhance * np.asarray(c_enhance, dtype=float)


def feature_objective(G: GeneratorMatrix, phi: np.ndarray) -> float:
    action = G @ phi
    return float(G.grid.cell_measure * np.dot(action, action))


def feature_vector(grid: SpaceTimeGrid, func: Callable, symmetric: bool = True) -> np.ndarray:
    """
    Sample ``func(t, x)`` at slab midpoints and box centers.

    With ``symmetric`` the second half of the time circle mirrors the first, so
    the feature describes the same set on the forward and backward legs.
    """
    centers = grid.box_centers()
    times = grid.slab_midpoints()
    if symmetric:
        times = np.where(times > grid.tau, 2 * grid.tau - times, times)
    fibers = [np.broadcast_to(np.asarray(func(t, centers), dtype=float), (grid.n_space,)) for t in times]
    return np.concatenate(fibers)


def normalize_feature(phi: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Remove the mean and scale to unit volume-weighted L2 norm."""
    phi = np.asarray(phi, dtype=float)
    phi = phi - phi.mean()
    norm = math.sqrt(grid.cell_measure * float(np.dot(phi, phi)))
    if norm <= 1e-14 * max(1.0, float(np.max(np.abs(phi), initial=0.0))):
        raise OptimizationError("feature is constant")
    return phi / norm


def cosine_profile(wavenumber: float = 2.0, axis: int = 1, offset: float = 0.0) -> Callable:
    """The time-constant layered feature ``1 - cos(wavenumber (x_axis - offset))``."""
    return lambda t, x: 1 - np.cos(wavenumber * (np.asarray(x)[..., axis] - offset))


def solve_step(
    c: np.ndarray,
    constraint: ConstraintForm,
    radius: Optional[float] = None,
    sense: Union[str, Sense] = Sense.ENHANCE,
    kkt_tol: float = 1e-10,
) -> Tuple[np.ndarray, float]:
    """
    Optimize the linear objective ``c^T u`` over ``u^T B u <= R^2``.

    Returns ``(u, z)`` with ``z = sqrt(c^T B^-1 c) / (2 R)``. The minimizer is
    ``u_min = -B^-1 c / (2 z)``; ``ENHANCE`` returns the maximizer ``-u_min``.
    """
    sense = Sense(sense)
    c = np.asarray(c, dtype=float).ravel()
    if len(c) != constraint.dimension:
        raise OptimizationError("cost vector of length {} for {} coefficients".format(len(c), constraint.dimension))
    if not np.any(c):
        raise StationaryError("cost vector is zero; the objective is stationary")
    radius = constraint.radius if radius is None else float(radius)

    solved = constraint.solve(c)
    quadratic = float(c @ solved)
    if quadratic <= 0:
        raise ConstraintError("c^T B^-1 c = {} is not positive".format(quadratic))
    z = math.sqrt(quadratic) / (2 * radius)
    u_min = -solved / (2 * z)

    stationarity = float(np.linalg.norm(c + 2 * z * (constraint.matrix @ u_min)))
    if stationarity > kkt_tol * np.linalg.norm(c):
        raise KKTError("stationarity residual {:.3g} exceeds tolerance".format(stationarity))
    activity = abs(constraint.energy(u_min) - radius ** 2)
    if activity > kkt_tol * radius ** 2:
        raise KKTError("constraint residual {:.3g} exceeds tolerance".format(activity))

    return (-u_min if sense is Sense.ENHANCE else u_min), z


@dataclass
class TargetValue:
    objective: float
    cost: Optional[np.ndarray] = None
    eigenvalue: Optional[complex] = None
    index: Optional[int] = None
    correlation: Optional[float] = None
    reference: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class EigenTarget:
    """Move the real part of an eigenvalue; ``index`` counts from zero in smallest-magnitude order."""

    index: int
    n_eigenvalues: int = 6
    tracking_threshold: float = 0.5

    @property
    def name(self) -> str:
        return "eigenvalue {}".format(self.index + 1)

    def maximizes(self, sense: Sense) -> bool:
        return sense is Sense.ENHANCE

    def evaluate(self, G, generators, reference, settings: SolverSettings, with_cost: bool = True) -> TargetValue:
        if not 0 <= self.index < self.n_eigenvalues:
            raise OptimizationError("target index {} outside the {} computed eigenvalues".format(self.index, self.n_eigenvalues))
        spectrum = leading_spectrum(G, self.n_eigenvalues, settings=settings)
        if reference is None:
            index, correlation = self.index, 1.0
        else:
            index, correlation = track_eigenpair(reference, spectrum, self.tracking_threshold)
        mu = spectrum.eigenvalues[index]
        cost = None
        if with_cost:
            pair = left_right_pairs(G, self.n_eigenvalues, indices=[index], right=spectrum, settings=settings)
            cost = cost_vector_eigen(G, pair.left_vectors[:, 0], pair.right_vectors[:, 0], generators)
        return TargetValue(
            objective=float(mu.real),
            cost=cost,
            eigenvalue=complex(mu),
            index=index,
            correlation=correlation,
            reference=np.array(spectrum.right_vectors[:, index]),
        )


@dataclass(frozen=True, eq=False)
class FeatureTarget:
    """Change ``||G phi||**2`` for a normalized feature ``phi``; enhancing coherence minimizes it."""

    feature: np.ndarray

    @property
    def name(self) -> str:
        return "feature"

    def maximizes(self, sense: Sense) -> bool:
        return sense is Sense.DESTROY

    def evaluate(self, G, generators, reference, settings: SolverSettings, with_cost: bool = True) -> TargetValue:
        cost = cost_vector_feature(G, self.feature, generators) if with_cost else None
        return TargetValue(objective=feature_objective(G, self.feature), cost=cost)


@dataclass(frozen=True, eq=False)
class CombinedFeatureTarget:
    """``alpha_1 ||G phi_1||**2 - alpha_2 ||G phi_2||**2``; ``DESTROY`` maximizes it."""

    destroy: np.ndarray
    enhance: np.ndarray
    alpha_destroy: float = 1.0
    alpha_enhance: float = 1.0

    @property
    def name(self) -> str:
        return "combined feature"

    def maximizes(self, sense: Sense) -> bool:
        return sense is Sense.DESTROY

    def evaluate(self, G, generators, reference, settings: SolverSettings, with_cost: bool = True) -> TargetValue:
        objective = self.alpha_destroy * feature_objective(G, self.destroy) - self.alpha_enhance * feature_objective(
            G, self.enhance
        )
        cost = None
        if with_cost:
            cost = combine_cost_vectors(
                cost_vector_feature(G, self.destroy, generators),
                cost_vector_feature(G, self.enhance, generators),
                self.alpha_destroy,
                self.alpha_enhance,
            )
        return TargetValue(objective=objective, cost=cost)


@dataclass
class StepRecord:
    step: int
    z: float
    objective_before: float
    objective_after: float
    accepted: bool
    update: np.ndarray
    eigenvalue: Optional[complex] = None
    tracked_index: Optional[int] = None
    correlation: Optional[float] = None


@dataclass
class OptimizationState:
    sense: Sense
    target: str
    coefficients: np.ndarray
    records: List[StepRecord] = field(default_factory=list)
    initial_objective: Optional[float] = None
    initial_eigenvalue: Optional[complex] = None
    initial_index: Optional[int] = None
    halted: Optional[str] = None

    @property
    def accepted(self) -> List[StepRecord]:
        return [r for r in self.records if r.accepted]

    @property
    def steps_taken(self) -> int:
        return len(self.accepted)

    @property
    def trajectory(self) -> np.ndarray:
        """Objective values: the initial one and one per accepted step."""
        if self.initial_objective is None:
            return np.array([])
        return np.array([self.initial_objective] + [r.objective_after for r in self.accepted])

    @property
    def tracked_indices(self) -> List[Optional[int]]:
        return [self.initial_index] + [r.tracked_index for r in self.accepted]

    def as_dataframe(self) -> pd.DataFrame:
        rows = [
            dict(
                step=r.step,
                z=r.z,
                objective=r.objective_after,
                eigenvalue_re=np.nan if r.eigenvalue is None else r.eigenvalue.real,
                eigenvalue_im=np.nan if r.eigenvalue is None else r.eigenvalue.imag,
                tracked_index=pd.NA if r.tracked_index is None else r.tracked_index + 1,
                correlation=np.nan if r.correlation is None else r.correlation,
                accepted=r.accepted,
            )
            for r in self.records
        ]
        columns = ["step", "z", "objective", "eigenvalue_re", "eigenvalue_im", "tracked_index", "correlation", "accepted"]
        return pd.DataFrame(rows, columns=columns)


def iterate_optimization(
    grid: SpaceTimeGrid,
    base_field: VelocityField,
    epsilon: float,
    dictionary: PerturbationDictionary,
    constraint: ConstraintForm,
    target,
    sense: Union[str, Sense] = Sense.ENHANCE,
    steps: int = 1,
    radius: Optional[float] = None,
    generators: Optional[Sequence[GeneratorMatrix]] = None,
    settings: SolverSettings = SolverSettings(),
    quadrature: Quadrature = Quadrature.MIDPOINT,
    workers: Optional[int] = None,
    callback: Optional[Callable[[StepRecord], None]] = None,
) -> OptimizationState:
    """
    Repeat the Lagrange step, re-assembling the generator of ``v + sum u_l phi_l`` each time.

    The perturbation generators are assembled once. After every step the target is
    re-evaluated; a step that moves the objective the wrong way is recorded as
    rejected and ends the iteration.
    """
    sense = Sense(sense)
    if steps < 0:
        raise OptimizationError("steps must be nonnegative, got {}".format(steps))
    state = OptimizationState(sense=sense, target=target.name, coefficients=np.zeros(len(dictionary)))
    if steps == 0:
        return state

    if generators is None:
        generators = perturbation_generators(grid, dictionary.fields(), quadrature=quadrature, workers=workers)
    maximize = target.maximizes(sense)
    step_sense = Sense.ENHANCE if maximize else Sense.DESTROY

    def evaluate(coefficients, reference, with_cost):
        field = base_field + dictionary.combination(coefficients) if np.any(coefficients) else base_field
        G = assemble_augmented(grid, field, epsilon, quadrature=quadrature, workers=workers)
        return target.evaluate(G, generators, reference, settings, with_cost=with_cost)

    current = evaluate(state.coefficients, None, True)
    state.initial_objective = current.objective
    state.initial_eigenvalue = current.eigenvalue
    state.initial_index = current.index
    logger.info("Initial {} objective: {:.6g}".format(target.name, current.objective))

    for step in range(1, steps + 1):
        update, z = solve_step(current.cost, constraint, radius, step_sense)
        trial = state.coefficients + update
        after = evaluate(trial, current.reference, step < steps)
        moved = after.objective > current.objective if maximize else after.objective < current.objective
        record = StepRecord(
            step=step,
            z=z,
            objective_before=current.objective,
            objective_after=after.objective,
            accepted=moved,
            update=update,
            eigenvalue=after.eigenvalue,
            tracked_index=after.index,
            correlation=after.correlation,
        )
        state.records.append(record)
        if callback is not None:
            callback(record)

        if not moved:
            state.halted = "step {} moved the {} objective the wrong way: {:.6g} -> {:.6g}".format(
                step, target.name, current.objective, after.objective
            )
            logger.warning(state.halted)
            break

        state.coefficients = trial
        current = after
        message = "Step {}: z = {:.4g}, objective {:.6g}".format(step, z, after.objective)
        if after.eigenvalue is not None:
            message += ", eigenvalue {} at rank {}".format(format_complex(after.eigenvalue), after.index + 1)
        logger.info(message)

    return state


def group_by_spatial_mode(dictionary: PerturbationDictionary, coefficients: Sequence[float]) -> pd.DataFrame:
    """Euclidean norm of the coefficients of each spatial mode ``(k, l)``, largest first."""
    coefficients = dictionary.check_coefficients(coefficients)
    frame = dictionary.as_dataframe()[["k", "l"]].assign(coefficient=coefficients)
    grouped = (
        frame.groupby(["k", "l"])["coefficient"]
        .apply(lambda c: float(np.sqrt(np.sum(np.square(c)))))
        .rename("magnitude")
        .reset_index()
    )
    return grouped.sort_values("magnitude", ascending=False, kind="mergesort").reset_index(drop=True)


def perturbation_streamfunction(
    dictionary: PerturbationDictionary, coefficients: Sequence[float], t: float, n_x: int = 100, n_y: int = 50
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample the total perturbation's streamfunction at time ``t`` on an ``n_x`` by ``n_y`` lattice."""
    (ax, bx), (ay, by) = dictionary.bounds
    xs = np.linspace(ax, bx, n_x)
    ys = np.linspace(ay, by, n_y)
    X, Y = np.meshgrid(xs, ys)
    return xs, ys, dictionary.streamfunction(coefficients, t, X, Y)
