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
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .exceptions import SimulationError
from .generator import GeneratorKind, GeneratorMatrix
from .grid import BoundaryCondition, is_close_to_multiple
from .krylov import krylov_expmv
from .utils import parallel_map
from .velocity import VelocityField

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

# particles per random stream; the ensemble is split into blocks of this size
BLOCK_SIZE = 4096

_MAX_REFLECTIONS = 50

# offset separating the streams that place particles from the streams that drive them
_SEEDING_STREAMS = 1 << 20


class Scheme(enum.Enum):
    EULER_MARUYAMA = "euler-maruyama"
    RK4_MARUYAMA = "rk4-maruyama"


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one particle block, keyed by ``(seed, block)``."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))


class ParticleEnsemble:
    """Particle positions with alive flags; dead particles (left through an outflow face) stay dead."""

    def __init__(self, positions, alive=None, seed: int = 0, time: float = 0.0, ids=None):
        self.positions = np.array(positions, dtype=float)
        if self.positions.ndim != 2:
            raise SimulationError("positions must have shape (N, d)")
        n = len(self.positions)
        self.alive = np.ones(n, dtype=bool) if alive is None else np.array(alive, dtype=bool)
        self.ids = np.arange(n) if ids is None else np.array(ids)
        self.seed = int(seed)
        self.time = float(time)

    def __len__(self):
        return len(self.positions)

    def __repr__(self):
        return "ParticleEnsemble(n={}, alive={}, t={})".format(len(self), self.n_alive, self.time)

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.alive.copy(), self.seed, self.time, self.ids.copy())

    @classmethod
    def uniform(cls, lower, upper, n: int, seed: int) -> "ParticleEnsemble":
        """``n`` particles uniform in the rectangle ``[lower, upper]``, drawn block by block."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        chunks = []
        for block, start in enumerate(range(0, n, BLOCK_SIZE)):
            size = min(BLOCK_SIZE, n - start)
            rng = block_rng(seed, _SEEDING_STREAMS + block)
            chunks.append(lower + rng.random((size, len(lower))) * (upper - lower))
        positions = np.concatenate(chunks) if chunks else np.zeros((0, len(lower)))
        return cls(positions, seed=seed)

    def as_dataframe(self) -> pd.DataFrame:
        columns = ["x", "y", "z"][: self.positions.shape[1]]
        df = pd.DataFrame(self.positions, columns=columns)
        df.insert(0, "id", self.ids)
        df["alive"] = self.alive
        return df


class Domain:
    """Rectangle with per-axis boundary behaviour for particle integration."""

    def __init__(self, bounds, bc: Sequence[Union[str, BoundaryCondition]]):
        self.bounds = np.asarray(bounds, dtype=float)
        self.bc = tuple(BoundaryCondition.parse(b) for b in bc)

    @classmethod
    def from_grid(cls, grid) -> "Domain":
        return cls(np.stack([grid.lower, grid.upper], axis=-1), grid.bc)

    @classmethod
    def from_field(cls, field: VelocityField) -> "Domain":
        if field.bounds is None:
            raise SimulationError("field has no bounds; pass a domain explicitly")
        bc = [BoundaryCondition.PERIODIC if p else BoundaryCondition.REFLECTING for p in field.periodic]
        return cls(field.bounds, bc)

    def apply(self, x: np.ndarray, alive: np.ndarray) -> None:
        """Wrap, reflect or kill in place."""
        for axis, (bc, (lo, hi)) in enumerate(zip(self.bc, self.bounds)):
            column = x[:, axis]
            if bc is BoundaryCondition.PERIODIC:
                column[:] = lo + np.mod(column - lo, hi - lo)
            elif bc is BoundaryCondition.REFLECTING:
                for _ in range(_MAX_REFLECTIONS):
                    below = column < lo
                    above = column > hi
                    if not (below.any() or above.any()):
                        break
                    column[below] = 2 * lo - column[below]
                    column[above] = 2 * hi - column[above]
            else:
                alive &= (column >= lo) & (column <= hi)


def _rk4(field, t, x, dt):
    k1 = field.evaluate(t, x)
    k2 = field.evaluate(t + dt / 2, x + dt / 2 * k1)
    k3 = field.evaluate(t + dt / 2, x + dt / 2 * k2)
    k4 = field.evaluate(t + dt, x + dt * k3)
    return dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _euler(field, t, x, dt):
    return dt * field.evaluate(t, x)


_STEPPERS = {Scheme.EULER_MARUYAMA: _euler, Scheme.RK4_MARUYAMA: _rk4}


def _step_count(t0: float, t1: float, dt: float) -> int:
    if dt <= 0:
        raise SimulationError("dt must be positive, got {}".format(dt))
    if t1 <= t0:
        raise SimulationError("need t1 > t0, got {} and {}".format(t0, t1))
    if not is_close_to_multiple(t1 - t0, dt):
        raise SimulationError("dt={} does not divide the interval [{}, {}]".format(dt, t0, t1))
    return int(round((t1 - t0) / dt))


def _integrate_block(field, epsilon, positions, alive, rng, t0, dt, n_steps, scheme, domain, check=None):
    """
    Advance one block. ``check(t, x)`` (optional) returns which particles are
    still inside a family; the returned ``stayed`` mask is the running conjunction.
    """
    step = _STEPPERS[scheme]
    x = positions.copy()
    alive = alive.copy()
    stayed = alive.copy()
    noise_scale = epsilon * math.sqrt(dt)
    for i in range(n_steps):
        t = t0 + i * dt
        noise = rng.standard_normal(x.shape)
        if alive.any():
            moved = x[alive] + step(field, t, x[alive], dt)
            if epsilon > 0:
                moved += noise_scale * noise[alive]
            x[alive] = moved
            domain.apply(x, alive)
        if check is not None:
            stayed &= alive
            if stayed.any():
                stayed[stayed] &= check(t + dt, x[stayed])
    return x, alive, stayed


def _blocks(n: int):
    return [(b, start, min(start + BLOCK_SIZE, n)) for b, start in enumerate(range(0, n, BLOCK_SIZE))]


def integrate_ensemble(
    field: VelocityField,
    epsilon: float,
    ensemble: ParticleEnsemble,
    t0: float,
    t1: float,
    dt: float,
    scheme: Union[str, Scheme] = Scheme.RK4_MARUYAMA,
    domain: Optional[Domain] = None,
    workers: Optional[int] = None,
) -> ParticleEnsemble:
    """
    Integrate ``dx = v(t, x) dt + epsilon dW`` from ``t0`` to ``t1``.

    The drift is advanced by the deterministic scheme and Gaussian noise is
    added once per step. Random numbers come from per-block counter-based
    streams keyed by ``(ensemble.seed, block)``, so results do not depend on
    the number of workers.
    """
    try:
        scheme = Scheme(scheme)
    except ValueError:
        raise SimulationError("unknown scheme {!r}".format(scheme))
    n_steps = _step_count(t0, t1, dt)
    domain = domain if domain is not None else Domain.from_field(field)

    def run(block):
        b, start, stop = block
        x, alive, _ = _integrate_block(
            field,
            epsilon,
            ensemble.positions[start:stop],
            ensemble.alive[start:stop],
            block_rng(ensemble.seed, b),
            t0,
            dt,
            n_steps,
            scheme,
            domain,
        )
        return x, alive

    results = parallel_map(run, _blocks(len(ensemble)), workers)
    positions = np.concatenate([r[0] for r in results]) if results else ensemble.positions.copy()
    alive = np.concatenate([r[1] for r in results]) if results else ensemble.alive.copy()
    logger.debug("Integrated {} particles over [{}, {}] in {} steps".format(len(ensemble), t0, t1, n_steps))
    return ParticleEnsemble(positions, alive, ensemble.seed, t1, ensemble.ids.copy())


@dataclass(frozen=True)
class MonteCarloEstimate:
    """A binomial proportion with its standard error."""

    value: float
    stderr: float
    n: int
    count: int
    check_interval: Optional[float] = None

    @classmethod
    def from_counts(cls, count: int, n: int, check_interval: Optional[float] = None) -> "MonteCarloEstimate":
        p = count / n
        return cls(p, math.sqrt(p * (1 - p) / n), n, count, check_interval)


def default_dt(grid) -> float:
    """Membership check interval ``tau / (4 n_time)``, one quarter of a slab."""
    return grid.tau / (4 * grid.n_time)


def seed_in_family(family, n: int, seed: int) -> ParticleEnsemble:
    """``n`` particles uniform in the initial set of a box family."""
    grid = family.grid
    boxes = np.flatnonzero(family.masks[0])
    if boxes.size == 0:
        raise SimulationError("family is empty at t = 0")
    centers = grid.box_centers()
    chunks = []
    for block, start in enumerate(range(0, n, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - start)
        rng = block_rng(seed, _SEEDING_STREAMS + block)
        chosen = boxes[rng.integers(0, boxes.size, size)]
        offsets = (rng.random((size, grid.d)) - 0.5) * grid.spacing
        chunks.append(centers[chosen] + offsets)
    return ParticleEnsemble(np.concatenate(chunks), seed=seed)


def coherence_ratio_mc(
    family,
    field: VelocityField,
    epsilon: float,
    n: int,
    dt: Optional[float] = None,
    seed: int = 0,
    scheme: Union[str, Scheme] = Scheme.RK4_MARUYAMA,
    workers: Optional[int] = None,
) -> MonteCarloEstimate:
    """
    Estimate the probability of staying in the family over ``[0, tau]`` when starting uniformly in its initial set.

    Membership is checked after every integrator step against the mask at
    the nearest slab boundary; leaving once counts as escaping.
    """
    grid = family.grid
    dt = default_dt(grid) if dt is None else dt
    n_steps = _step_count(0.0, grid.tau, dt)
    scheme = Scheme(scheme)
    ensemble = seed_in_family(family, n, seed)
    domain = Domain.from_grid(grid)

    def run(block):
        b, start, stop = block
        _, _, stayed = _integrate_block(
            field,
            epsilon,
            ensemble.positions[start:stop],
            ensemble.alive[start:stop],
            block_rng(seed, b),
            0.0,
            dt,
            n_steps,
            scheme,
            domain,
            check=family.contains,
        )
        return int(stayed.sum())

    stayers = sum(parallel_map(run, _blocks(n), workers))
    estimate = MonteCarloEstimate.from_counts(stayers, n, check_interval=dt)
    logger.info("Coherence ratio estimate {:.5f} +- {:.5f} from {} particles".format(estimate.value, estimate.stderr, n))
    return estimate


def side_switch_fraction(
    field: VelocityField,
    epsilon: float,
    n: int,
    lower: Sequence[float],
    upper: Sequence[float],
    split: float,
    t1: float,
    dt: float,
    axis: int = 0,
    seed: int = 0,
    scheme: Union[str, Scheme] = Scheme.RK4_MARUYAMA,
    domain: Optional[Domain] = None,
    workers: Optional[int] = None,
) -> MonteCarloEstimate:
    """
    Seed ``n`` particles uniformly in ``[lower, upper]`` and report the fraction
    that end up on the other side of the line ``x[axis] = split`` at ``t1``.
    """
    ensemble = ParticleEnsemble.uniform(lower, upper, n, seed)
    started_above = ensemble.positions[:, axis] > split
    final = integrate_ensemble(field, epsilon, ensemble, 0.0, t1, dt, scheme=scheme, domain=domain, workers=workers)
    ended_above = final.positions[:, axis] > split
    switched = int(np.sum((started_above != ended_above) & final.alive))
    estimate = MonteCarloEstimate.from_counts(switched, n)
    logger.info("{:.2%} of {} particles crossed {} = {}".format(estimate.value, n, "xyz"[axis], split))
    return estimate


def propagate_density(
    slices: Sequence[GeneratorMatrix],
    f0: np.ndarray,
    slabs: Optional[Sequence[int]] = None,
    transpose: bool = False,
    m: int = 30,
    tol: float = 1e-12,
) -> np.ndarray:
    """
    Apply ``exp(h G_s)`` slab by slab through the per-slab generators.

    ``slices[s]`` is the spatial generator of slab ``s``; ``slabs`` gives the
    order of application (ascending by default). With ``transpose`` the
    density (left) action ``exp(h G_s^T)`` is used instead.
    """
    if not slices:
        raise SimulationError("no slab generators given")
    grid = slices[0].grid
    if any(s.kind is not GeneratorKind.SPATIAL_SLAB for s in slices):
        raise SimulationError("propagation needs spatial slab generators")
    f = np.asarray(f0)
    if f.shape != (grid.n_space,):
        raise SimulationError("f0 has shape {}, a slab has {} boxes".format(f.shape, grid.n_space))
    order = range(len(slices)) if slabs is None else slabs
    for s in order:
        matrix = slices[s].matrix.T.tocsr() if transpose else slices[s].matrix
        f = krylov_expmv(matrix, f, t=grid.h, m=m, tol=tol)
    return f
