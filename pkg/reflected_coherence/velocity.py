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
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DomainError

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

EARTH_RADIUS_MM = 6.371  # Bickley jet length unit, megameters


class VelocityField:
    """
    A time-dependent velocity field ``v(t, x)``.

    ``evaluate`` is vectorized: ``x`` has shape ``(..., d)`` and ``t`` is a scalar
    or an array broadcastable against ``x[..., 0]``; the result has the shape of ``x``.
    No domain checks happen in ``evaluate``; use :func:`eval_field` for that.
    """

    def __init__(
        self,
        dimension: int = 2,
        tau: Optional[float] = None,
        bounds: Optional[Sequence[Sequence[float]]] = None,
        periodic: Optional[Sequence[bool]] = None,
        divergence_free: bool = False,
    ):
        self.dimension = int(dimension)
        self.tau = None if tau is None else float(tau)
        self.bounds = None if bounds is None else np.asarray(bounds, dtype=float).reshape(self.dimension, 2)
        self.periodic = tuple(bool(p) for p in periodic) if periodic is not None else (False,) * self.dimension
        self.divergence_free = bool(divergence_free)

    def evaluate(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t, x) -> np.ndarray:
        return self.evaluate(t, x)

    def _metadata(self):
        return dict(
            dimension=self.dimension,
            tau=self.tau,
            bounds=self.bounds,
            periodic=self.periodic,
        )

    def __add__(self, other):
        if not isinstance(other, VelocityField):
            return NotImplemented
        return LinearCombination([self, other], [1.0, 1.0])

    def __sub__(self, other):
        if not isinstance(other, VelocityField):
            return NotImplemented
        return LinearCombination([self, other], [1.0, -1.0])

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return LinearCombination([self], [float(scalar)])

    __rmul__ = __mul__

    def __neg__(self):
        return LinearCombination([self], [-1.0])


class Streamfunction:
    """A scalar potential ``psi(t, x, y)`` with analytic partial derivatives."""

    def psi(self, t, x, y):
        raise NotImplementedError

    def dpsi_dx(self, t, x, y):
        raise NotImplementedError

    def dpsi_dy(self, t, x, y):
        raise NotImplementedError

    def velocity(self, t, x, y) -> Tuple[np.ndarray, np.ndarray]:
        return -self.dpsi_dy(t, x, y), self.dpsi_dx(t, x, y)


class CallableStreamfunction(Streamfunction):
    def __init__(self, psi: Callable, dpsi_dx: Callable, dpsi_dy: Callable):
        self._psi = psi
        self._dx = dpsi_dx
        self._dy = dpsi_dy

    def psi(self, t, x, y):
        return self._psi(t, x, y)

    def dpsi_dx(self, t, x, y):
        return self._dx(t, x, y)

    def dpsi_dy(self, t, x, y):
        return self._dy(t, x, y)


class DoubleGyreStreamfunction(Streamfunction):
    """
    The periodically forced double gyre on ``[0, 2] x [0, 1]``.

    ``psi = A sin(pi f(t, x)) sin(pi y)`` with forcing
    ``f = gamma sin(2 pi t / period) x**2 + (1 - 2 gamma sin(2 pi t / period)) x``.
    """

    def __init__(self, amplitude: float = 0.25, gamma: float = 0.25, period: float = 1.0):
        self.amplitude = float(amplitude)
        self.gamma = float(gamma)
        self.period = float(period)

    def _forcing(self, t, x):
        s = self.gamma * np.sin(2 * np.pi * np.asarray(t) / self.period)
        f = s * x ** 2 + (1 - 2 * s) * x
        f_x = 2 * s * x + (1 - 2 * s)
        return f, f_x

    def psi(self, t, x, y):
        f, _ = self._forcing(t, x)
        return self.amplitude * np.sin(np.pi * f) * np.sin(np.pi * y)

    def dpsi_dx(self, t, x, y):
        f, f_x = self._forcing(t, x)
        return np.pi * self.amplitude * np.cos(np.pi * f) * np.sin(np.pi * y) * f_x

    def dpsi_dy(self, t, x, y):
        f, _ = self._forcing(t, x)
        return np.pi * self.amplitude * np.sin(np.pi * f) * np.cos(np.pi * y)


class BickleyStreamfunction(Streamfunction):
    """
    The Bickley jet: a zonal jet perturbed by two traveling Rossby waves.

    ``psi = -U0 L tanh(y/L) + U0 L sech(y/L)**2 sum_n A_n cos(k_n (x - c_n t))``
    with ``k_n = 2 n / r_e`` and ``c_n`` given as multiples of ``U0``.
    """

    def __init__(
        self,
        u0: float = 5.4138,
        length: float = 1.77,
        amplitudes: Sequence[float] = (0.1, 0.3),
        speeds: Sequence[float] = (0.205, 0.461),
        modes: Sequence[int] = (2, 3),
        earth_radius: float = EARTH_RADIUS_MM,
    ):
        self.u0 = float(u0)
        self.length = float(length)
        self.amplitudes = tuple(float(a) for a in amplitudes)
        self.speeds = tuple(float(c) * self.u0 for c in speeds)
        self.wavenumbers = tuple(2 * n / earth_radius for n in modes)
        self.earth_radius = float(earth_radius)

    @property
    def zonal_period(self) -> float:
        return math.pi * self.earth_radius

    def _waves(self, t, x):
        cos_sum = 0
        k_sin_sum = 0
        for a, c, k in zip(self.amplitudes, self.speeds, self.wavenumbers):
            phase = k * (x - c * np.asarray(t))
            cos_sum = cos_sum + a * np.cos(phase)
            k_sin_sum = k_sin_sum + a * k * np.sin(phase)
        return cos_sum, k_sin_sum

    def psi(self, t, x, y):
        cos_sum, _ = self._waves(t, x)
        sech2 = 1 / np.cosh(y / self.length) ** 2
        return -self.u0 * self.length * np.tanh(y / self.length) + self.u0 * self.length * sech2 * cos_sum

    def dpsi_dx(self, t, x, y):
        _, k_sin_sum = self._waves(t, x)
        sech2 = 1 / np.cosh(y / self.length) ** 2
        return -self.u0 * self.length * sech2 * k_sin_sum

    def dpsi_dy(self, t, x, y):
        cos_sum, _ = self._waves(t, x)
        sech2 = 1 / np.cosh(y / self.length) ** 2
        return -self.u0 * sech2 * (1 + 2 * np.tanh(y / self.length) * cos_sum)


class TravelingWaveStreamfunction(Streamfunction):
    """``psi = -c y + A sin(x - nu t) sin(y)``: two gyres drifting in x under a uniform current."""

    def __init__(self, amplitude: float = 1.0, drift: float = 1.0, wave_speed: float = 0.25):
        self.amplitude = float(amplitude)
        self.drift = float(drift)
        self.wave_speed = float(wave_speed)

    def psi(self, t, x, y):
        return -self.drift * y + self.amplitude * np.sin(x - self.wave_speed * np.asarray(t)) * np.sin(y)

    def dpsi_dx(self, t, x, y):
        return self.amplitude * np.cos(x - self.wave_speed * np.asarray(t)) * np.sin(y)

    def dpsi_dy(self, t, x, y):
        return -self.drift + self.amplitude * np.sin(x - self.wave_speed * np.asarray(t)) * np.cos(y)


class StreamfunctionField(VelocityField):
    """The divergence-free planar field ``(-d psi/dy, d psi/dx)``."""

    def __init__(self, streamfunction: Streamfunction, **metadata):
        metadata.setdefault("dimension", 2)
        super().__init__(divergence_free=True, **metadata)
        if self.dimension != 2:
            raise ValueError("streamfunction fields are planar")
        self.streamfunction = streamfunction

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        u, v = self.streamfunction.velocity(t, x[..., 0], x[..., 1])
        return np.stack(np.broadcast_arrays(u, v), axis=-1)

    def __repr__(self):
        return "{}({})".format(self.__class__.__name__, self.streamfunction.__class__.__name__)


class FunctionField(VelocityField):
    """Wraps a vectorized callable ``func(t, x) -> v``."""

    def __init__(self, func: Callable, **metadata):
        divergence_free = metadata.pop("divergence_free", False)
        super().__init__(divergence_free=divergence_free, **metadata)
        self.func = func

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.func(t, x), dtype=float), x.shape)


class ConstantField(VelocityField):
    def __init__(self, vector: Sequence[float], **metadata):
        vector = np.asarray(vector, dtype=float).ravel()
        metadata.setdefault("dimension", len(vector))
        super().__init__(divergence_free=True, **metadata)
        self.vector = vector

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.vector, x.shape).copy()

    def __repr__(self):
        return "ConstantField({})".format(self.vector.tolist())


class LinearCombination(VelocityField):
    """``sum_i coefficients[i] * fields[i]``; metadata comes from the first field that has it."""

    def __init__(self, fields: Sequence[VelocityField], coefficients: Sequence[float]):
        fields = list(fields)
        coefficients = [float(c) for c in coefficients]
        if not fields or len(fields) != len(coefficients):
            raise ValueError("need one coefficient per field")
        dims = {f.dimension for f in fields}
        if len(dims) != 1:
            raise ValueError("cannot combine fields of different dimension")

        def first(attr):
            return next((getattr(f, attr) for f in fields if getattr(f, attr) is not None), None)

        super().__init__(
            dimension=dims.pop(),
            tau=first("tau"),
            bounds=first("bounds"),
            periodic=fields[0].periodic,
            divergence_free=all(f.divergence_free for f in fields),
        )
        self.fields = fields
        self.coefficients = coefficients

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape)
        for c, f in zip(self.coefficients, self.fields):
            if c != 0.0:
                total += c * f.evaluate(t, x)
        return total


class ReflectedField(VelocityField):
    """
    The forward-backward concatenation of a field on ``[0, tau]``.

    ``v_hat(t) = v(t)`` for ``t <= tau`` and ``v_hat(t) = -v(2 tau - t)`` for
    ``tau < t <= 2 tau``; times outside ``[0, 2 tau]`` are taken modulo ``2 tau``.
    """

    def __init__(self, base: VelocityField, tau: float):
        super().__init__(
            dimension=base.dimension,
            tau=tau,
            bounds=base.bounds,
            periodic=base.periodic,
            divergence_free=base.divergence_free,
        )
        self.base = base

    @property
    def horizon(self) -> float:
        return 2 * self.tau

    def mirror_time(self, t):
        """Return ``(s, sign)`` with ``v_hat(t) = sign * v(s)``."""
        t = np.asarray(t, dtype=float)
        period = 2 * self.tau
        t = np.where((t < 0) | (t > period), np.mod(t, period), t)
        first_half = t <= self.tau
        return np.where(first_half, t, period - t), np.where(first_half, 1.0, -1.0)

    def evaluate(self, t, x):
        s, sign = self.mirror_time(t)
        return self.base.evaluate(s, x) * sign[..., None]

    def __repr__(self):
        return "ReflectedField({!r}, tau={})".format(self.base, self.tau)


def double_gyre(amplitude: float = 0.25, gamma: float = 0.25, tau: Optional[float] = None) -> StreamfunctionField:
    return StreamfunctionField(
        DoubleGyreStreamfunction(amplitude=amplitude, gamma=gamma),
        tau=tau,
        bounds=[(0.0, 2.0), (0.0, 1.0)],
    )


def bickley(tau: Optional[float] = None, y_extent: float = 3.0, **params) -> StreamfunctionField:
    psi = BickleyStreamfunction(**params)
    return StreamfunctionField(
        psi,
        tau=tau,
        bounds=[(0.0, psi.zonal_period), (-y_extent, y_extent)],
        periodic=(True, False),
    )


def traveling_wave(
    amplitude: float, drift: float = 1.0, wave_speed: float = 0.25, tau: Optional[float] = None
) -> StreamfunctionField:
    return StreamfunctionField(
        TravelingWaveStreamfunction(amplitude=amplitude, drift=drift, wave_speed=wave_speed),
        tau=tau,
        bounds=[(0.0, 2 * math.pi), (0.0, math.pi)],
        periodic=(True, False),
    )


def eval_field(field: VelocityField, t, x) -> np.ndarray:
    """
    Evaluate ``field`` at ``(t, x)``, checking the field's domain first.

    Periodic axes are wrapped; points outside a non-periodic axis raise :class:`DomainError`.
    """
    x = np.array(x, dtype=float)
    if x.shape[-1] != field.dimension:
        raise DomainError("field is {}-dimensional, got points with {} coordinates".format(field.dimension, x.shape[-1]))
    if field.bounds is not None:
        for axis, (lo, hi) in enumerate(field.bounds):
            slack = 1e-12 * (hi - lo)
            if field.periodic[axis]:
                x[..., axis] = lo + np.mod(x[..., axis] - lo, hi - lo)
            elif np.any(x[..., axis] < lo - slack) or np.any(x[..., axis] > hi + slack):
                raise DomainError(
                    "coordinate {} outside [{}, {}] on non-periodic axis {}".format(
                        x[..., axis].min() if x[..., axis].min() < lo else x[..., axis].max(), lo, hi, axis
                    )
                )
    horizon = field.horizon if isinstance(field, ReflectedField) else field.tau
    if horizon is not None and np.any((np.asarray(t) < 0) | (np.asarray(t) > horizon * (1 + 1e-12))):
        raise DomainError("time outside [0, {}]".format(horizon))
    return field.evaluate(t, x)


def reflect(field: VelocityField, tau: Optional[float] = None) -> ReflectedField:
    """Build the forward-backward field over ``[0, 2 tau]`` from a field on ``[0, tau]``."""
    if isinstance(field, ReflectedField):
        raise ValueError("field is already reflected")
    tau = field.tau if tau is None else tau
    if tau is None:
        raise ValueError("reflect needs a horizon: pass tau or give the field one")
    return ReflectedField(field, float(tau))


def from_streamfunction(psi: Streamfunction, **metadata) -> StreamfunctionField:
    return StreamfunctionField(psi, **metadata)


def divergence_check(
    field: VelocityField, n_samples: int = 64, step: float = 1e-4, times: Optional[Sequence[float]] = None
) -> float:
    """
    Return the largest central-difference divergence estimate over a fixed sample lattice.

    Samples are the cell centers of a regular lattice with about ``n_samples``
    points inside the field's bounds (the unit box when it has none), at three
    times spread over the field's horizon.
    """
    d = field.dimension
    bounds = field.bounds if field.bounds is not None else np.array([(0.0, 1.0)] * d)
    per_axis = max(2, int(math.ceil(n_samples ** (1 / d))))
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in bounds]
    points = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)

    if times is None:
        horizon = field.tau if field.tau is not None else 1.0
        times = horizon * np.array([0.1, 0.45, 0.8])

    worst = 0.0
    for t in times:
        div = np.zeros(len(points))
        for axis in range(d):
            offset = np.zeros(d)
            offset[axis] = step
            forward = field.evaluate(t, points + offset)[:, axis]
            backward = field.evaluate(t, points - offset)[:, axis]
            div += (forward - backward) / (2 * step)
        worst = max(worst, float(np.max(np.abs(div))))
    return worst
