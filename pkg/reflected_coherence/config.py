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
Run configuration.

A run is one JSON document. Every section is validated against a small
schema; errors name the dotted key that is wrong.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Tuple

from .exceptions import CoherenceError, ConfigError
from .grid import SpaceTimeGrid, build_grid
from .velocity import ConstantField, VelocityField, bickley, double_gyre, traveling_wave, EARTH_RADIUS_MM

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

EXPERIMENTS = ("spectrum", "seba", "flux", "coherence-mc", "side-switch", "optimize", "reproduce")
STOCHASTIC = ("coherence-mc", "side-switch", "optimize")
SCALES = ("full", "ci")

_REQUIRED = object()
_NUMBER = (int, float)

# section -> key -> (accepted types, default)
SCHEMAS: Dict[str, Dict[str, Tuple[tuple, Any]]] = {
    "solver": {
        "n_eigenvalues": ((int,), 6),
        "ordering": ((str,), "smallest-magnitude"),
        "quadrature": ((str,), "midpoint"),
        "reuse_reflection": ((bool,), False),
        "tol": (_NUMBER, 1e-10),
        "maxiter": ((int,), 50),
        "ncv": ((int, type(None)), None),
        "shift_scale": (_NUMBER, 1e-3),
        "residual_tol": (_NUMBER, 1e-6),
        "companion_tol": (_NUMBER, 5e-3),
    },
    "dictionary": {
        "k": ((list,), [1, 2, 3, 4, 5]),
        "l": ((list,), [1, 2, 3]),
        "r": ((list,), [-1, 0, 2]),
        "speeds": ((list,), [0.0, 0.0]),
        "order": ((int,), 0),
        "omega": ((list, type(None)), None),
    },
    "optimization": {
        "target": ((str,), "eigen"),
        "mode": ((int,), 2),
        "sense": ((str,), "enhance"),
        "steps": ((int,), 8),
        "radius": (_NUMBER, 0.05),
        "feature": ((dict, type(None)), None),
        "enhance_feature": ((dict, type(None)), None),
        "alphas": ((list,), [1.0, 1.0]),
        "tracking_threshold": (_NUMBER, 0.5),
        "stream_time": ((_NUMBER + (type(None),)), None),
    },
    "simulation": {
        "n": ((int,), 100000),
        "dt": ((_NUMBER + (type(None),)), None),
        "scheme": ((str,), "rk4-maruyama"),
        "family": ((str,), "level-set"),
        "mode": ((int,), 2),
        "sign": ((int,), 1),
        "level": (_NUMBER, 0.4),
        "lower": ((list, type(None)), None),
        "upper": ((list, type(None)), None),
        "split": ((_NUMBER + (type(None),)), None),
        "axis": ((int,), 0),
        "epsilons": ((list, type(None)), None),
    },
    "seba": {
        "modes": ((list, type(None)), None),
        "skip_companions": ((bool,), True),
        "max_iter": ((int,), 5000),
        "tol": (_NUMBER, 1e-12),
        "level": (_NUMBER, 0.4),
    },
    "flux": {
        "family": ((str,), "translating-disk"),
        "center": ((list,), [0.6, 0.5]),
        "radius": (_NUMBER, 0.2),
        "velocity": ((list,), [0.2, 0.0]),
        "lower": ((list,), [0.0, 0.0]),
        "upper": ((list,), [1.0, 1.0]),
        "n_t": ((int,), 200),
        "n_r": ((int,), 200),
    },
    "output": {
        "heatmaps": ((bool,), True),
        "binary": ((bool,), True),
        "matrix": ((bool,), False),
        "slabs": ((list, type(None)), None),
    },
}

TOP_LEVEL = ("experiment", "grid", "field", "epsilon", "seed", "scale", "preset", "name") + tuple(SCHEMAS)


def _validate_section(name: str, raw: Any) -> Dict[str, Any]:
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(name, "must be an object")
    schema = SCHEMAS[name]
    for key in raw:
        if key not in schema:
            raise ConfigError("{}.{}".format(name, key), "unknown key")
    section = {}
    for key, (types, default) in schema.items():
        value = raw.get(key, default)
        if value is _REQUIRED:
            raise ConfigError("{}.{}".format(name, key), "is required")
        # bool is an int subclass; keep them apart
        if isinstance(value, bool) and bool not in types:
            raise ConfigError("{}.{}".format(name, key), "expected {}, got a boolean".format(_type_names(types)))
        if not isinstance(value, types):
            raise ConfigError("{}.{}".format(name, key), "expected {}, got {!r}".format(_type_names(types), value))
        section[key] = copy.deepcopy(value)
    return section


def _type_names(types: tuple) -> str:
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


@dataclass
class RunConfig:
    """A validated run description; ``to_dict`` gives back a document that ``from_dict`` accepts."""

    experiment: str
    grid: Dict[str, Any]
    field: Dict[str, Any]
    epsilon: float = 0.0
    seed: Optional[int] = None
    scale: str = "full"
    preset: Optional[str] = None
    name: Optional[str] = None
    solver: Dict[str, Any] = field(default_factory=lambda: _validate_section("solver", {}))
    dictionary: Dict[str, Any] = field(default_factory=lambda: _validate_section("dictionary", {}))
    optimization: Dict[str, Any] = field(default_factory=lambda: _validate_section("optimization", {}))
    simulation: Dict[str, Any] = field(default_factory=lambda: _validate_section("simulation", {}))
    seba: Dict[str, Any] = field(default_factory=lambda: _validate_section("seba", {}))
    flux: Dict[str, Any] = field(default_factory=lambda: _validate_section("flux", {}))
    output: Dict[str, Any] = field(default_factory=lambda: _validate_section("output", {}))

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(document, Mapping):
            raise ConfigError("<root>", "configuration must be a JSON object")
        for key in document:
            if key not in TOP_LEVEL:
                raise ConfigError(key, "unknown key")

        experiment = document.get("experiment")
        if experiment not in EXPERIMENTS:
            raise ConfigError("experiment", "must be one of {}, got {!r}".format(", ".join(EXPERIMENTS), experiment))

        if experiment == "reproduce":
            preset = document.get("preset")
            if preset not in PRESETS:
                raise ConfigError("preset", "unknown preset {!r}".format(preset))
            scale = document.get("scale", "full")
            if scale not in SCALES:
                raise ConfigError("scale", "must be one of {}".format(", ".join(SCALES)))
            resolved = PRESETS[preset].build(scale)
            if "seed" in document:
                resolved["seed"] = document["seed"]
            return cls.from_dict(resolved)

        scale = document.get("scale", "full")
        if scale not in SCALES:
            raise ConfigError("scale", "must be one of {}".format(", ".join(SCALES)))

        grid = document.get("grid")
        if not isinstance(grid, Mapping):
            raise ConfigError("grid", "is required and must be an object")
        try:
            build_grid(grid)
        except CoherenceError as e:
            raise ConfigError("grid", str(e))

        field_spec = document.get("field")
        if not isinstance(field_spec, Mapping) or "kind" not in field_spec:
            raise ConfigError("field", "is required and must be an object with a 'kind'")
        if field_spec["kind"] not in FIELDS:
            raise ConfigError("field.kind", "must be one of {}".format(", ".join(FIELDS)))

        epsilon = document.get("epsilon", 0.0)
        if isinstance(epsilon, bool) or not isinstance(epsilon, _NUMBER) or epsilon < 0:
            raise ConfigError("epsilon", "must be a nonnegative number")

        seed = document.get("seed")
        if seed is None and experiment in STOCHASTIC:
            raise ConfigError("seed", "is required for {} runs".format(experiment))
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            raise ConfigError("seed", "must be a nonnegative integer")

        sections = {name: _validate_section(name, document.get(name)) for name in SCHEMAS}
        config = cls(
            experiment=experiment,
            grid=copy.deepcopy(dict(grid)),
            field=copy.deepcopy(dict(field_spec)),
            epsilon=float(epsilon),
            seed=seed,
            scale=scale,
            preset=document.get("preset"),
            name=document.get("name"),
            **sections,
        )
        config._check_consistency()
        return config

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError("<root>", "{} is not valid JSON: {}".format(path, e))
        return cls.from_dict(document)

    def to_dict(self) -> Dict[str, Any]:
        document = dict(
            experiment=self.experiment,
            grid=copy.deepcopy(self.grid),
            field=copy.deepcopy(self.field),
            epsilon=self.epsilon,
            seed=self.seed,
            scale=self.scale,
        )
        if self.preset is not None:
            document["preset"] = self.preset
        if self.name is not None:
            document["name"] = self.name
        for name in SCHEMAS:
            document[name] = copy.deepcopy(getattr(self, name))
        return document

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Return a new config with dotted keys (``optimization.steps``) replaced, re-validated."""
        document = self.to_dict()
        for dotted, value in overrides.items():
            parts = dotted.split(".")
            target = document
            for part in parts[:-1]:
                if not isinstance(target.get(part), dict):
                    raise ConfigError(dotted, "cannot override inside a non-object")
                target = target[part]
            target[parts[-1]] = value
        return RunConfig.from_dict(document)

    def _check_consistency(self):
        if self.experiment == "optimize":
            if self.optimization["target"] not in ("eigen", "feature", "combined"):
                raise ConfigError("optimization.target", "must be eigen, feature or combined")
            if self.optimization["sense"] not in ("enhance", "destroy"):
                raise ConfigError("optimization.sense", "must be enhance or destroy")
            if self.optimization["target"] != "eigen" and self.optimization["feature"] is None:
                raise ConfigError("optimization.feature", "is required for feature targets")
            if self.optimization["target"] == "combined" and self.optimization["enhance_feature"] is None:
                raise ConfigError("optimization.enhance_feature", "is required for the combined target")
            if self.optimization["steps"] < 0:
                raise ConfigError("optimization.steps", "must be nonnegative")
            if self.optimization["radius"] <= 0:
                raise ConfigError("optimization.radius", "must be positive")
            if not self.dictionary["k"] or not self.dictionary["l"] or not self.dictionary["r"]:
                raise ConfigError("dictionary", "mode ranges must be nonempty")
        if self.experiment in ("side-switch",) or (self.experiment == "optimize" and self.simulation["split"] is not None):
            for key in ("lower", "upper", "split"):
                if self.simulation[key] is None:
                    raise ConfigError("simulation.{}".format(key), "is required for side-switch statistics")
        if self.simulation["family"] not in ("level-set", "seba"):
            raise ConfigError("simulation.family", "must be level-set or seba")
        if self.simulation["sign"] not in (1, -1):
            raise ConfigError("simulation.sign", "must be 1 or -1")
        if self.simulation["scheme"] not in ("euler-maruyama", "rk4-maruyama"):
            raise ConfigError("simulation.scheme", "must be euler-maruyama or rk4-maruyama")
        if self.solver["ordering"] not in ("smallest-magnitude", "largest-real"):
            raise ConfigError("solver.ordering", "must be smallest-magnitude or largest-real")
        if self.solver["quadrature"] not in ("midpoint", "gauss3"):
            raise ConfigError("solver.quadrature", "must be midpoint or gauss3")
        if self.solver["n_eigenvalues"] < 1:
            raise ConfigError("solver.n_eigenvalues", "must be positive")
        if self.flux["family"] not in ("translating-disk", "static-rectangle"):
            raise ConfigError("flux.family", "must be translating-disk or static-rectangle")

    def build_grid(self) -> SpaceTimeGrid:
        return build_grid(self.grid)

    def build_field(self) -> VelocityField:
        return build_field(self.field, self.grid["tau"])


def _field_params(spec: Mapping[str, Any], allowed: Tuple[str, ...]) -> Dict[str, Any]:
    params = {k: v for k, v in spec.items() if k != "kind"}
    for key in params:
        if key not in allowed:
            raise ConfigError("field.{}".format(key), "unknown parameter for a {} field".format(spec["kind"]))
    return params


def _double_gyre(spec, tau):
    return double_gyre(tau=tau, **_field_params(spec, ("amplitude", "gamma")))


def _bickley(spec, tau):
    return bickley(
        tau=tau, **_field_params(spec, ("u0", "length", "amplitudes", "speeds", "modes", "earth_radius", "y_extent"))
    )


def _traveling_wave(spec, tau):
    params = _field_params(spec, ("amplitude", "drift", "wave_speed"))
    if "amplitude" not in params:
        raise ConfigError("field.amplitude", "is required for a traveling-wave field")
    return traveling_wave(tau=tau, **params)


def _constant(spec, tau):
    params = _field_params(spec, ("vector", "bounds", "periodic"))
    if "vector" not in params:
        raise ConfigError("field.vector", "is required for a constant field")
    return ConstantField(params["vector"], tau=tau, bounds=params.get("bounds"), periodic=params.get("periodic"))


FIELDS: Dict[str, Callable[[Mapping[str, Any], float], VelocityField]] = {
    "double-gyre": _double_gyre,
    "bickley": _bickley,
    "traveling-wave": _traveling_wave,
    "constant": _constant,
}


def build_field(spec: Mapping[str, Any], tau: float) -> VelocityField:
    """Build the (unreflected) velocity field named by ``spec['kind']``."""
    try:
        builder = FIELDS[spec["kind"]]
    except KeyError:
        raise ConfigError("field.kind", "unknown field {!r}".format(spec.get("kind")))
    try:
        return builder(spec, tau)
    except TypeError as e:
        raise ConfigError("field", str(e))


class Preset(NamedTuple):
    name: str
    description: str
    builder: Callable[[str], Dict[str, Any]]

    def build(self, scale: str = "full") -> Dict[str, Any]:
        if scale not in SCALES:
            raise ConfigError("scale", "must be one of {}".format(", ".join(SCALES)))
        document = self.builder(scale)
        document.setdefault("preset", self.name)
        document.setdefault("scale", scale)
        document.setdefault("name", self.name)
        return document


def _double_gyre_grid(scale):
    full = scale == "full"
    return dict(
        tau=4.0,
        n_time=80 if full else 40,
        bounds=[[0.0, 2.0], [0.0, 1.0]],
        boxes=[100, 50] if full else [40, 20],
        bc="reflecting",
    )


def _double_gyre_spectrum(scale):
    return dict(
        experiment="spectrum",
        grid=_double_gyre_grid(scale),
        field=dict(kind="double-gyre", amplitude=0.25, gamma=0.25),
        epsilon=0.1,
        solver=dict(n_eigenvalues=6),
    )


def _double_gyre_optimization(scale, mode, sense, n_eigenvalues):
    full = scale == "full"
    return dict(
        experiment="optimize",
        grid=_double_gyre_grid(scale),
        field=dict(kind="double-gyre", amplitude=0.25, gamma=0.25),
        epsilon=0.1,
        seed=2020,
        solver=dict(n_eigenvalues=n_eigenvalues),
        dictionary=dict(k=[1, 2, 3, 4, 5], l=[1, 2, 3], r=[-1, 0, 2]),
        optimization=dict(target="eigen", mode=mode, sense=sense, steps=8 if full else 2, radius=0.05),
        simulation=dict(
            n=200000 if full else 20000,
            dt=0.01,
            lower=[1.0, 0.0],
            upper=[2.0, 1.0],
            split=1.0,
            axis=0,
            epsilons=[0.1, 0.01],
        ),
    )


def _bickley_grid(scale):
    full = scale == "full"
    return dict(
        tau=9.0,
        n_time=108 if full else 54,
        bounds=[[0.0, math.pi * EARTH_RADIUS_MM], [-3.0, 3.0]],
        boxes=[120, 36] if full else [60, 18],
        bc=["periodic", "outflow"],
    )


def _bickley_base(scale, experiment):
    return dict(
        experiment=experiment,
        grid=_bickley_grid(scale),
        field=dict(kind="bickley"),
        epsilon=0.1,
        solver=dict(n_eigenvalues=10),
    )


def _bickley_particles(scale):
    document = _bickley_base(scale, "coherence-mc")
    document["seed"] = 2020
    document["seba"] = dict(level=0.4)
    document["simulation"] = dict(n=100000 if scale == "full" else 10000, dt=1 / 48, family="seba", mode=6)
    return document


def _traveling_wave_feature(scale):
    full = scale == "full"
    return dict(
        experiment="optimize",
        grid=dict(
            tau=4.0,
            n_time=80 if full else 40,
            bounds=[[0.0, 2 * math.pi], [0.0, math.pi]],
            boxes=[80, 40] if full else [32, 16],
            bc=["periodic", "reflecting"],
        ),
        field=dict(kind="traveling-wave", amplitude=1.0, drift=1.0, wave_speed=0.25),
        epsilon=0.1,
        seed=2020,
        dictionary=dict(
            k=list(range(2, 21, 2)) if full else [2, 4, 6],
            l=[1, 2, 3, 4, 5] if full else [1, 2],
            r=[-1, 0, 2],
            speeds=[0.25, 0.0],
        ),
        optimization=dict(
            target="feature",
            sense="enhance",
            steps=35 if full else 3,
            radius=0.1,
            feature=dict(kind="cosine", wavenumber=2.0, axis=1),
        ),
    )


def _flux_identity_demo(scale):
    n = 200 if scale == "full" else 100
    return dict(
        experiment="flux",
        grid=dict(tau=2.0, n_time=2, bounds=[[0.0, 2.0], [0.0, 1.0]], boxes=[2, 1], bc="reflecting"),
        field=dict(kind="double-gyre", amplitude=0.25, gamma=0.25),
        flux=dict(family="translating-disk", center=[0.6, 0.5], radius=0.2, velocity=[0.2, 0.0], n_t=n, n_r=n),
    )


PRESETS: Dict[str, Preset] = {
    p.name: p
    for p in [
        Preset("double-gyre-spectrum", "Leading generator eigenvalues of the double gyre (eps=0.1, tau=4)", _double_gyre_spectrum),
        Preset(
            "double-gyre-increase",
            "Enhance the left-right coherence of the double gyre: 8 steps, R=0.05, 45 dictionary fields",
            lambda scale: _double_gyre_optimization(scale, mode=2, sense="enhance", n_eigenvalues=6),
        ),
        Preset(
            "double-gyre-decrease",
            "Destroy the gyre mode of the double gyre: 8 steps, R=0.05, 45 dictionary fields",
            lambda scale: _double_gyre_optimization(scale, mode=5, sense="destroy", n_eigenvalues=8),
        ),
        Preset("bickley-spectrum", "Bickley jet spectrum with companion eigenvalues (tau=9, outflow in y)", lambda scale: _bickley_base(scale, "spectrum")),
        Preset("bickley-seba", "Sparse vortex features of the Bickley jet from its six leading eigenvectors", lambda scale: _bickley_base(scale, "seba")),
        Preset("bickley-particles", "Monte Carlo retention of particles seeded in a Bickley vortex", _bickley_particles),
        Preset("traveling-wave-feature", "Enhance the coherence of a layered feature in a traveling wave: 35 steps, R=0.1", _traveling_wave_feature),
        Preset("flux-identity-demo", "Cumulative versus augmented absolute flux of a disk translating in the double gyre", _flux_identity_demo),
    ]
}


def list_presets() -> List[Tuple[str, str]]:
    """Preset names and descriptions, in a stable order."""
    return [(p.name, p.description) for p in PRESETS.values()]
