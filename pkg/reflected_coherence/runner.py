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

"""Batch pipelines behind ``reflected_coherence run`` and ``reproduce``."""

import contextlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from . import artifacts
from .coherent import (
    combination_coefficients,
    coherence_bound,
    contribution_check,
    level_set_family,
    seba,
    superlevel_family,
)
from .config import RunConfig
from .exceptions import CoherenceError, ConfigError, PhaseError
from .flux import MirroredFamily, StaticRectangle, TranslatingDisk, augmented_flux, cumulative_outflux
from .generator import Quadrature, assemble_augmented, perturbation_generators
from .optimize import (
    CombinedFeatureTarget,
    EigenTarget,
    FeatureTarget,
    Sense,
    build_dictionary,
    cosine_profile,
    feature_vector,
    gram_matrix,
    group_by_spatial_mode,
    iterate_optimization,
    normalize_feature,
    perturbation_streamfunction,
)
from .simulate import Domain, coherence_ratio_mc, side_switch_fraction
from .spectral import Ordering, SolverSettings, classify_companions, leading_spectrum, to_singular_value
from .velocity import reflect
from .version import __version__

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """Everything needed to re-run an experiment, plus what it produced."""

    config: Dict[str, Any]
    version: str = __version__
    phases: List[Dict[str, Any]] = field(default_factory=list)
    results: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return dict(
            config=self.config, version=self.version, phases=self.phases, results=self.results, artifacts=self.artifacts
        )

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "RunManifest":
        try:
            return cls(
                config=document["config"],
                version=document.get("version", __version__),
                phases=document.get("phases", []),
                results=document.get("results", {}),
                artifacts=document.get("artifacts", []),
            )
        except (KeyError, TypeError):
            raise ConfigError("config", "manifest has no configuration")

    @classmethod
    def from_json(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)


def _complex(z) -> Dict[str, float]:
    z = complex(z)
    return dict(re=z.real, im=z.imag)


class _Run:
    def __init__(self, config: RunConfig, out_dir, workers: Optional[int], on_phase: Optional[Callable[[str], None]]):
        self.config = config
        self.writer = artifacts.ArtifactWriter(out_dir)
        self.workers = workers
        self.on_phase = on_phase
        self.manifest = RunManifest(config=config.to_dict())
        self.grid = config.build_grid()
        self.field = config.build_field()
        self.settings = SolverSettings(
            ncv=config.solver["ncv"],
            tol=config.solver["tol"],
            maxiter=config.solver["maxiter"],
            shift_scale=config.solver["shift_scale"],
            residual_tol=config.solver["residual_tol"],
        )
        self.quadrature = Quadrature(config.solver["quadrature"])
        self.slabs = config.output["slabs"] if config.output["slabs"] is not None else [0, self.grid.n_half]

    @contextlib.contextmanager
    def phase(self, name: str):
        if self.on_phase is not None:
            self.on_phase(name)
        logger.info("Starting phase {}".format(name))
        start = time.perf_counter()
        try:
            yield
        except PhaseError:
            raise
        except (CoherenceError, OSError) as e:
            raise PhaseError(name, e) from e
        finally:
            self.manifest.phases.append(dict(name=name, seconds=time.perf_counter() - start))

    @property
    def results(self) -> Dict[str, Any]:
        return self.manifest.results

    # spectrum

    def spectrum(self):
        with self.phase("assemble"):
            G = assemble_augmented(
                self.grid,
                self.field,
                self.config.epsilon,
                quadrature=self.quadrature,
                reuse_reflection=self.config.solver["reuse_reflection"],
                workers=self.workers,
            )
            self.results["dimension"] = G.dimension
            self.results["nnz"] = G.nnz
            if self.config.output["matrix"]:
                self.writer.matrix("generator", G.matrix)

        with self.phase("eigensolve"):
            ordering = Ordering(self.config.solver["ordering"])
            spectrum = leading_spectrum(G, self.config.solver["n_eigenvalues"], ordering=ordering, settings=self.settings)

        with self.phase("companions"):
            companions = classify_companions(
                spectrum, self.grid.tau, self.grid.h, self.grid, tol=self.config.solver["companion_tol"]
            )

        with self.phase("export-spectrum"):
            tau = self.grid.tau
            self.writer.csv("spectrum.csv", spectrum.as_dataframe(tau, companions))
            if self.config.output["binary"]:
                self.writer.array("eigenvectors.bin", spectrum.right_vectors)
            for i in range(len(spectrum)):
                self.writer.fibers(
                    "eigenvector{:02d}".format(i + 1), spectrum.right_vectors[:, i], self.grid, self.slabs, self.config.output["heatmaps"]
                )
            self.results["eigenvalues"] = [_complex(mu) for mu in spectrum.eigenvalues]
            self.results["sigma"] = [
                None if i in companions else to_singular_value(mu, tau) for i, mu in enumerate(spectrum.eigenvalues)
            ]
            self.results["companions"] = [
                dict(index=c.index + 1, parent=c.parent + 1, k=c.k, distance=c.distance, correlation=c.correlation)
                for c in companions.values()
            ]
            self.results["shift"] = _complex(spectrum.shift)

        with self.phase("bounds"):
            bounds = []
            for i, mu in enumerate(spectrum.eigenvalues):
                if not spectrum.is_real(i) or mu.real >= 0:
                    continue
                bound = coherence_bound(mu, spectrum.right_vectors[:, i], self.grid)
                bounds.append(dict(index=i + 1, value=bound.value, numerator=math.exp(bound.mu * tau), heuristic=bound.heuristic))
            self.results["bounds"] = bounds

        return G, spectrum, companions

    # seba

    def _seba_modes(self, spectrum, companions) -> List[int]:
        modes = self.config.seba["modes"]
        if modes is not None:
            return [int(m) - 1 for m in modes]
        chosen = [
            i for i in range(len(spectrum)) if spectrum.is_real(i) and not (self.config.seba["skip_companions"] and i in companions)
        ]
        return chosen[:6]

    def sparse_features(self, spectrum, companions):
        modes = self._seba_modes(spectrum, companions)
        with self.phase("seba"):
            vectors = np.real(spectrum.right_vectors[:, modes])
            basis = seba(vectors, max_iter=self.config.seba["max_iter"], tol=self.config.seba["tol"])
            alphas = combination_coefficients(basis.vectors, vectors)

        with self.phase("export-seba"):
            if self.config.output["binary"]:
                self.writer.array("seba.bin", basis.vectors)
            features = []
            for j in range(len(basis)):
                phi = basis.vectors[:, j]
                self.writer.fibers("seba{:02d}".format(j + 1), phi, self.grid, self.slabs, self.config.output["heatmaps"])
                family = superlevel_family(phi, self.grid, self.config.seba["level"])
                self.writer.csv("seba{:02d}_mask.csv".format(j + 1), family.as_dataframe())
                combined = level_set_family(vectors @ alphas[:, j], self.grid)
                check = contribution_check(alphas[:, j], vectors, combined)
                features.append(
                    dict(index=j + 1, measure=family.measure(), alphas=check.alphas.tolist(), zeroed=[z + 1 for z in check.zeroed])
                )
            self.results["seba"] = dict(
                modes=[m + 1 for m in modes],
                iterations=basis.iterations,
                converged=basis.converged,
                principal_angle=basis.principal_angle(vectors),
                features=features,
            )
        return basis

    # particles

    def coherence_mc(self):
        _, spectrum, companions = self.spectrum()
        simulation = self.config.simulation
        mode = simulation["mode"] - 1
        if simulation["family"] == "seba":
            basis = self.sparse_features(spectrum, companions)
            with self.phase("family"):
                family = superlevel_family(basis.vectors[:, mode], self.grid, self.config.seba["level"])
            bound = None
        else:
            with self.phase("family"):
                vector = spectrum.right_vectors[:, mode]
                family = level_set_family(vector, self.grid, simulation["sign"])
                mu = spectrum.eigenvalues[mode]
                bound = coherence_bound(mu, vector, self.grid, simulation["sign"]) if spectrum.is_real(mode) and mu.real < 0 else None
        self.writer.csv("family_mask.csv", family.as_dataframe())

        with self.phase("monte-carlo"):
            estimate = coherence_ratio_mc(
                family,
                self.field,
                self.config.epsilon,
                simulation["n"],
                dt=simulation["dt"],
                seed=self.config.seed,
                scheme=simulation["scheme"],
                workers=self.workers,
            )
        self.results["coherence_ratio"] = dict(
            value=estimate.value,
            stderr=estimate.stderr,
            n=estimate.n,
            check_interval=estimate.check_interval,
            bound=None if bound is None else bound.value,
            heuristic=None if bound is None else bound.heuristic,
        )

    def _side_switch(self, field, label: str) -> List[Dict[str, Any]]:
        simulation = self.config.simulation
        epsilons = simulation["epsilons"] or [self.config.epsilon]
        dt = simulation["dt"] if simulation["dt"] is not None else self.grid.tau / (4 * self.grid.n_time)
        rows = []
        for epsilon in epsilons:
            with self.phase("side-switch-{}".format(label)):
                estimate = side_switch_fraction(
                    field,
                    epsilon,
                    simulation["n"],
                    simulation["lower"],
                    simulation["upper"],
                    simulation["split"],
                    t1=self.grid.tau,
                    dt=dt,
                    axis=simulation["axis"],
                    seed=self.config.seed,
                    scheme=simulation["scheme"],
                    domain=Domain.from_grid(self.grid),
                    workers=self.workers,
                )
            rows.append(dict(field=label, epsilon=epsilon, fraction=estimate.value, stderr=estimate.stderr, n=estimate.n))
        return rows

    def side_switch(self):
        rows = self._side_switch(self.field, "base")
        self.writer.csv("side_switch.csv", pd.DataFrame(rows))
        self.results["side_switch"] = rows

    # flux

    def flux(self):
        spec = self.config.flux
        tau = self.grid.tau
        if spec["family"] == "translating-disk":
            family = TranslatingDisk(spec["center"], spec["radius"], spec["velocity"], horizon=tau)
        else:
            family = StaticRectangle(spec["lower"], spec["upper"], horizon=tau)
        nodes = dict(n_t=spec["n_t"], n_r=spec["n_r"], workers=self.workers)

        with self.phase("flux"):
            outflux = cumulative_outflux(family, self.field, positive_part=True, **nodes)
            absolute = cumulative_outflux(family, self.field, positive_part=False, **nodes)
            augmented = augmented_flux(family, self.field, absolute=True, **nodes)
        with self.phase("reflected-flux"):
            reflected = reflect(self.field, tau)
            mirrored_outflux = cumulative_outflux(MirroredFamily(family), reflected, positive_part=True, **nodes)
            reflected_augmented = augmented_flux(family, reflected, absolute=False, **nodes)

        scale = max(abs(absolute), abs(augmented), 1e-300)
        self.results["flux"] = dict(
            family=repr(family),
            cumulative_outflux=outflux,
            cumulative_absolute=absolute,
            augmented_absolute=augmented,
            mirrored_outflux=mirrored_outflux,
            reflected_augmented_outflux=reflected_augmented,
            identity_discrepancy=abs(absolute - augmented) / scale,
            reflected_discrepancy=abs(absolute - mirrored_outflux) / max(abs(absolute), abs(mirrored_outflux), 1e-300),
        )
        self.writer.csv("flux.csv", pd.DataFrame([self.results["flux"]]))

    # optimization

    def _report_step(self, record):
        if self.on_phase is not None:
            self.on_phase("optimize step {}".format(record.step))

    def _feature(self, spec: Dict[str, Any], key: str):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        if kind != "cosine":
            raise ConfigError(key, "unknown feature kind {!r}".format(kind))
        try:
            profile = cosine_profile(**spec)
        except TypeError as e:
            raise ConfigError(key, str(e))
        return normalize_feature(feature_vector(self.grid, profile), self.grid)

    def _target(self):
        opt = self.config.optimization
        if opt["target"] == "eigen":
            return EigenTarget(opt["mode"] - 1, self.config.solver["n_eigenvalues"], opt["tracking_threshold"])
        destroy = self._feature(opt["feature"], "optimization.feature")
        if opt["target"] == "feature":
            return FeatureTarget(destroy)
        enhance = self._feature(opt["enhance_feature"], "optimization.enhance_feature")
        return CombinedFeatureTarget(destroy, enhance, *opt["alphas"])

    def optimize(self):
        opt = self.config.optimization
        spec = self.config.dictionary
        with self.phase("dictionary"):
            dictionary = build_dictionary(
                spec["k"],
                spec["l"],
                np.column_stack([self.grid.lower, self.grid.upper]),
                self.grid.tau,
                r_values=spec["r"],
                speeds=spec["speeds"],
                periodic=self.grid.periodic,
            )
        with self.phase("gram"):
            constraint = gram_matrix(dictionary, spec["omega"], spec["order"], radius=opt["radius"])
        with self.phase("perturbations"):
            generators = perturbation_generators(self.grid, dictionary.fields(), quadrature=self.quadrature, workers=self.workers)
            target = self._target()

        with self.phase("optimize"):
            state = iterate_optimization(
                self.grid,
                self.field,
                self.config.epsilon,
                dictionary,
                constraint,
                target,
                sense=Sense(opt["sense"]),
                steps=opt["steps"],
                generators=generators,
                settings=self.settings,
                quadrature=self.quadrature,
                workers=self.workers,
                callback=self._report_step,
            )

        with self.phase("export-optimization"):
            self.writer.csv("optimization.csv", state.as_dataframe())
            self.writer.csv("coefficients.csv", dictionary.as_dataframe().assign(coefficient=state.coefficients))
            self.writer.csv("coefficient_groups.csv", group_by_spatial_mode(dictionary, state.coefficients))
            stream_time = opt["stream_time"] if opt["stream_time"] is not None else self.grid.tau / 4
            xs, ys, psi = perturbation_streamfunction(dictionary, state.coefficients, stream_time)
            X, Y = np.meshgrid(xs, ys)
            self.writer.csv(
                "streamfunction.csv", pd.DataFrame(dict(x=X.ravel(), y=Y.ravel(), psi=psi.ravel())), time=stream_time
            )
            if self.config.output["binary"]:
                self.writer.array("coefficients.bin", state.coefficients)

        trajectory = state.trajectory
        self.results["optimization"] = dict(
            target=state.target,
            sense=state.sense.value,
            steps=state.steps_taken,
            trajectory=trajectory.tolist(),
            change=float(trajectory[-1] - trajectory[0]) if len(trajectory) else 0.0,
            z=[r.z for r in state.records],
            tracked_indices=[None if i is None else i + 1 for i in state.tracked_indices],
            initial_eigenvalue=None if state.initial_eigenvalue is None else _complex(state.initial_eigenvalue),
            final_eigenvalue=None
            if not state.accepted or state.accepted[-1].eigenvalue is None
            else _complex(state.accepted[-1].eigenvalue),
            halted=state.halted,
            gram_condition=constraint.condition_number(),
        )

        if self.config.simulation["split"] is not None:
            perturbed = self.field + dictionary.combination(state.coefficients)
            rows = self._side_switch(self.field, "base") + self._side_switch(perturbed, "optimized")
            self.writer.csv("side_switch.csv", pd.DataFrame(rows))
            self.results["side_switch"] = rows

    def execute(self) -> RunManifest:
        experiment = self.config.experiment
        if experiment == "spectrum":
            self.spectrum()
        elif experiment == "seba":
            _, spectrum, companions = self.spectrum()
            self.sparse_features(spectrum, companions)
        elif experiment == "coherence-mc":
            self.coherence_mc()
        elif experiment == "side-switch":
            self.side_switch()
        elif experiment == "flux":
            self.flux()
        elif experiment == "optimize":
            self.optimize()

        self.manifest.artifacts = list(self.writer.records)
        self.writer.json(MANIFEST_NAME, self.manifest.to_dict(), record=False)
        return self.manifest


def run(
    config: RunConfig, out_dir, workers: Optional[int] = None, on_phase: Optional[Callable[[str], None]] = None
) -> RunManifest:
    """Execute the experiment described by ``config``, writing artifacts and ``manifest.json`` to ``out_dir``."""
    logger.info("Running {} experiment{}".format(config.experiment, "" if config.name is None else " " + config.name))
    try:
        runner = _Run(config, out_dir, workers, on_phase)
    except CoherenceError as e:
        raise PhaseError("setup", e) from e
    return runner.execute()


def rerun(manifest_path, out_dir, workers: Optional[int] = None, on_phase=None) -> RunManifest:
    """Re-run the experiment recorded in a manifest."""
    return run(RunManifest.from_json(manifest_path).run_config(), out_dir, workers=workers, on_phase=on_phase)


def scalar_differences(a: Dict[str, Any], b: Dict[str, Any], prefix: str = "") -> List[str]:
    """Dotted keys where two result documents differ."""
    if isinstance(a, dict) and isinstance(b, dict):
        keys = sorted(set(a) | set(b))
        return [d for k in keys for d in scalar_differences(a.get(k), b.get(k), "{}{}.".format(prefix, k))]
    if isinstance(a, list) and isinstance(b, list) and len(a) == len(b):
        return [d for i, (x, y) in enumerate(zip(a, b)) for d in scalar_differences(x, y, "{}{}.".format(prefix, i))]
    if a != b and not (isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b)):
        return [prefix.rstrip(".")]
    return []
