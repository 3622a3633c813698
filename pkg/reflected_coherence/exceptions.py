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


class CoherenceError(Exception):
    """Base class for every error raised by reflected_coherence."""


class GridError(CoherenceError, ValueError):
    pass


class DomainError(CoherenceError, ValueError):
    """A point or time lies outside the domain of a grid or field."""


class AssemblyError(CoherenceError, ValueError):
    pass


class SpectrumError(CoherenceError):
    pass


class FactorizationError(SpectrumError):
    """The shifted matrix could not be factored at any shift on the retry ladder."""


class ConvergenceError(SpectrumError):
    pass


class MultiplicityError(SpectrumError):
    """Requested eigenvalues are not simple; ``cluster`` holds the offending values."""

    def __init__(self, message, cluster=()):
        super().__init__(message)
        self.cluster = tuple(cluster)


class TrackingError(CoherenceError):
    def __init__(self, message, correlation=None):
        super().__init__(message)
        self.correlation = correlation


class FamilyError(CoherenceError, ValueError):
    pass


class SEBAError(CoherenceError, ValueError):
    pass


class FluxError(CoherenceError, ValueError):
    pass


class SimulationError(CoherenceError, ValueError):
    pass


class OptimizationError(CoherenceError):
    pass


class ConstraintError(OptimizationError, ValueError):
    """The energy Gram matrix is not symmetric positive definite."""


class StationaryError(OptimizationError):
    """The cost vector vanishes, so there is no direction to move in."""


class KKTError(OptimizationError):
    pass


class DictionaryError(OptimizationError, ValueError):
    """A perturbation dictionary cannot be built from the requested modes."""


class ConfigError(CoherenceError, ValueError):
    """A run configuration is malformed; ``key`` is the dotted path of the bad entry."""

    def __init__(self, key, message):
        super().__init__("{}: {}".format(key, message))
        self.key = key


class PhaseError(CoherenceError):
    """Wraps an error raised while a pipeline phase was executing."""

    def __init__(self, phase, error):
        super().__init__("[{}] {}".format(phase, error))
        self.phase = phase
        self.error = error
