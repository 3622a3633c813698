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
from typing import Tuple

import numpy as np
import scipy.linalg

from .exceptions import SimulationError

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


def arnoldi(matrix, v: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray, bool]:
    """
    Build an orthonormal Krylov basis with modified Gram-Schmidt.

    ``v`` must have unit norm. Returns ``(V, H, breakdown)``. Normally ``V`` has ``m + 1`` columns and
    ``H`` is ``(m + 1, m)``. On a happy breakdown the Krylov space is invariant,
    ``V`` has ``j`` columns and ``H`` is square ``(j, j)``.
    """
    n = v.shape[0]
    dtype = np.result_type(v.dtype, matrix.dtype)
    V = np.zeros((n, m + 1), dtype=dtype)
    H = np.zeros((m + 1, m), dtype=dtype)
    V[:, 0] = v

    for j in range(m):
        w = matrix @ V[:, j]
        scale = np.linalg.norm(w)
        for i in range(j + 1):
            H[i, j] = np.vdot(V[:, i], w)
            w = w - H[i, j] * V[:, i]
        H[j + 1, j] = np.linalg.norm(w)
        if H[j + 1, j] <= 1e-13 * max(scale, 1e-300):
            H[j + 1, j] = 0.0
            return V[:, : j + 1], H[: j + 1, : j + 1], True
        V[:, j + 1] = w / H[j + 1, j]

    return V, H, False


def krylov_expmv(
    matrix, v: np.ndarray, t: float = 1.0, m: int = 30, tol: float = 1e-12, max_halvings: int = 30
) -> np.ndarray:
    """
    Approximate ``expm(t * matrix) @ v`` by projecting onto Krylov subspaces of size ``m``.

    The step ``t`` is split into substeps; a substep is halved until the a
    posteriori error estimate ``beta * h_{m+1,m} * |[expm(dt H_m)]_{m,1}|``
    drops below ``tol * beta``. ``matrix`` may be anything supporting ``@``.
    """
    w = np.array(v, dtype=np.result_type(v.dtype, matrix.dtype, float))
    n = w.shape[0]
    m = max(1, min(int(m), n))
    if t == 0:
        return w

    remaining = float(t)
    dt = float(t)
    halvings = 0
    substeps = 0
    while remaining > 1e-14 * abs(t):
        dt = min(dt, remaining)
        beta = np.linalg.norm(w)
        if beta == 0:
            return w

        V, H, breakdown = arnoldi(matrix, w / beta, m)
        if breakdown:
            # invariant subspace, the projection is exact
            w = beta * (V @ scipy.linalg.expm(remaining * H)[:, 0])
            substeps += 1
            break

        E = scipy.linalg.expm(dt * H[:m, :m])
        error = beta * abs(H[m, m - 1]) * abs(E[m - 1, 0])
        if error > tol * beta:
            halvings += 1
            if halvings > max_halvings:
                raise SimulationError(
                    "Krylov exponential did not reach tolerance {} after {} halvings".format(tol, max_halvings)
                )
            dt /= 2
            continue

        w = beta * (V[:, :m] @ E[:, 0])
        remaining -= dt
        substeps += 1

    logger.debug("Krylov exponential took {} substeps, {} halvings".format(substeps, halvings))
    return w
