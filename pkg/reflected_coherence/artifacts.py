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

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .grid import SpaceTimeGrid

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

ARRAY_MAGIC = b"RCARRAY1"
MATRIX_MAGIC = b"RCSPMAT1"

_REAL, _COMPLEX = 0, 1


def sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_array(path, array: np.ndarray) -> None:
    """
    Binary array: magic, ``<u4`` dtype code (0 real, 1 complex), ``<u4`` ndim,
    ``<u8`` shape, then the C-ordered payload as little-endian 64-bit floats
    (complex entries as interleaved real, imaginary pairs).
    """
    array = np.asarray(array)
    code = _COMPLEX if np.iscomplexobj(array) else _REAL
    payload = array.astype("<c16" if code == _COMPLEX else "<f8", copy=False)
    with open(path, "wb") as f:
        f.write(ARRAY_MAGIC)
        f.write(np.array([code, array.ndim], dtype="<u4").tobytes())
        f.write(np.array(array.shape, dtype="<u8").tobytes())
        f.write(np.ascontiguousarray(payload).tobytes())


def read_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != ARRAY_MAGIC:
        raise ValueError("{} is not a binary array file".format(path))
    code, ndim = np.frombuffer(data, dtype="<u4", count=2, offset=8)
    shape = tuple(int(s) for s in np.frombuffer(data, dtype="<u8", count=int(ndim), offset=16))
    offset = 16 + 8 * int(ndim)
    dtype = "<c16" if code == _COMPLEX else "<f8"
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).copy()


def write_matrix(path, matrix) -> None:
    """Binary sparse matrix: magic, ``<u8`` rows, cols, nnz, then ``<i8`` row and column indices and ``<f8`` values."""
    coo = sp.coo_matrix(matrix)
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(np.array([coo.shape[0], coo.shape[1], coo.nnz], dtype="<u8").tobytes())
        f.write(coo.row.astype("<i8").tobytes())
        f.write(coo.col.astype("<i8").tobytes())
        f.write(coo.data.astype("<f8").tobytes())


def read_matrix(path) -> sp.csr_matrix:
    data = Path(path).read_bytes()
    if data[:8] != MATRIX_MAGIC:
        raise ValueError("{} is not a binary matrix file".format(path))
    n_rows, n_cols, nnz = (int(v) for v in np.frombuffer(data, dtype="<u8", count=3, offset=8))
    offset = 32
    rows = np.frombuffer(data, dtype="<i8", count=nnz, offset=offset)
    cols = np.frombuffer(data, dtype="<i8", count=nnz, offset=offset + 8 * nnz)
    vals = np.frombuffer(data, dtype="<f8", count=nnz, offset=offset + 16 * nnz)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))


def write_triplets(path, matrix) -> None:
    """Plain-text ``row col value`` lines, zero-based."""
    coo = sp.coo_matrix(matrix)
    frame = pd.DataFrame(dict(row=coo.row, col=coo.col, value=coo.data))
    frame.to_csv(path, sep=" ", index=False, header=False, float_format="%.17g")


def fiber_image(vector: np.ndarray, grid: SpaceTimeGrid, slab: int) -> np.ndarray:
    """The real part of one slab fiber as a 2-D image with the highest ``y`` in the first row."""
    if grid.d != 2:
        raise ValueError("images need a planar grid, got {} dimensions".format(grid.d))
    fiber = np.real(grid.fibers(vector)[slab]).reshape(tuple(grid.n_boxes))
    return fiber.T[::-1]


def write_pgm(path, image: np.ndarray) -> Tuple[float, float]:
    """8-bit binary PGM with a linear mapping of ``[min, max]`` onto ``[0, 255]``; returns the range."""
    image = np.asarray(image, dtype=float)
    lo, hi = float(np.min(image)), float(np.max(image))
    span = hi - lo if hi > lo else 1.0
    pixels = np.round(255 * (image - lo) / span).astype(np.uint8)
    with open(path, "wb") as f:
        f.write("P5\n{} {}\n255\n".format(image.shape[1], image.shape[0]).encode("ascii"))
        f.write(pixels.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = data.split(b"\n", 3)
    if header[0] != b"P5":
        raise ValueError("{} is not a binary PGM".format(path))
    width, height = (int(v) for v in header[1].split())
    return np.frombuffer(header[3], dtype=np.uint8).reshape(height, width)


class ArtifactWriter:
    """Writes every artifact of a run under one directory and records a checksum for each."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.records: List[Dict[str, Any]] = []

    def _record(self, name: str, kind: str, **meta) -> Path:
        path = self.out_dir / name
        entry = dict(path=name, kind=kind, sha256=sha256(path), bytes=path.stat().st_size)
        entry.update(meta)
        self.records.append(entry)
        logger.debug("Wrote {} ({})".format(path, kind))
        return path

    def path(self, name: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def csv(self, name: str, frame: pd.DataFrame, **meta) -> Path:
        frame.to_csv(self.path(name), index=False)
        return self._record(name, "csv", **meta)

    def array(self, name: str, array: np.ndarray, **meta) -> Path:
        write_array(self.path(name), array)
        return self._record(name, "array", shape=list(np.shape(array)), **meta)

    def matrix(self, name: str, matrix, triplets: bool = True) -> List[Path]:
        write_matrix(self.path(name + ".bin"), matrix)
        paths = [self._record(name + ".bin", "matrix", shape=list(matrix.shape))]
        if triplets:
            write_triplets(self.path(name + ".txt"), matrix)
            paths.append(self._record(name + ".txt", "triplets", shape=list(matrix.shape)))
        return paths

    def heatmap(self, name: str, image: np.ndarray, **meta) -> Path:
        lo, hi = write_pgm(self.path(name), image)
        return self._record(name, "pgm", min=lo, max=hi, **meta)

    def fibers(self, stem: str, vector: np.ndarray, grid: SpaceTimeGrid, slabs, heatmaps: bool = True) -> None:
        """One CSV grid (and optionally one PGM) per requested slab."""
        for slab in slabs:
            image = fiber_image(vector, grid, slab)
            self.csv("{}_slab{:03d}.csv".format(stem, slab), pd.DataFrame(image), slab=slab)
            if heatmaps:
                self.heatmap("{}_slab{:03d}.pgm".format(stem, slab), image, slab=slab)

    def json(self, name: str, document: Dict[str, Any], record: bool = True) -> Path:
        self.path(name).write_text(json.dumps(document, indent=2, sort_keys=True, default=_jsonable))
        if record:
            return self._record(name, "json")
        return self.out_dir / name


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return dict(re=value.real, im=value.imag)
    if isinstance(value, Path):
        return str(value)
    raise TypeError("cannot serialize {!r}".format(value))


def verify(out_dir, records: List[Dict[str, Any]]) -> List[str]:
    """Return the artifacts whose checksum no longer matches."""
    out_dir = Path(out_dir)
    return [r["path"] for r in records if not (out_dir / r["path"]).exists() or sha256(out_dir / r["path"]) != r["sha256"]]
