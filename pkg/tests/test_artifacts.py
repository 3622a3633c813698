import json

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp

from reflected_coherence.artifacts import (
    ARRAY_MAGIC,
    ArtifactWriter,
    fiber_image,
    read_array,
    read_matrix,
    read_pgm,
    verify,
    write_array,
    write_matrix,
    write_pgm,
)


def test_array_layout(tmp_path):
    path = tmp_path / "a.bin"
    array = np.arange(6, dtype=float).reshape(2, 3)
    write_array(path, array)
    data = path.read_bytes()
    assert data[:8] == ARRAY_MAGIC
    assert np.frombuffer(data, dtype="<u4", count=2, offset=8).tolist() == [0, 2]
    assert np.frombuffer(data, dtype="<u8", count=2, offset=16).tolist() == [2, 3]
    assert len(data) == 32 + 6 * 8
    assert np.array_equal(read_array(path), array)


def test_complex_array(tmp_path):
    path = tmp_path / "c.bin"
    array = np.array([1 + 2j, -3j])
    write_array(path, array)
    back = read_array(path)
    assert np.iscomplexobj(back)
    assert np.array_equal(back, array)


def test_matrix_file(tmp_path):
    path = tmp_path / "m.bin"
    matrix = sp.csr_matrix(np.array([[0.0, 1.5, 0.0], [-2.0, 0.0, 0.5]]))
    write_matrix(path, matrix)
    back = read_matrix(path)
    assert back.shape == (2, 3)
    assert np.array_equal(back.toarray(), matrix.toarray())


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTMAGIC" + bytes(16))
    with pytest.raises(ValueError):
        read_array(path)
    with pytest.raises(ValueError):
        read_matrix(path)


def test_pgm_scales_to_bytes(tmp_path):
    path = tmp_path / "img.pgm"
    image = np.array([[0.0, 0.5], [1.0, 2.0]])
    assert write_pgm(path, image) == (0.0, 2.0)
    pixels = read_pgm(path)
    assert pixels.shape == (2, 2)
    assert pixels.tolist() == [[0, 64], [128, 255]]


def test_constant_pgm(tmp_path):
    path = tmp_path / "flat.pgm"
    write_pgm(path, np.ones((3, 4)))
    assert np.all(read_pgm(path) == 0)


def test_fiber_image_orientation(unit_grid):
    vector = np.zeros(unit_grid.dimension)
    # box (ix=3, iy=0) of slab 0: bottom right
    vector[unit_grid.ravel(0, (3, 0))] = 1.0
    image = fiber_image(vector, unit_grid, 0)
    assert image.shape == (4, 4)
    assert image[3, 3] == 1.0
    assert image.sum() == 1.0


def test_writer_records_and_verifies(tmp_path, unit_grid):
    writer = ArtifactWriter(tmp_path / "out")
    writer.csv("table.csv", pd.DataFrame(dict(a=[1, 2])))
    writer.array("vector.bin", np.ones(3))
    writer.matrix("generator", sp.eye(3))
    writer.fibers("mode", np.arange(unit_grid.dimension, dtype=float), unit_grid, slabs=[0, 1])
    names = [r["path"] for r in writer.records]
    assert names == [
        "table.csv",
        "vector.bin",
        "generator.bin",
        "generator.txt",
        "mode_slab000.csv",
        "mode_slab000.pgm",
        "mode_slab001.csv",
        "mode_slab001.pgm",
    ]
    assert verify(writer.out_dir, writer.records) == []

    (writer.out_dir / "table.csv").write_text("a\n3\n")
    (writer.out_dir / "vector.bin").unlink()
    assert verify(writer.out_dir, writer.records) == ["table.csv", "vector.bin"]


def test_writer_json(tmp_path):
    writer = ArtifactWriter(tmp_path)
    writer.json("doc.json", dict(value=np.float64(1.5), z=complex(1, -2), v=np.arange(2)))
    document = json.loads((tmp_path / "doc.json").read_text())
    assert document == dict(value=1.5, z=dict(re=1.0, im=-2.0), v=[0, 1])
    assert writer.records[0]["kind"] == "json"

    writer.json("unrecorded.json", dict(a=1), record=False)
    assert len(writer.records) == 1
