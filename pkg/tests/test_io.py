import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from manicode.dictionary import Dictionary
from manicode.io import (
    FormatError,
    matrix_from_bytes,
    matrix_to_bytes,
    metrics_csv,
    parse_config,
    read_dictionary,
    read_matrix,
    read_metrics_csv,
    scatter_svg,
    serialize_config,
    write_dictionary,
    write_matrix,
)
from manicode.toy_gan import CSV_HEADER, TrainConfig


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(0, 6)), elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_matrix_roundtrip_bit_exact(a):
    b = matrix_from_bytes(matrix_to_bytes(a))
    assert b.shape == a.shape
    assert b.tobytes() == np.ascontiguousarray(a).tobytes()


def test_matrix_header_layout():
    raw = matrix_to_bytes(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    magic, ver, rows, cols = struct.unpack("<4sIQQ", raw[:24])
    assert (magic, ver, rows, cols) == (b"MTXF", 1, 2, 3)
    assert len(raw) == 24 + 8 * 6
    assert struct.unpack("<d", raw[24:32])[0] == 1.0
    assert struct.unpack("<d", raw[32:40])[0] == 2.0


def test_matrix_errors(tmp_path):
    good = matrix_to_bytes(np.eye(2))
    with pytest.raises(FormatError):
        matrix_from_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError):
        matrix_from_bytes(good[:-1])
    with pytest.raises(FormatError):
        matrix_from_bytes(good[:10])
    with pytest.raises(FileNotFoundError):
        read_matrix(tmp_path / "missing.mtx")


def test_matrix_file(tmp_path, rng):
    a = rng.normal(size=(3, 7))
    write_matrix(tmp_path / "a.mtx", a)
    assert np.array_equal(read_matrix(tmp_path / "a.mtx"), a)


def test_config_roundtrip():
    cfg = TrainConfig(dataset="Grid25", lr_g=0.0123, ablation="EmaDict", seed=9)
    assert parse_config(serialize_config(cfg), TrainConfig) == cfg


def test_config_comments_and_unknown():
    cfg = parse_config("# run\nsteps = 5  # short\n\nsigma=0.5\n", TrainConfig)
    assert cfg.steps == 5 and cfg.sigma == 0.5
    with pytest.raises(FormatError):
        parse_config("bogus=1\n", TrainConfig)
    with pytest.raises(FormatError):
        parse_config("steps=many\n", TrainConfig)
    with pytest.raises(FormatError):
        parse_config("steps\n", TrainConfig)


def test_dictionary_sidecar(tmp_path, rng):
    d = Dictionary(rng.normal(size=(4, 6)), lr=0.01, step_count=17, norm_cap=1.0)
    write_dictionary(tmp_path / "d.mtx", d)
    assert (tmp_path / "d.mtx.meta").exists()
    assert read_dictionary(tmp_path / "d.mtx") == d
    d2 = Dictionary(rng.normal(size=(2, 2)))
    write_dictionary(tmp_path / "e.mtx", d2)
    assert read_dictionary(tmp_path / "e.mtx") == d2


def test_metrics_csv_roundtrip():
    rows = [(1, 0.5, -0.25, 0.0, 0.101, 0.2212, 0.3, 4, 0.75, 1e-3)]
    text = metrics_csv(rows, CSV_HEADER)
    assert text.splitlines()[0] == "step,d_loss,g_loss,prox,beta,gamma,r,modes,hq,recon"
    header, body = read_metrics_csv(text)
    assert [float(v) for v in body[0]] == [float(v) for v in rows[0]]


def test_svg_canvas():
    svg = scatter_svg(np.array([[0.0, 5.0], [0.0, 0.0]]), np.array([[2.0], [0.0]]))
    assert 'width="800"' in svg and 'height="800"' in svg
    assert svg.count("<circle") == 1  # the out-of-window point is dropped
    assert 'cx="400.00" cy="400.00"' in svg
    assert svg.count("<path") == 1
