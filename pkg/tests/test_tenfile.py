import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from unfold_pansharp.errors import DataIOError, VersionError
from unfold_pansharp.tenfile import load_ten, save_ten


def test_header_layout(tmp_path):
    p = tmp_path / "a.ten"
    save_ten(str(p), np.zeros((2, 3), np.float32))
    head, _, body = p.read_bytes().partition(b"\n")
    assert json.loads(head) == {"shape": [2, 3], "dtype": "f32", "layout": "row-major"}
    assert len(body) == 24


@settings(max_examples=40, deadline=None)
@given(arrays(st.sampled_from([np.float32, np.float64]), array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_roundtrip_bit_exact(tmp_path_factory, arr):
    p = str(tmp_path_factory.mktemp("t") / "x.ten")
    save_ten(p, arr)
    back = load_ten(p)
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_big_endian_input_is_stored_little_endian(tmp_path):
    arr = np.arange(6, dtype=">f8").reshape(2, 3)
    save_ten(str(tmp_path / "b.ten"), arr)
    back = load_ten(str(tmp_path / "b.ten"))
    assert back.dtype == np.dtype("<f8") and np.array_equal(back, arr)


def test_errors(tmp_path):
    p = tmp_path / "c.ten"
    p.write_bytes(json.dumps({"shape": [2], "dtype": "f64", "layout": "column-major"}).encode() + b"\n" + bytes(16))
    with pytest.raises(VersionError):
        load_ten(str(p))
    p.write_bytes(json.dumps({"shape": [4], "dtype": "f64", "layout": "row-major"}).encode() + b"\n" + bytes(16))
    with pytest.raises(DataIOError, match="payload"):
        load_ten(str(p))
    p.write_bytes(b"garbage\n")
    with pytest.raises(DataIOError, match="header"):
        load_ten(str(p))
    with pytest.raises(DataIOError):
        load_ten(str(tmp_path / "missing.ten"))
    with pytest.raises(DataIOError):
        save_ten(str(tmp_path / "d.ten"), np.zeros(2, np.complex128))
