import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from emotts.container import atomic_write_text, decode_emtf, encode_emtf, read_emtf, read_emtf_shape, write_emtf
from emotts.errors import FormatError


def test_header_layout():
    buf = encode_emtf(np.zeros((2, 3), dtype=np.float32))
    assert buf[:4] == b"EMTF"
    assert buf[4:6] == bytes([1, 2])
    assert struct.unpack("<2I", buf[6:14]) == (2, 3)
    assert len(buf) == 14 + 6 * 4


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=st.floats(-1e3, 1e3, width=32)))
def test_roundtrip_bitwise(arr):
    back = decode_emtf(encode_emtf(arr))
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_file_roundtrip_and_reencode(tmp_path):
    arr = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
    p = tmp_path / "x.mel"
    write_emtf(p, arr)
    raw = p.read_bytes()
    write_emtf(tmp_path / "y.mel", read_emtf(p, rank=2))
    assert (tmp_path / "y.mel").read_bytes() == raw
    assert read_emtf_shape(p) == (5, 7)


def test_errors(tmp_path):
    with pytest.raises(FormatError):
        decode_emtf(b"NOPE\x01\x01\x00\x00\x00\x00")
    good = encode_emtf(np.ones(3, dtype=np.float32))
    with pytest.raises(FormatError):
        decode_emtf(good[:-2])
    with pytest.raises(FormatError):
        decode_emtf(good[:4] + b"\x09" + good[5:])
    p = tmp_path / "v.bin"
    p.write_bytes(good)
    with pytest.raises(FormatError):
        read_emtf(p, rank=2)


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "a.txt", "hi")
    assert [f.name for f in tmp_path.iterdir()] == ["a.txt"]
