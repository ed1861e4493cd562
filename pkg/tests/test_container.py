import io

import numpy as np
import pytest

from metricforge.container import (
    ContainerError,
    at_eof,
    read_f64,
    read_magic,
    read_matrix,
    read_str,
    read_str_list,
    read_u32,
    read_u64,
    write_f64,
    write_magic,
    write_matrix,
    write_str,
    write_str_list,
    write_u32,
    write_u64,
)


def test_primitive_roundtrips():
    buf = io.BytesIO()
    write_magic(buf)
    write_u32(buf, 7)
    write_u64(buf, 2**40 + 3)
    write_f64(buf, -0.1)
    write_str(buf, "héllo")
    write_str_list(buf, ["a", "", "b c"])
    buf.seek(0)
    assert read_magic(buf) == 1
    assert read_u32(buf) == 7
    assert read_u64(buf) == 2**40 + 3
    assert read_f64(buf) == -0.1
    assert read_str(buf) == "héllo"
    assert read_str_list(buf) == ["a", "", "b c"]
    assert at_eof(buf)


def test_matrix_roundtrip_bit_identical():
    m = np.random.default_rng(0).standard_normal((7, 3))
    buf = io.BytesIO()
    write_matrix(buf, m)
    buf.seek(0)
    back = read_matrix(buf)
    assert back.tobytes() == m.tobytes()
    assert back.shape == m.shape


def test_bad_magic_rejected():
    buf = io.BytesIO(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ContainerError):
        read_magic(buf)


def test_truncated_read_rejected():
    buf = io.BytesIO()
    write_u64(buf, 5)
    data = buf.getvalue()[:4]
    with pytest.raises(ContainerError):
        read_u64(io.BytesIO(data))


def test_truncated_string_rejected():
    buf = io.BytesIO()
    write_str(buf, "abcdef")
    data = buf.getvalue()[:-2]
    with pytest.raises(ContainerError):
        read_str(io.BytesIO(data))
