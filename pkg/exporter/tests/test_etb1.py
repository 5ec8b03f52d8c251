import struct

import numpy as np
import pytest

from ecgtext_exporter import Etb1Error, read_table, write_table


def test_golden_byte_layout(tmp_path):
    # Oracle: the documented wire format, assembled by hand.
    path = tmp_path / "t.etb"
    vec = np.array([[1.5, -2.0]], dtype=np.float32)
    write_table(path, ["ab"], vec)
    expected = (b"ETB1"
                + struct.pack("<III", 1, 1, 2)
                + struct.pack("<H", 2) + b"ab"
                + struct.pack("<ff", 1.5, -2.0))
    assert path.read_bytes() == expected


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "r.etb"
    labels = ["one", "二", "three"]
    vectors = rng.standard_normal((3, 5)).astype(np.float32)
    write_table(path, labels, vectors)
    got_labels, got_vectors = read_table(path)
    assert got_labels == labels
    assert got_vectors.tobytes() == vectors.tobytes()


def test_reader_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.etb"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(Etb1Error, match="bad magic"):
        read_table(path)


def test_reader_rejects_truncation(tmp_path):
    path = tmp_path / "trunc.etb"
    write_table(path, ["x"], np.ones((1, 4), np.float32))
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(Etb1Error, match="truncated"):
        read_table(path)


def test_writer_rejects_shape_mismatch(tmp_path):
    with pytest.raises(Etb1Error):
        write_table(tmp_path / "x.etb", ["a", "b"], np.ones((1, 4), np.float32))
