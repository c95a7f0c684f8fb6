import numpy as np
import pytest

from oodtown import netpbm
from oodtown.errors import ArgumentError
from oodtown.rng import sub_rng


def test_pgm_round_trip(tmp_path):
    img = sub_rng(0, "pgm").integers(0, 256, size=(13, 17)).astype(np.uint8)
    p = tmp_path / "a.pgm"
    netpbm.write_pgm(p, img)
    assert np.array_equal(netpbm.read_pgm(p), img)


def test_ppm_round_trip(tmp_path):
    img = sub_rng(0, "ppm").integers(0, 256, size=(9, 11, 3)).astype(np.uint8)
    p = tmp_path / "a.ppm"
    netpbm.write_ppm(p, img)
    assert np.array_equal(netpbm.read_ppm(p), img)


def test_writer_is_byte_stable(tmp_path):
    img = sub_rng(3, "stable").integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
    p1, p2 = tmp_path / "b1.ppm", tmp_path / "b2.ppm"
    netpbm.write_ppm(p1, img)
    netpbm.write_ppm(p2, img)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    img = np.zeros((2, 3), dtype=np.uint8)
    p = tmp_path / "h.pgm"
    netpbm.write_pgm(p, img)
    assert p.read_bytes().startswith(b"P5\n3 2\n255\n")


def test_header_comments_skipped(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes(4))
    assert netpbm.read_pgm(p).shape == (2, 2)


def test_rejects_wrong_dtype(tmp_path):
    with pytest.raises(ArgumentError):
        netpbm.write_pgm(tmp_path / "x.pgm", np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ArgumentError):
        netpbm.write_ppm(tmp_path / "x.ppm", np.zeros((4, 4), dtype=np.uint8))


def test_rejects_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P4\n2 2\n255\n" + bytes(4))
    with pytest.raises(ArgumentError):
        netpbm.read_pgm(p)
    q = tmp_path / "short.ppm"
    q.write_bytes(b"P6\n4 4\n255\n" + bytes(5))
    with pytest.raises(ArgumentError):
        netpbm.read_ppm(q)
