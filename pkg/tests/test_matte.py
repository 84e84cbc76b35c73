import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hullforge.matte import MatteFormatError, SoftMatte, load_matte, matte_filename, sample_matte, save_matte


def test_constant_matte_samples_constant():
    m = SoftMatte(np.full((5, 7), 0.7))
    for x, y in [(0, 0), (3.3, 2.7), (6, 4), (0.5, 3.99)]:
        assert sample_matte(m, x, y) == pytest.approx(0.7)


def test_midpoint_interpolation():
    assert sample_matte(SoftMatte([[0.0, 1.0]]), 0.5, 0) == pytest.approx(0.5)


def test_out_of_bounds_is_zero():
    assert sample_matte(SoftMatte(np.ones((4, 4))), -5, -5) == 0.0
    assert sample_matte(SoftMatte(np.ones((4, 4))), 3.01, 1) == 0.0


def test_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        SoftMatte([[1.5]])


@given(arrays(np.float64, (4, 6), elements=st.floats(0, 1)), st.integers(0, 5), st.integers(0, 3))
def test_integer_coordinates_exact(vals, x, y):
    assert sample_matte(SoftMatte(vals), x, y) == vals[y, x]


@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)), st.floats(0, 4), st.floats(0, 4), st.floats(-1e-4, 1e-4))
def test_sampling_continuous(vals, x, y, d):
    m = SoftMatte(vals)
    x2 = min(max(x + d, 0), 4)
    assert abs(sample_matte(m, x, y) - sample_matte(m, x2, y)) <= 2 * abs(d) + 1e-12


def test_pgm_constant_files(tmp_path):
    for v in (0, 255):
        (tmp_path / "a.pgm").write_bytes(b"P5\n3 2\n255\n" + bytes([v] * 6))
        assert np.all(load_matte(tmp_path / "a.pgm").values == v / 255)


def test_pgm_linear_mapping(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P5\n# comment\n1 1\n255\n" + bytes([128]))
    assert load_matte(tmp_path / "a.pgm").values[0, 0] == pytest.approx(0.50196, abs=1e-5)


@given(arrays(np.float64, (3, 4), elements=st.floats(0, 1)))
def test_quantisation_round_trip(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("m") / "m.pgm"
    save_matte(SoftMatte(vals), p)
    assert np.abs(load_matte(p).values - vals).max() <= 1 / 510 + 1e-12


def test_wrong_magic(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(MatteFormatError):
        load_matte(tmp_path / "a.pgm")


def test_truncated_payload(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(MatteFormatError, match="truncated"):
        load_matte(tmp_path / "a.pgm")


def test_filename_convention():
    assert matte_filename("00012", "cam3") == "00012_cam3.pgm"
