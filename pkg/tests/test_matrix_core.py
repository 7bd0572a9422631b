import math

import numpy as np
import pytest

from spdc.flops import FlopCounter, doolittle_ops
from spdc.matrix_core import (
    DetValue,
    MatrixFormatError,
    SingularPivotError,
    augment,
    det_cofactor,
    det_oracle,
    format_matrix,
    load_matrix,
    lu_plain,
    partition,
    read_matrix,
    rotate,
    rotation_sign,
)

M2 = np.array([[1.0, 2.0], [3.0, 4.0]])


def test_rotate_90():
    np.testing.assert_array_equal(rotate(M2, 90), [[3, 1], [4, 2]])


def test_rotate_180():
    np.testing.assert_array_equal(rotate(M2, 180), [[4, 3], [2, 1]])


def test_rotate_360_is_copy(rng):
    m = rng.standard_normal((5, 5))
    out = rotate(m, 360)
    np.testing.assert_array_equal(out, m)
    out[0, 0] = 99.0
    assert m[0, 0] != 99.0


def test_rotate_270_undoes_90(rng):
    m = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(rotate(rotate(m, 90), 270), m)


@pytest.mark.parametrize("theta", [0, 45, -90, 450])
def test_rotate_rejects_angle(theta):
    with pytest.raises(ValueError):
        rotate(M2, theta)


def test_rotate_rejects_rectangular():
    with pytest.raises(ValueError):
        rotate(np.ones((2, 3)), 90)


@pytest.mark.parametrize("n,theta,sign", [(2, 90, -1), (4, 90, 1), (5, 270, 1), (3, 270, -1), (7, 180, 1), (6, 360, 1)])
def test_rotation_sign_cases(n, theta, sign):
    assert rotation_sign(n, theta) == sign


def test_augment_unit_corner(rng):
    out = augment(M2, 1, "zero_col", rng)
    assert out.shape == (3, 3)
    np.testing.assert_array_equal(out[:2, :2], M2)
    np.testing.assert_array_equal(out[:2, 2], [0, 0])
    assert out[2, 2] == 1.0
    assert det_cofactor(out) == pytest.approx(-2.0)


def test_augment_zero_row(rng):
    out = augment(M2, 1, "zero_row", rng)
    np.testing.assert_array_equal(out[2, :2], [0, 0])
    assert det_cofactor(out) == pytest.approx(-2.0)


def test_augment_p0_unchanged():
    out = augment(M2, 0)
    np.testing.assert_array_equal(out, M2)
    assert out is not M2


def test_augment_keeps_det(rng):
    m = rng.standard_normal((4, 4))
    out = augment(m, 2, rng=rng)
    assert out.shape == (6, 6)
    assert det_oracle(out).isclose(det_oracle(m), rel=1e-12)


def test_augment_rejects_bad_args():
    with pytest.raises(ValueError):
        augment(M2, -1)
    with pytest.raises(ValueError):
        augment(M2, 1, "diagonal")


def test_partition_shapes():
    six = np.arange(36.0).reshape(6, 6)
    g2 = partition(six, 2)
    assert (g2.n_servers, g2.block_size) == (2, 3)
    g3 = partition(six, 3)
    assert (g3.n_servers, g3.block_size) == (3, 2)
    np.testing.assert_array_equal(g3[2, 3], six[2:4, 4:6])
    np.testing.assert_array_equal(g3.reassemble(), six)
    assert len(g3.row(1)) == 3


def test_partition_rejects_unit_blocks():
    with pytest.raises(ValueError, match="pad it first"):
        partition(np.eye(4), 4)


def test_partition_rejects_indivisible():
    with pytest.raises(ValueError):
        partition(np.eye(5), 2)


def test_grid_index_bounds():
    g = partition(np.eye(4), 2)
    with pytest.raises(IndexError):
        g[0, 1]
    with pytest.raises(IndexError):
        g[3, 1]


def test_det_oracle_small():
    d = det_oracle(M2)
    assert d.sign == -1
    assert math.exp(d.log_abs) == pytest.approx(2.0)


def test_det_oracle_identity():
    d = det_oracle(np.eye(7))
    assert d.sign == 1 and d.log_abs == pytest.approx(0.0, abs=1e-15)


def test_det_oracle_singular():
    assert det_oracle(np.ones((3, 3))).is_zero


def test_det_oracle_against_plain_lu(rng):
    # second path: pivoted elimination in plain floats
    m = rng.standard_normal((8, 8))
    a = m.copy()
    det = 1.0
    for k in range(8):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if p != k:
            a[[k, p]] = a[[p, k]]
            det = -det
        det *= a[k, k]
        a[k + 1:, k:] -= np.outer(a[k + 1:, k] / a[k, k], a[k, k:])
    assert det_oracle(m).isclose(DetValue.from_float(det), rel=1e-10)


def test_det_cofactor_matches_oracle(rng):
    m = rng.standard_normal((4, 4))
    assert det_oracle(m).isclose(DetValue.from_float(det_cofactor(m)), rel=1e-10)


def test_lu_plain_hand_example():
    lower, upper = lu_plain([[4.0, 3.0], [6.0, 3.0]])
    np.testing.assert_allclose(lower, [[1, 0], [1.5, 1]])
    np.testing.assert_allclose(upper, [[4, 3], [0, -1.5]])


def test_lu_plain_identity():
    lower, upper = lu_plain(np.eye(3))
    np.testing.assert_array_equal(lower, np.eye(3))
    np.testing.assert_array_equal(upper, np.eye(3))


def test_lu_plain_zero_pivot():
    with pytest.raises(SingularPivotError) as info:
        lu_plain([[0.0, 1.0], [1.0, 0.0]])
    assert info.value.index == 0


def test_lu_plain_tiny_pivot_is_singular():
    m = np.array([[1.0, 1.0, 0.0], [1.0, 1.0 + 1e-15, 1.0], [0.0, 1.0, 1.0]])
    with pytest.raises(SingularPivotError):
        lu_plain(m)


def test_lu_plain_counts_flops(rng):
    c = FlopCounter()
    lower, upper = lu_plain(rng.standard_normal((6, 6)) + 6 * np.eye(6), c)
    assert c.count == doolittle_ops(6)
    assert np.allclose(np.diag(lower), 1.0)


def test_detvalue_arithmetic():
    a = DetValue.from_float(-2.0)
    b = a * -3.0
    assert b.sign == 1 and b.to_float() == pytest.approx(6.0)
    assert (b / 6.0).to_float() == pytest.approx(1.0)
    assert (a * DetValue.zero()).is_zero
    with pytest.raises(ZeroDivisionError):
        a / 0.0


def test_detvalue_overflow():
    big = DetValue(1, 1000.0)
    assert not big.representable()
    assert big.to_float() == math.inf
    assert DetValue(-1, 1000.0).to_float() == -math.inf


def test_detvalue_isclose_sign():
    assert not DetValue(1, 1.0).isclose(DetValue(-1, 1.0))
    assert DetValue.zero().isclose(DetValue.from_float(0.0))


def test_detvalue_bad_sign():
    with pytest.raises(ValueError):
        DetValue(2, 0.0)


def test_matrix_text_round_trip(rng, tmp_path):
    m = rng.standard_normal((3, 4))
    path = tmp_path / "m.txt"
    path.write_text(format_matrix(m))
    np.testing.assert_array_equal(load_matrix(path), m)


def test_matrix_text_fixture(fixtures):
    m = load_matrix(fixtures / "matrix8.txt")
    assert m.shape == (8, 8)


@pytest.mark.parametrize(
    "name,line,column",
    [("badtoken.txt", 3, 2), ("shortrow.txt", 3, None)],
)
def test_matrix_text_diagnostics(fixtures, name, line, column):
    with pytest.raises(MatrixFormatError) as info:
        load_matrix(fixtures / name)
    assert info.value.line == line
    assert info.value.column == column


@pytest.mark.parametrize("text", ["", "2\n1 2\n", "a b\n", "2 2\n1 2\n", "1 1\nnan\n", "0 2\n"])
def test_matrix_text_rejects(text):
    with pytest.raises(MatrixFormatError):
        read_matrix(text)
