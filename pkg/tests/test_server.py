import numpy as np
import pytest

from spdc.matrix_core import SingularPivotError, lu_plain, partition
from spdc.server import (
    ASSIGN_ROW,
    CLIENT,
    FAILURE,
    RESULT,
    U_BLOCKS,
    EdgeServer,
    ProtocolViolation,
    ServerMessage,
    compute_l_block,
    compute_u_block,
    factor_diag,
    format_label,
    parse_label,
)

from conftest import dominant


def test_factor_diag_examples():
    lower, upper = factor_diag(np.array([[4.0, 3.0], [6.0, 3.0]]))
    np.testing.assert_allclose(lower, [[1, 0], [1.5, 1]])
    np.testing.assert_allclose(upper, [[4, 3], [0, -1.5]])
    lower, upper = factor_diag(np.eye(2))
    np.testing.assert_array_equal(lower, np.eye(2))
    with pytest.raises(SingularPivotError):
        factor_diag(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_l_block(rng):
    x = dominant(rng, 4)
    ref_l, ref_u = lu_plain(x)
    g = partition(x, 2)
    _, u11 = factor_diag(g[1, 1])
    l21 = compute_l_block(g[2, 1], None, u11)
    np.testing.assert_allclose(l21, g[2, 1] @ np.linalg.inv(u11))
    np.testing.assert_allclose(l21, ref_l[2:, :2], rtol=1e-12)
    np.testing.assert_allclose(compute_l_block(u11, None, u11), np.eye(2), atol=1e-15)


def test_l_block_zero_diagonal():
    with pytest.raises(SingularPivotError):
        compute_l_block(np.eye(2), None, np.array([[1.0, 1.0], [0.0, 0.0]]))


def test_u_block(rng):
    x = dominant(rng, 4)
    ref_l, ref_u = lu_plain(x)
    g = partition(x, 2)
    l11, _ = factor_diag(g[1, 1])
    u12 = compute_u_block(g[1, 2], None, l11)
    np.testing.assert_allclose(u12, np.linalg.inv(l11) @ g[1, 2])
    np.testing.assert_allclose(u12, ref_u[:2, 2:], rtol=1e-12)
    np.testing.assert_allclose(compute_u_block(l11, None, l11), np.eye(2), atol=1e-15)


def test_label_format():
    assert format_label(("U", 1, 2)) == "U_12"
    assert format_label(("L", 3, 10)) == "L_3,10"
    assert parse_label("U_12") == ("U", 1, 2)
    assert parse_label("L_3,10") == ("L", 3, 10)
    for bad in ("U12", "Q_12", "U_123", "U_a1"):
        with pytest.raises(ValueError):
            parse_label(bad)


def _assign(grid, i):
    n = grid.n_servers
    return ServerMessage(CLIENT, i, ASSIGN_ROW, {("X", i, j): grid[i, j] for j in range(1, n + 1)})


def test_first_server_sequence(rng):
    grid = partition(dominant(rng, 4), 2)
    s1 = EdgeServer(1, 2)
    out = s1.handle_message(_assign(grid, 1))
    assert [(m.kind, m.labels) for m in out] == [(U_BLOCKS, (("U", 1, 1),))]
    out = s1.advance()
    assert [m.kind for m in out] == [U_BLOCKS, RESULT]
    assert out[0].labels == (("U", 1, 2),)
    assert set(out[1].labels) == {("L", 1, 1), ("U", 1, 1), ("U", 1, 2)}
    assert s1.done


def test_two_server_lu_matches_dense(rng):
    x = dominant(rng, 4)
    grid = partition(x, 2)
    s1, s2 = EdgeServer(1, 2), EdgeServer(2, 2)
    s2.handle_message(_assign(grid, 2))
    msgs = s1.handle_message(_assign(grid, 1)) + s1.advance()
    results = {}
    for m in msgs:
        if m.dst == 2:
            for r in s2.handle_message(m):
                results[2] = r.blocks
        else:
            results[1] = m.blocks
    while not s2.done:
        for r in s2.advance():
            results[2] = r.blocks
    ref_l, ref_u = lu_plain(x)
    np.testing.assert_allclose(results[2][("L", 2, 1)], ref_l[2:, :2], rtol=1e-10)
    np.testing.assert_allclose(results[2][("L", 2, 2)], ref_l[2:, 2:], rtol=1e-10)
    np.testing.assert_allclose(results[2][("U", 2, 2)], ref_u[2:, 2:], rtol=1e-10)
    assert s2.activation_threshold == 2 and s1.activation_threshold == 1


def test_server_rejects_skip_link(rng):
    grid = partition(dominant(rng, 6), 3)
    s3 = EdgeServer(3, 3)
    s3.handle_message(_assign(grid, 3))
    with pytest.raises(ProtocolViolation, match="immediate upstream"):
        s3.handle_message(ServerMessage(1, 3, U_BLOCKS, {("U", 1, 1): np.eye(2)}))


def test_server_rejects_misdelivery_and_duplicates(rng):
    grid = partition(dominant(rng, 4), 2)
    s2 = EdgeServer(2, 2)
    with pytest.raises(ProtocolViolation):
        s2.handle_message(_assign(grid, 1))
    s2.handle_message(_assign(grid, 2))
    with pytest.raises(ProtocolViolation):
        s2.handle_message(_assign(grid, 2))
    s2.handle_message(ServerMessage(1, 2, U_BLOCKS, {("U", 1, 1): np.eye(2)}))
    with pytest.raises(ProtocolViolation, match="duplicate"):
        s2.handle_message(ServerMessage(1, 2, U_BLOCKS, {("U", 1, 1): np.eye(2)}))
    with pytest.raises(ProtocolViolation, match="unexpected"):
        s2.handle_message(ServerMessage(1, 2, U_BLOCKS, {("U", 2, 2): np.eye(2)}))


def test_server_reports_singular_pivot():
    x = np.eye(4)
    x[:2, :2] = [[0.0, 1.0], [1.0, 0.0]]
    grid = partition(x, 2)
    s1 = EdgeServer(1, 2)
    out = s1.handle_message(_assign(grid, 1))
    assert out[0].kind == FAILURE and out[0].dst == CLIENT
    assert s1.failed and s1.done


def test_server_index_range():
    with pytest.raises(ValueError):
        EdgeServer(0, 3)
    with pytest.raises(ValueError):
        EdgeServer(4, 3)
