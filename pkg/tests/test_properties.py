import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spdc.client import plan_partition, run_protocol
from spdc.matrix_core import (
    ROTATIONS,
    DetValue,
    augment,
    det_oracle,
    format_matrix,
    read_matrix,
    rotate,
    rotation_sign,
)
from spdc.netsim import FaultSpec
from spdc.obfuscation import PSI_MAX, PSI_MIN, SeedBundle, key_gen, rotate_select

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False, allow_subnormal=False)


def well_conditioned(m):
    return np.linalg.cond(m) < 1e10


@st.composite
def square(draw, max_n=9):
    n = draw(st.integers(1, max_n))
    return draw(arrays(np.float64, (n, n), elements=finite))


@given(square(), st.sampled_from(ROTATIONS))
def test_sign_law(m, theta):
    assume(well_conditioned(m))
    ref = det_oracle(m)
    got = det_oracle(rotate(m, theta))
    assert got.sign == ref.sign * rotation_sign(m.shape[0], theta)
    assert math.isclose(got.log_abs, ref.log_abs, rel_tol=1e-9, abs_tol=1e-9)


@given(square())
def test_four_quarter_turns(m):
    out = m
    for _ in range(4):
        out = rotate(out, 90)
    np.testing.assert_array_equal(out, m)


@given(square(max_n=6), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_augment_preserves_det(m, p, seed):
    n = m.shape[0]
    out = augment(m, p, rng=np.random.default_rng(seed))
    assert out.shape[0] == n + p
    # block lower triangular with a unit diagonal extension
    np.testing.assert_array_equal(out[:n, :n], m)
    for k in range(n, n + p):
        assert out[k, k] == 1.0 and np.all(out[:k, k] == 0.0)
    assume(well_conditioned(m))
    a, b = det_oracle(m), det_oracle(out)
    assert b.sign == a.sign
    assert math.isclose(a.log_abs, b.log_abs, rel_tol=1e-9, abs_tol=1e-9)


@given(st.integers(1, 500), st.integers(2, 40))
def test_plan_partition_minimal(n, n_servers):
    plan = plan_partition(n, n_servers)
    side = n + plan.pad
    assert side % n_servers == 0 and side // n_servers > 1
    for p in range(plan.pad):
        assert (n + p) % n_servers or (n + p) // n_servers <= 1


@given(st.binary(min_size=1, max_size=32), st.floats(PSI_MIN, PSI_MAX), st.integers(1, 120))
def test_key_product(lambda2, psi, n):
    key = key_gen(lambda2, SeedBundle(b"", psi, 0.0, 0.0), n)
    assert key.v.size == n
    assert math.isclose(float(np.prod(key.v)), psi, rel_tol=1e-11)
    assert np.all(np.abs(key.v - 1.0) > 1e-6)


@given(st.floats(PSI_MIN, PSI_MAX))
def test_rotate_select_range(psi):
    assert rotate_select(psi) in (90, 180, 270)


@given(
    st.floats(-1e6, 1e6).filter(lambda x: x != 0),
    st.floats(-1e6, 1e6).filter(lambda x: x != 0),
)
def test_detvalue_product(a, b):
    got = (DetValue.from_float(a) * DetValue.from_float(b)).to_float()
    assert math.isclose(got, a * b, rel_tol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_matrix_text_round_trip(m):
    np.testing.assert_array_equal(read_matrix(format_matrix(m)), m)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.floats(1e-9, 10.0),
       st.sampled_from(["additive", "replace"]), st.sampled_from(["all", "result", "transit"]))
def test_fault_spec_round_trip(target, i, j, rel, kind, where):
    f = FaultSpec(target, ("U", i, j), kind, rel, where)
    assert FaultSpec.parse(f.describe()) == f


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(2, 6), st.sampled_from(["EWD", "EWM"]),
       st.sampled_from(["Q1", "Q2", "Q3"]), st.integers(0, 2**31))
def test_protocol_recovers_determinant(n, n_servers, mode, method, seed):
    rng = np.random.default_rng(seed)
    m = rng.uniform(-1.0, 1.0, (n, n)) + n * np.eye(n)
    out = run_protocol(m, n_servers=n_servers, mode=mode, method=method, rng_seed=seed)
    assert out.det_m.isclose(det_oracle(m), rel=1e-6)
    assert out.ops["cipher"] == n * n
