import struct

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccmprune.exceptions import (
    BadMagicError,
    LengthMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from ccmprune.tensor import (
    batch_mean,
    channel_matrix,
    flatten,
    nuclear_norm,
    read_tensor,
    singular_values,
    write_tensor,
)
from oracles import jacobi_nuclear_norm, loop_batch_mean

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_batch_mean_single_sample_is_identity(rng):
    f = rng.normal(size=(1, 3, 4, 5))
    np.testing.assert_array_equal(batch_mean(f), f[0])


def test_batch_mean_zeros_and_twos():
    f = np.stack([np.zeros((2, 3, 3)), np.full((2, 3, 3), 2.0)])
    np.testing.assert_array_equal(batch_mean(f), np.ones((2, 3, 3)))


def test_batch_mean_matches_loop_oracle(rng):
    f = rng.normal(size=(3, 2, 2, 2))
    np.testing.assert_allclose(batch_mean(f), loop_batch_mean(f), rtol=0, atol=1e-15)


def test_batch_mean_rejects_nan():
    f = np.zeros((2, 1, 2, 2))
    f[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        batch_mean(f)


def test_flatten_scalar():
    np.testing.assert_array_equal(flatten(np.full((1, 1, 1), 7.5)), [[7.5]])


def test_flatten_row_major():
    stack = np.zeros((2, 2, 2))
    stack[0] = [[1, 2], [3, 4]]
    np.testing.assert_array_equal(flatten(stack)[0], [1, 2, 3, 4])


def test_flatten_index_equality(rng):
    stack = rng.normal(size=(3, 4, 5))
    m = flatten(stack)
    assert m.shape == (3, 20)
    for k, i, j in np.ndindex(stack.shape):
        assert m[k, i * 5 + j] == stack[k, i, j]


def test_channel_matrix_composes(rng):
    f = rng.normal(size=(4, 3, 2, 2))
    np.testing.assert_array_equal(channel_matrix(f), flatten(batch_mean(f)))


def test_nuclear_norm_identity():
    assert nuclear_norm(np.eye(2)) == pytest.approx(2.0, rel=1e-12)


def test_nuclear_norm_rank_one():
    assert nuclear_norm([[1.0, 2.0], [2.0, 4.0]]) == pytest.approx(5.0, rel=1e-12)


def test_nuclear_norm_zero_matrix_is_exactly_zero():
    assert nuclear_norm(np.zeros((3, 7))) == 0.0


def test_nuclear_norm_matches_jacobi_oracle(rng):
    m = rng.normal(size=(8, 20))
    assert nuclear_norm(m) == pytest.approx(jacobi_nuclear_norm(m), rel=1e-9)


def test_nuclear_norm_matches_high_precision_svd(rng):
    mpmath.mp.dps = 40
    for shape in [(5, 9), (9, 5), (1, 6), (6, 6)]:
        m = rng.normal(size=shape)
        ref = float(sum(mpmath.svd_r(mpmath.matrix(m.tolist()), compute_uv=False)))
        assert nuclear_norm(m) == pytest.approx(ref, rel=1e-12)


def test_singular_values_sorted_descending(rng):
    sv = singular_values(rng.normal(size=(6, 10)))
    assert np.all(np.diff(sv) <= 0)
    assert sv.size == 6


def test_nuclear_norm_keeps_small_singular_values_accurate():
    # a one-sided sweep resolves sigma = 1e-9 where a squared Gram matrix would not
    m = np.diag([1.0, 1e-9]) @ np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    assert nuclear_norm(m) == pytest.approx(1.0 + 1e-9, rel=1e-15)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=finite),
       st.floats(-20, 20, allow_nan=False).filter(lambda c: abs(c) > 1e-3))
def test_nuclear_norm_homogeneous_and_transpose_invariant(m, c):
    base = nuclear_norm(m)
    assert base >= 0.0
    assert nuclear_norm(c * m) == pytest.approx(abs(c) * base, rel=1e-9, abs=1e-9)
    assert nuclear_norm(m.T) == pytest.approx(base, rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=finite), st.data())
def test_zeroing_a_row_never_increases_nuclear_norm(m, data):
    k = data.draw(st.integers(0, m.shape[0] - 1))
    masked = m.copy()
    masked[k] = 0.0
    scale = max(1.0, nuclear_norm(m))
    assert nuclear_norm(m) - nuclear_norm(masked) >= -1e-9 * scale


def test_tensor_round_trip_bitwise(tmp_path, rng):
    x = rng.normal(size=(3, 4, 5))
    write_tensor(tmp_path / "x.ckt", x.shape, x)
    dims, y = read_tensor(tmp_path / "x.ckt")
    assert dims == (3, 4, 5)
    assert y.tobytes() == x.tobytes()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.lists(st.integers(0, 4), min_size=0, max_size=4).map(tuple),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_tensor_round_trip_property(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("rt") / "x.ckt"
    write_tensor(path, x.shape, x)
    dims, y = read_tensor(path)
    assert dims == x.shape
    assert y.tobytes() == x.tobytes()


def test_tensor_exact_header(tmp_path):
    write_tensor(tmp_path / "one.ckt", (1,), [1.0])
    raw = (tmp_path / "one.ckt").read_bytes()
    assert raw == b"CKT1" + bytes([1, 1]) + struct.pack("<I", 1) + struct.pack("<I", 1) + struct.pack("<d", 1.0)
    assert len(raw) == 4 + 1 + 1 + 4 + 4 + 8


def _valid_file(tmp_path):
    path = tmp_path / "v.ckt"
    write_tensor(path, (2, 2), np.arange(4.0))
    return path, path.read_bytes()


def test_bad_magic(tmp_path):
    path, raw = _valid_file(tmp_path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        read_tensor(path)


def test_version_mismatch(tmp_path):
    path, raw = _valid_file(tmp_path)
    path.write_bytes(raw[:4] + bytes([2]) + raw[5:])
    with pytest.raises(VersionMismatchError):
        read_tensor(path)


def test_truncated_payload(tmp_path):
    path, raw = _valid_file(tmp_path)
    path.write_bytes(raw[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_tensor(path)


def test_payload_longer_than_dims(tmp_path):
    path, raw = _valid_file(tmp_path)
    path.write_bytes(raw + struct.pack("<d", 9.0))
    with pytest.raises(LengthMismatchError):
        read_tensor(path)


def test_write_rejects_dim_mismatch(tmp_path):
    with pytest.raises(LengthMismatchError):
        write_tensor(tmp_path / "bad.ckt", (2, 3), np.zeros(5))


def test_write_rejects_non_finite(tmp_path):
    with pytest.raises(ValueError):
        write_tensor(tmp_path / "bad.ckt", (1,), [np.inf])
