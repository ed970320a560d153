import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transinv.tensor import Tensor4, dot


def test_zeros_and_full():
    z = Tensor4.zeros((2, 3, 4, 5))
    assert z.shape == (2, 3, 4, 5)
    assert z.dtype == np.float32
    assert not z.array.any()
    f = Tensor4.full((1, 1, 2, 2), 2.5)
    assert f.array.tolist() == [[[[2.5, 2.5], [2.5, 2.5]]]]


def test_dtype_contract():
    Tensor4.zeros((1, 1, 1, 1), dtype=np.float64)  # fine, gradcheck variant
    with pytest.raises(ValueError, match="float32 or float64"):
        Tensor4(np.zeros((1, 1, 1, 1), dtype=np.int32))


def test_rank_and_dims_validated():
    with pytest.raises(ValueError, match="4 dims"):
        Tensor4(np.zeros((2, 3, 4), dtype=np.float32))
    with pytest.raises(ValueError, match=">= 1"):
        Tensor4(np.zeros((2, 0, 4, 4), dtype=np.float32))


def test_contiguous_after_construction():
    base = np.zeros((4, 4, 4, 8), dtype=np.float32)[..., ::2]
    t = Tensor4(base)
    assert t.array.flags["C_CONTIGUOUS"]


def test_add_sub_scale():
    a = Tensor4.full((1, 1, 1, 3), 2.0)
    b = Tensor4.full((1, 1, 1, 3), 0.5)
    assert a.add(b).array.tolist() == [[[[2.5, 2.5, 2.5]]]]
    assert a.sub(b).array.tolist() == [[[[1.5, 1.5, 1.5]]]]
    assert a.scale(-2).array.tolist() == [[[[-4.0, -4.0, -4.0]]]]


def test_shape_mismatch_names_both_shapes():
    a = Tensor4.zeros((1, 2, 3, 4))
    b = Tensor4.zeros((1, 2, 4, 3))
    with pytest.raises(ValueError) as err:
        a.add(b)
    assert "(1, 2, 3, 4)" in str(err.value) and "(1, 2, 4, 3)" in str(err.value)
    with pytest.raises(ValueError):
        a.sub(b)


def test_dot_known_value():
    assert dot(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0])) == 32.0


def test_dot_tensor_inputs_flatten_row_major():
    a = Tensor4(np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2))
    b = Tensor4.full((1, 1, 2, 2), 1.0)
    assert dot(a, b) == 0 + 1 + 2 + 3


def test_dot_length_mismatch():
    with pytest.raises(ValueError, match="3 vs 4"):
        dot(np.zeros(3), np.zeros(4))


def test_serialize_round_trip_bit_exact():
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
    arr[0, 0, 0, 0] = np.float32(-0.0)
    arr[0, 0, 0, 1] = np.float32(1e-44)  # subnormal
    t = Tensor4(arr)
    back = Tensor4.frombytes(t.shape, t.tobytes())
    assert back.tobytes() == t.tobytes()
    assert back.array.tobytes() == arr.tobytes()


def test_blob_is_little_endian_row_major():
    t = Tensor4(np.array([[[[1.0, 2.0]]]], dtype=np.float32))
    raw = t.tobytes()
    assert raw == np.array([1.0, 2.0], dtype="<f4").tobytes()


def test_frombytes_length_check():
    with pytest.raises(ValueError, match="bytes"):
        Tensor4.frombytes((1, 1, 1, 3), b"\x00" * 8)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(width=32, allow_nan=False), min_size=4, max_size=4))
def test_round_trip_property(values):
    arr = np.array(values, dtype=np.float32).reshape(1, 1, 2, 2)
    t = Tensor4(arr)
    assert Tensor4.frombytes(t.shape, t.tobytes()).tobytes() == t.tobytes()
