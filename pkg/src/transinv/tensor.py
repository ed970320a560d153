"""4-d float tensor with a fixed memory contract.

Everything the network touches is an (n, c, h, w) array, float32, C-contiguous,
row major.  A float64 twin of the same layout exists only so gradient checking
can run in double precision; nothing on the training path uses it.
"""

import numpy as np

SUPPORTED_DTYPES = (np.float32, np.float64)


class Tensor4:
    """A 4-d (n, c, h, w) float array, C-contiguous, all dims >= 1."""

    __slots__ = ("array",)

    def __init__(self, array, dtype=None):
        arr = np.asarray(array, dtype=dtype)
        if arr.ndim != 4:
            raise ValueError(f"Tensor4 needs 4 dims, got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"Tensor4 dims must all be >= 1, got shape {arr.shape}")
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"Tensor4 holds float32 or float64, got {arr.dtype}")
        self.array = np.ascontiguousarray(arr)

    @property
    def shape(self):
        return self.array.shape

    @property
    def dtype(self):
        return self.array.dtype

    @classmethod
    def zeros(cls, shape, dtype=np.float32):
        return cls(np.zeros(shape, dtype=dtype))

    @classmethod
    def full(cls, shape, value, dtype=np.float32):
        return cls(np.full(shape, value, dtype=dtype))

    def astype(self, dtype):
        return Tensor4(self.array.astype(dtype))

    def copy(self):
        return Tensor4(self.array.copy())

    def _check_same_shape(self, other):
        if self.shape != other.shape:
            raise ValueError(
                f"shape mismatch: {self.shape} vs {other.shape}"
            )

    def add(self, other):
        self._check_same_shape(other)
        return Tensor4(self.array + other.array)

    def sub(self, other):
        self._check_same_shape(other)
        return Tensor4(self.array - other.array)

    def scale(self, s):
        return Tensor4(self.array * self.dtype.type(s))

    def flat(self):
        """The underlying values as a 1-d row-major view."""
        return self.array.reshape(-1)

    def tobytes(self):
        """Little-endian raw values, row major.  Round-trips bit-exactly."""
        return self.array.astype(self.array.dtype.newbyteorder("<"), copy=False).tobytes()

    @classmethod
    def frombytes(cls, shape, buf, dtype=np.float32):
        dt = np.dtype(dtype).newbyteorder("<")
        n = int(np.prod(shape))
        if len(buf) != n * dt.itemsize:
            raise ValueError(
                f"buffer holds {len(buf)} bytes, shape {tuple(shape)} needs {n * dt.itemsize}"
            )
        arr = np.frombuffer(buf, dtype=dt).reshape(shape).astype(dtype)
        return cls(arr)

    def __repr__(self):
        return f"Tensor4(shape={self.shape}, dtype={self.dtype})"


def dot(a, b):
    """Flat dot product of two tensors of identical length.  No broadcasting."""
    va = a.flat() if isinstance(a, Tensor4) else np.asarray(a).reshape(-1)
    vb = b.flat() if isinstance(b, Tensor4) else np.asarray(b).reshape(-1)
    if va.shape != vb.shape:
        raise ValueError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    return float(np.dot(va.astype(np.float64), vb.astype(np.float64)))
