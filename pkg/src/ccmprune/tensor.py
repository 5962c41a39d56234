"""Dense containers, per-channel reshaping, singular values and the ``.ckt`` file format.

Shapes follow the convention used everywhere in the package:

* feature batch: ``(batch, channels, height, width)``
* channel stack: ``(channels, height, width)``
* channel matrix: ``(channels, height * width)``, rows in row-major pixel order
"""

import struct
from pathlib import Path

import numpy as np

from ._validation import check_feature_batch, check_finite
from .exceptions import (
    BadMagicError,
    LengthMismatchError,
    TensorFormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)

__all__ = [
    "batch_mean",
    "flatten",
    "channel_matrix",
    "singular_values",
    "nuclear_norm",
    "write_tensor",
    "read_tensor",
]

MAGIC = b"CKT1"
FORMAT_VERSION = 1
DTYPE_FLOAT64 = 1

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


def batch_mean(f):
    """Average a feature batch over its sample axis -> ``(channels, h, w)``."""
    f = check_feature_batch(f)
    return f.mean(axis=0)


def flatten(stack):
    """Flatten each channel of a ``(channels, h, w)`` stack to one row."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or min(stack.shape) < 1:
        raise ValueError(f"expected a non-empty 3-D channel stack, got shape {stack.shape}")
    n = stack.shape[0]
    return np.ascontiguousarray(stack.reshape(n, -1))


def channel_matrix(f):
    """Batch-average then flatten: the matrix fed to correlation and importance scoring."""
    return flatten(batch_mean(f))


def singular_values(m, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Singular values of ``m`` in descending order.

    Cyclic Jacobi sweeps diagonalise the Gram matrix of the smaller side.
    The rotations are applied to the columns of the matrix itself (the
    one-sided/Hestenes form), so the Gram matrix is never squared out
    explicitly and small singular values keep their relative accuracy.
    A pair of columns counts as converged once
    ``|g_ij| <= tol * sqrt(g_ii * g_jj)``.
    """
    a = check_finite(m, ndim=2, name="matrix")
    if a.size == 0:
        return np.zeros(0)
    # columns of `a` become the smaller side
    if a.shape[1] > a.shape[0]:
        a = a.T
    a = np.array(a, dtype=np.float64, order="F")
    n = a.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            ap = a[:, p]
            for q in range(p + 1, n):
                aq = a[:, q]
                gpq = float(ap @ aq)
                if gpq == 0.0:
                    continue
                gpp = float(ap @ ap)
                gqq = float(aq @ aq)
                if abs(gpq) <= tol * np.sqrt(gpp * gqq):
                    continue
                rotated = True
                zeta = (gqq - gpp) / (2.0 * gpq)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                new_p = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                a[:, p] = new_p
                ap = a[:, p]
        if not rotated:
            break
    sv = np.sqrt(np.maximum(np.einsum("ij,ij->j", a, a), 0.0))
    return np.sort(sv)[::-1]


def nuclear_norm(m):
    """Sum of singular values; exactly 0.0 for a zero matrix."""
    return float(np.sum(singular_values(m)))


def write_tensor(path, dims, data):
    """Write ``data`` (float64, row-major) with explicit ``dims`` to ``path``.

    Layout, little-endian, no padding: ``b"CKT1"``, version u8, dtype u8,
    ndim u32, dims u32 x ndim, payload float64 x prod(dims).
    """
    dims = tuple(int(d) for d in dims)
    arr = np.asarray(data, dtype=np.float64)
    if any(d < 0 for d in dims):
        raise LengthMismatchError(f"negative dimension in {dims}")
    if arr.size != int(np.prod(dims, dtype=np.int64)):
        raise LengthMismatchError(f"dims {dims} describe {int(np.prod(dims))} values, data has {arr.size}")
    check_finite(arr, name="tensor data")
    header = MAGIC + struct.pack("<BBI", FORMAT_VERSION, DTYPE_FLOAT64, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    payload = np.ascontiguousarray(arr.reshape(-1), dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path):
    """Read a ``.ckt`` file; returns ``(dims, array)`` with ``array.shape == dims``."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 10:
        raise TruncatedPayloadError(f"{path}: header truncated")
    version, dtype, ndim = struct.unpack_from("<BBI", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {FORMAT_VERSION}")
    if dtype != DTYPE_FLOAT64:
        raise TensorFormatError(f"{path}: unsupported dtype code {dtype}")
    offset = 10
    if len(raw) < offset + 4 * ndim:
        raise TruncatedPayloadError(f"{path}: dimension table truncated")
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    expected = 8 * int(np.prod(dims, dtype=np.int64))
    got = len(raw) - offset
    if got < expected:
        raise TruncatedPayloadError(f"{path}: payload has {got} bytes, dims need {expected}")
    if got > expected:
        raise LengthMismatchError(f"{path}: payload has {got} bytes, dims need {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64).reshape(dims)
    return tuple(dims), data
