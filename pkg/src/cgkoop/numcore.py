"""Dense float64 tensors, small linear algebra, radix-2 FFT, and seeded
random streams.

All tensors are numpy float64 arrays (complex128 on the FFT path).  The
routines here wrap numpy/LAPACK behind the narrow contracts the rest of
the package relies on: shape validation up front, SPD solves that report
the failing pivot, and a counter-based random stream whose output is
bit-reproducible for a fixed seed regardless of how it is split.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

from .errors import NumericalError, ShapeError

_MAGIC = b"CGT1"

# splitmix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def as_tensor(x, dims=None):
    """Return ``x`` as a C-contiguous float64 array, checking ``dims`` if given."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if dims is not None and a.shape != tuple(dims):
        raise ShapeError(f"expected dims {tuple(dims)}, got {a.shape}")
    return a


def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: {a.shape} vs {b.shape}")
    return a @ b


def solve_spd(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    Uses a Cholesky factorization; raises NumericalError with the failing
    pivot index when ``a`` is not SPD.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_spd needs a square matrix, got {a.shape}")
    rhs = b if b.ndim == 2 else b.reshape(-1, 1)
    if rhs.shape[0] != a.shape[0]:
        raise ShapeError(f"rhs rows {rhs.shape[0]} != matrix size {a.shape[0]}")
    c, info = lapack.dpotrf(a, lower=1)
    if info > 0:
        raise NumericalError(
            f"matrix is not SPD (pivot {info} not positive)", pivot_index=int(info)
        )
    if info < 0:
        raise NumericalError(f"dpotrf: illegal argument {-info}")
    x, info = lapack.dpotrs(c, rhs, lower=1)
    if info != 0:
        raise NumericalError(f"dpotrs failed with info={info}")
    return x if b.ndim == 2 else x[:, 0]


def _require_pow2(n):
    if n < 1 or (n & (n - 1)) != 0:
        raise ShapeError(f"length {n} is not a power of two")


def fft_1d(x):
    """Forward DFT (numpy convention, no normalization); length must be 2^k."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ShapeError(f"fft_1d needs a rank-1 tensor, got {x.shape}")
    _require_pow2(x.shape[0])
    return np.fft.fft(x)


def ifft_1d(x):
    """Inverse DFT matching :func:`fft_1d`; length must be 2^k."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ShapeError(f"ifft_1d needs a rank-1 tensor, got {x.shape}")
    _require_pow2(x.shape[0])
    return np.fft.ifft(x)


def _mix(x):
    """splitmix64 finalizer, vectorized over uint64 arrays."""
    z = x.astype(np.uint64, copy=True)
    z ^= z >> _U64(30)
    z *= _MIX1
    z ^= z >> _U64(27)
    z *= _MIX2
    z ^= z >> _U64(31)
    return z


def derive_seed(seed, role, index=0):
    """Derive a stream seed from (master seed, role tag, index).

    Derivation: splitmix64-mix of ``seed + crc32(role)*GOLDEN + (index+1)``.
    Documented so that independent tools can reproduce the stream layout.
    """
    mask = 0xFFFFFFFFFFFFFFFF
    tag = zlib.crc32(role.encode("utf-8"))
    base = (int(seed) + tag * 0x9E3779B97F4A7C15 + index + 1) & mask
    return int(_mix(np.array([base], dtype=np.uint64))[0])


class RngStream:
    """Counter-based random stream: splitmix64 uniforms + Box-Muller normals.

    The i-th uniform depends only on (seed, i), so streams split by counter
    offset are reproducible and independent of draw batching is *not*
    assumed: a stream must not be shared across concurrent tasks.
    """

    def __init__(self, seed, counter=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def _raw(self, count):
        idx = np.arange(self.counter, self.counter + count, dtype=np.uint64)
        self.counter += count
        x = (idx + _U64(1)) * _GOLDEN + _U64(self.seed)
        return _mix(x)

    def uniform(self, dims=()):
        """Uniforms in (0, 1], shaped ``dims`` (53-bit mantissas)."""
        dims = (dims,) if np.isscalar(dims) else tuple(dims)
        n = int(np.prod(dims)) if dims else 1
        bits = self._raw(n) >> _U64(11)
        u = (bits.astype(np.float64) + 1.0) * (2.0 ** -53)
        return u.reshape(dims) if dims else float(u[0])

    def gaussian(self, dims=()):
        """I.i.d. standard normals shaped ``dims`` via Box-Muller."""
        dims = (dims,) if np.isscalar(dims) else tuple(dims)
        n = int(np.prod(dims)) if dims else 1
        pairs = (n + 1) // 2
        # interleaved consumption keeps the counter advance a pure function
        # of the number of normals requested
        raw = self._raw(2 * pairs)
        u1 = ((raw[0::2] >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = ((raw[1::2] >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:n]
        return z.reshape(dims) if dims else float(z[0])

    def permutation(self, n):
        """Deterministic permutation of range(n) (argsort of uniforms)."""
        return np.argsort(self.uniform((n,)), kind="stable")

    def split(self, role, index=0):
        """Child stream with a seed derived from (seed, role, index)."""
        return RngStream(derive_seed(self.seed, role, index))


def write_cgt(path, arr):
    """Write a tensor in the CGT1 format (bit-exact, little-endian)."""
    a = np.ascontiguousarray(arr, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", a.ndim))
        for d in a.shape:
            f.write(struct.pack("<Q", d))
        f.write(a.astype("<f8", copy=False).tobytes(order="C"))


def read_cgt(path):
    """Read a CGT1 tensor file written by :func:`write_cgt`."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ShapeError(f"{path}: bad magic {magic!r}")
        (rank,) = struct.unpack("<I", f.read(4))
        dims = struct.unpack("<" + "Q" * rank, f.read(8 * rank))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(f.read(8 * n), dtype="<f8", count=n)
        trailing = f.read(1)
        if trailing:
            raise ShapeError(f"{path}: trailing bytes after payload")
    return data.reshape(dims).astype(np.float64)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
