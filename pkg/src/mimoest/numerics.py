"""Dense complex-matrix algebra and deterministic random streams.

Matrices are plain ``numpy.ndarray`` objects with ``complex128`` dtype; the
helpers here add the validation and error reporting the rest of the package
relies on.  All arithmetic is done in 64-bit floats.

Randomness goes through :class:`RngStream`, a counter-based generator keyed by
``(seed, stream_id)``.  Distinct stream ids give statistically independent
sequences regardless of draw order, which is what makes parallel Monte-Carlo
generation reproducible.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import (
    FactorizationError,
    ParameterError,
    ShapeError,
    SingularMatrixError,
)

# Relative pivot threshold below which a matrix is declared singular.
PIVOT_RTOL = 1e-12

# Stream-id partitioning: dataset samples use raw indices (DOMAIN_DATA), all
# other consumers tag the top two bits so evaluation can never replay a
# training channel.  Assert-checked in the sweep machinery.
DOMAIN_DATA = 0
DOMAIN_EVAL = 1 << 62
DOMAIN_TRAIN = 2 << 62
DOMAIN_LINK = 3 << 62
_STREAM_INDEX_MASK = (1 << 62) - 1


def stream_id(domain: int, index: int) -> int:
    """Compose a 64-bit stream id from a domain tag and a point index."""
    if index < 0 or index > _STREAM_INDEX_MASK:
        raise ParameterError(f"stream index out of range: {index}")
    if domain not in (DOMAIN_DATA, DOMAIN_EVAL, DOMAIN_TRAIN, DOMAIN_LINK):
        raise ParameterError(f"unknown stream domain {domain}")
    return domain | index


def as_matrix(entries, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce ``entries`` to a 2-D complex128 array, checking shape and finiteness."""
    a = np.asarray(entries, dtype=np.complex128)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if rows is not None and a.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got {a.shape[1]}")
    require_finite(a)
    return a


def require_finite(a: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} contains non-finite entries")


def _require_2d(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Complex matrix product with an explicit inner-dimension check."""
    a = _require_2d(a, "a")
    b = _require_2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return np.asarray(a @ b, dtype=np.complex128)


def hermitian(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return _require_2d(a, "a").conj().T.copy()


def inverse(a: np.ndarray) -> np.ndarray:
    """Matrix inverse by Gauss-Jordan elimination with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``PIVOT_RTOL`` times the largest entry magnitude of the input.
    """
    a = _require_2d(a, "a")
    n, m = a.shape
    if n != m:
        raise ShapeError(f"inverse requires a square matrix, got {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError("zero matrix is singular")
    threshold = PIVOT_RTOL * scale

    aug = np.hstack([a.astype(np.complex128), np.eye(n, dtype=np.complex128)])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) < threshold:
            raise SingularMatrixError(
                f"pivot {abs(aug[piv, col]):.3e} below threshold {threshold:.3e}"
            )
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] = aug[col] / aug[col, col]
        others = np.arange(n) != col
        aug[others] -= np.outer(aug[others, col], aug[col])
    return aug[:, n:]


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.conj().T == a, for Hermitian PD input."""
    a = _require_2d(a, "a")
    n, m = a.shape
    if n != m:
        raise ShapeError(f"cholesky requires a square matrix, got {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if not np.allclose(a, a.conj().T, atol=1e-12 * max(scale, 1.0)):
        raise FactorizationError("matrix is not Hermitian")

    lower = np.zeros((n, n), dtype=np.complex128)
    for j in range(n):
        d = a[j, j].real - np.sum(np.abs(lower[j, :j]) ** 2)
        if d <= 0.0:
            raise FactorizationError(f"non-positive pivot {d:.3e} at index {j}")
        lower[j, j] = np.sqrt(d)
        if j + 1 < n:
            lower[j + 1:, j] = (
                a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j].conj()
            ) / lower[j, j]
    return lower


def frobenius_norm_sq(a: np.ndarray) -> float:
    """Sum of squared entry magnitudes."""
    a = np.asarray(a)
    return float(np.sum(np.abs(a) ** 2))


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by the Philox bit generator, so the same key always reproduces the
    same draw sequence and distinct stream ids are independent.  A stream is
    single-owner: parallel tasks must each get their own id rather than share
    one instance.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_complex_gaussian(
    rng: RngStream, rows: int, cols: int, variance: float
) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian entries, E|x|^2 = variance."""
    if variance <= 0.0 or not np.isfinite(variance):
        raise ParameterError(f"variance must be positive, got {variance}")
    if rows < 1 or cols < 1:
        raise ParameterError(f"matrix dimensions must be positive, got {rows}x{cols}")
    z = rng.standard_normal((rows, cols, 2))
    return np.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])


def sample_complex_gaussian_batch(
    rng: RngStream, n: int, rows: int, cols: int, variance: float
) -> np.ndarray:
    """Stack of ``n`` independent draws, shape ``(n, rows, cols)``.

    Uses one contiguous draw from the stream; the k-th slice does not equal
    the k-th call of :func:`sample_complex_gaussian` on a fresh stream, so the
    batched and per-sample generation paths are distinct determinism domains.
    """
    if n < 1:
        raise ParameterError(f"batch size must be positive, got {n}")
    if variance <= 0.0 or not np.isfinite(variance):
        raise ParameterError(f"variance must be positive, got {variance}")
    z = rng.standard_normal((n, rows, cols, 2))
    return np.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])
