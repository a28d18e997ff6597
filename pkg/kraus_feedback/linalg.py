"""Dense complex linear algebra kernels.

Every function accepts plain ``numpy`` arrays. Functions documented as
batched operate on the two trailing axes and broadcast over leading ones.
"""
from typing import List, NamedTuple, Tuple

import numpy as np
from numpy.typing import NDArray

from kraus_feedback.config import settings
from kraus_feedback.errors import DimensionError, ParameterError

ComplexMatrix = NDArray[np.complex128]


class PolarFactors(NamedTuple):
    """Polar factors ``T = V |T|``."""

    unitary_part: ComplexMatrix
    absolute_part: ComplexMatrix


def as_square(m: NDArray, batched: bool = True) -> ComplexMatrix:
    """Coerce to a complex array of square matrices, checking finiteness."""
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim < 2 or (not batched and arr.ndim != 2):
        raise DimensionError(
            f"expected a square matrix, got shape {arr.shape}"
        )
    if arr.shape[-1] != arr.shape[-2] or arr.shape[-1] == 0:
        raise DimensionError(
            f"expected a square matrix, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ParameterError("matrix has non-finite entries")
    return arr


def dagger(m: NDArray) -> NDArray:
    """Conjugate transpose of the trailing two axes."""
    return np.conj(np.swapaxes(m, -1, -2))


def matrix_abs(m: NDArray) -> ComplexMatrix:
    """Return ``(m^dag m)^(1/2)`` as ``Vh^dag diag(s) Vh``; batched.

    Built from the SVD, not from the Gram matrix: square roots of Gram
    eigenvalues near 1e-19 turn into errors near 1e-10 on rank-deficient
    input.
    """
    arr = as_square(m)
    _, sigma, right_h = np.linalg.svd(arr)
    result = dagger(right_h) @ (sigma[..., :, None] * right_h)
    return (result + dagger(result)) / 2


def trace_norm(m: NDArray) -> NDArray[np.float64]:
    """Sum of singular values, i.e. ``tr|m|``; batched."""
    arr = as_square(m)
    return np.linalg.svd(arr, compute_uv=False).sum(axis=-1)


def _complete_basis(columns: ComplexMatrix, dim: int) -> ComplexMatrix:
    """Extend orthonormal columns to a unitary with unit vectors in order."""
    basis: List[ComplexMatrix] = list(columns.T)
    for unit in np.eye(dim, dtype=np.complex128):
        if len(basis) == dim:
            break
        vec = unit.copy()
        for _ in range(2):
            for b in basis:
                vec = vec - b * np.vdot(b, vec)
        norm = np.linalg.norm(vec)
        if norm > 1e-6:
            basis.append(vec / norm)
    return np.stack(basis, axis=1)


def polar_decompose(m: NDArray) -> PolarFactors:
    """Polar decomposition of one square matrix.

    The absolute part is unique. Where singular values fall below
    ``TOL_RANK`` the unitary part is completed deterministically from the
    standard basis in index order.
    """
    arr = as_square(m, batched=False)
    left, sigma, right_h = np.linalg.svd(arr)
    keep = sigma >= settings.TOL_RANK
    if not keep.all():
        left = _complete_basis(left[:, keep], arr.shape[0])
    return PolarFactors(left @ right_h, matrix_abs(arr))


def haar_random_unitary(
    dim: int, rng: np.random.Generator
) -> ComplexMatrix:
    """Sample one Haar-distributed ``dim x dim`` unitary."""
    return haar_random_unitaries(dim, 1, rng)[0]


def haar_random_unitaries(
    dim: int, count: int, rng: np.random.Generator
) -> ComplexMatrix:
    """Sample ``count`` Haar unitaries, shape ``(count, dim, dim)``.

    Ginibre matrices are QR-factorized and the columns of Q rephased so
    that the diagonal of R is real positive.
    """
    if dim < 1:
        raise DimensionError("unitary dimension must be >= 1")
    if count < 0:
        raise ParameterError("sample count must be >= 0")
    shape = (count, dim, dim)
    ginibre = (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    ) / np.sqrt(2)
    q, r = np.linalg.qr(ginibre)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    modulus = np.abs(diag)
    safe = np.where(modulus > 0, modulus, 1.0)
    phases = np.where(modulus > 0, diag / safe, 1.0)
    return q * phases[..., None, :]


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream...)``."""
    if seed < 0:
        raise ParameterError("seed must be a non-negative integer")
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=tuple(stream))
    )


def trace_sq_identity_check(m: NDArray) -> Tuple[complex, complex]:
    """Return ``((tr m)^2, tr m^2 + 2 det m)`` for a 2x2 matrix."""
    arr = as_square(m, batched=False)
    if arr.shape != (2, 2):
        raise DimensionError(f"expected a 2x2 matrix, got {arr.shape}")
    lhs = np.trace(arr) ** 2
    rhs = np.trace(arr @ arr) + 2 * np.linalg.det(arr)
    return complex(lhs), complex(rhs)


def commutator(a: NDArray, b: NDArray) -> ComplexMatrix:
    return a @ b - b @ a


def is_unitary(m: NDArray, tol: float = settings.TOL_UNITARY) -> bool:
    """Check ``m^dag m = I`` entrywise to ``tol``."""
    arr = as_square(m, batched=False)
    eye = np.eye(arr.shape[0])
    return bool(np.max(np.abs(dagger(arr) @ arr - eye)) <= tol)


def is_hermitian(m: NDArray, tol: float = settings.TOL_UNITARY) -> bool:
    arr = as_square(m)
    return bool(np.max(np.abs(arr - dagger(arr))) <= tol)


def givens_rotation(
    dim: int, i: int, j: int, angle: float, imaginary: bool = False
) -> ComplexMatrix:
    """Rotation by ``angle`` in the ``(i, j)`` plane.

    The imaginary variant carries ``i sin`` off the diagonal; together the
    two kinds generate SU(dim) up to diagonal phases.
    """
    rot = np.eye(dim, dtype=np.complex128)
    c, s = np.cos(angle), np.sin(angle)
    rot[i, i] = rot[j, j] = c
    if imaginary:
        rot[i, j] = rot[j, i] = 1j * s
    else:
        rot[i, j], rot[j, i] = s, -s
    return rot
