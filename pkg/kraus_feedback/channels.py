"""Kraus sets, the parametric channel families and mixing of decompositions."""
from dataclasses import dataclass
from itertools import permutations
from typing import (
    ClassVar,
    Iterable,
    Iterator,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from kraus_feedback.config import settings
from kraus_feedback.errors import CptpError, DimensionError, ParameterError
from kraus_feedback.linalg import ComplexMatrix, as_square, dagger, is_unitary

PAULI = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]],
    dtype=np.complex128,
)


@dataclass(frozen=True, eq=False)
class KrausSet:
    """Ordered Kraus operators of one channel step, shape ``(m, d, d)``."""

    operators: ComplexMatrix

    def __post_init__(self) -> None:
        """Copy, check shape and freeze the operator stack."""
        ops = np.array(self.operators, dtype=np.complex128)
        if ops.ndim != 3 or ops.shape[0] == 0:
            raise DimensionError(
                f"expected a non-empty stack of matrices, got {ops.shape}"
            )
        as_square(ops)
        ops.setflags(write=False)
        object.__setattr__(self, "operators", ops)

    @classmethod
    def from_operators(cls, operators: Iterable[NDArray]) -> "KrausSet":
        """Build from a sequence of same-sized square matrices."""
        mats = [np.asarray(op, dtype=np.complex128) for op in operators]
        if not mats:
            raise DimensionError("Kraus set needs at least one operator")
        shapes = sorted({m.shape for m in mats})
        if len(shapes) != 1:
            raise DimensionError(f"mixed operator shapes {shapes}")
        return cls(np.stack(mats))

    @property
    def dim(self) -> int:
        """Hilbert space dimension d."""
        return int(self.operators.shape[1])

    @property
    def size(self) -> int:
        """Number of operators m."""
        return int(self.operators.shape[0])

    def __len__(self) -> int:
        """Operator count."""
        return self.size

    def __iter__(self) -> Iterator[ComplexMatrix]:
        """Iterate operators."""
        return iter(self.operators)

    def __getitem__(self, index: int) -> ComplexMatrix:
        """Operator by index."""
        return self.operators[index]

    def __repr__(self) -> str:
        """Short form, operators are not printed."""
        return f"KrausSet(dim={self.dim}, size={self.size})"


class CptpReport(NamedTuple):
    """Outcome of the normalization check."""

    deviation: float
    tolerance: float

    @property
    def valid(self) -> bool:
        """Deviation within tolerance."""
        return self.deviation <= self.tolerance


KrausLike = Union[KrausSet, Sequence[NDArray]]


def _as_kraus(k: KrausLike) -> KrausSet:
    return k if isinstance(k, KrausSet) else KrausSet.from_operators(k)


def validate_cptp(
    k: KrausLike, tol: float = settings.TOL_CPTP
) -> CptpReport:
    """Max entrywise deviation of ``sum T^dag T`` from the identity."""
    kraus = _as_kraus(k)
    ops = kraus.operators
    total = np.einsum("xji,xjk->ik", np.conj(ops), ops)
    deviation = float(np.max(np.abs(total - np.eye(kraus.dim))))
    return CptpReport(deviation, tol)


def ensure_cptp(k: KrausLike, tol: float = settings.TOL_CPTP) -> KrausSet:
    """Return the set, raising ``CptpError`` when it is not normalized."""
    kraus = _as_kraus(k)
    report = validate_cptp(kraus, tol)
    if not report.valid:
        raise CptpError(report.deviation, tol)
    return kraus


def prune(k: KrausSet, tol: float = settings.TOL_PRUNE) -> KrausSet:
    """Drop operators with Frobenius norm below ``tol``."""
    norms = np.linalg.norm(k.operators, axis=(1, 2))
    keep = norms >= tol
    if not keep.any():
        raise ParameterError("pruning would remove every operator")
    if not keep.all():
        logger.debug(f"pruned {int((~keep).sum())} zero Kraus operators")
    return KrausSet(k.operators[keep])


def pad(k: KrausSet, size: int) -> KrausSet:
    if size < k.size:
        raise ParameterError(f"cannot pad {k.size} operators down to {size}")
    zeros = np.zeros((size - k.size, k.dim, k.dim), dtype=np.complex128)
    return KrausSet(np.concatenate([k.operators, zeros]))


def apply_channel(k: KrausSet, rho: NDArray) -> ComplexMatrix:
    """Channel output ``sum T rho T^dag``."""
    state = as_square(rho, batched=False)
    if state.shape[0] != k.dim:
        raise DimensionError(
            f"state of size {state.shape[0]} on a {k.dim}-dim channel"
        )
    ops = k.operators
    return np.einsum("xij,jk,xlk->il", ops, state, np.conj(ops))


def choi_matrix(k: KrausSet) -> ComplexMatrix:
    """Channel applied to half of the unnormalized ``sum_i |ii>``."""
    vecs = np.swapaxes(k.operators, 1, 2).reshape(k.size, k.dim**2)
    return vecs.T @ np.conj(vecs)


def same_channel(
    a: KrausSet, b: KrausSet, tol: float = settings.TOL_CHOI
) -> bool:
    """Whether two Kraus sets describe the same channel."""
    if a.dim != b.dim:
        return False
    return bool(np.max(np.abs(choi_matrix(a) - choi_matrix(b))) <= tol)


@dataclass(frozen=True, eq=False)
class MixingUnitary:
    """Unitary acting on the operator index of a Kraus set."""

    matrix: ComplexMatrix

    def __post_init__(self) -> None:
        """Validate unitarity."""
        mat = as_square(self.matrix, batched=False)
        if not is_unitary(mat):
            raise ParameterError("mixing matrix is not unitary")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls, size: int) -> "MixingUnitary":
        """Identity mixing of the given size."""
        return cls(np.eye(size, dtype=np.complex128))


def apply_mixing(
    k: KrausSet, u: Union[MixingUnitary, NDArray]
) -> KrausSet:
    """Return ``{sum_j U_ij T_j}``, the same channel measured differently."""
    mixing = u if isinstance(u, MixingUnitary) else None
    matrix = as_square(
        mixing.matrix if mixing is not None else u, batched=False
    )
    if matrix.shape[0] != k.size:
        raise DimensionError(
            f"{matrix.shape[0]}x{matrix.shape[0]} mixing on {k.size} operators"
        )
    if mixing is None and not is_unitary(matrix):
        raise ParameterError("mixing matrix is not unitary")
    return KrausSet(np.einsum("ij,jab->iab", matrix, k.operators))


def _phase_equal(x: ComplexMatrix, y: ComplexMatrix, tol: float) -> bool:
    overlap = np.vdot(x, y)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return bool(np.max(np.abs(y - phase * x)) <= tol)


def equivalent_decompositions(
    a: KrausSet, b: KrausSet, tol: float = settings.TOL_EQUIVALENCE
) -> bool:
    """Whether ``b = P a`` for a permutation matrix ``P`` with phases.

    The smaller set is padded with zero operators first. Every permutation
    is tried against the table of phase-aligned operator matches.
    """
    if a.dim != b.dim:
        return False
    size = max(a.size, b.size)
    left, right = pad(a, size).operators, pad(b, size).operators
    match = [[_phase_equal(x, y, tol) for y in right] for x in left]
    return any(
        all(match[i][j] for i, j in enumerate(order))
        for order in permutations(range(size))
    )


def pauli_transfer(k: KrausSet) -> Tuple[NDArray, NDArray]:
    """Affine Bloch representation ``r -> T r + t`` of a qubit channel."""
    if k.dim != 2:
        raise DimensionError("affine Bloch form is defined for qubits only")
    images = [apply_channel(k, sigma) for sigma in PAULI]
    transfer = np.array(
        [[np.trace(si @ img).real / 2 for img in images] for si in PAULI]
    )
    unit = apply_channel(k, np.eye(2))
    shift = np.array([np.trace(si @ unit).real / 2 for si in PAULI])
    return transfer, shift


# Mixing parametrizations


def rotation_stack(alphas: NDArray) -> ComplexMatrix:
    """One-angle 2x2 rotations ``[[c, s], [-s, c]]``, shape ``(N, 2, 2)``."""
    c, s = np.cos(alphas), np.sin(alphas)
    rows = [np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)]
    return np.stack(rows, axis=-2).astype(np.complex128)


def rotation_mixing(alpha: float) -> ComplexMatrix:
    return rotation_stack(np.array([alpha]))[0]


def euler3_stack(
    theta13: NDArray, theta23: NDArray, delta: NDArray
) -> ComplexMatrix:
    """3x3 unitaries ``R23 D(-delta) R13 D(delta)``, shape ``(N, 3, 3)``.

    ``D(delta) = diag(e^(i delta), 1, 1)``; the trailing 1-2 rotation of the
    full factorization is dropped. At ``delta = 0`` this is ``R23 R13``.
    """
    theta13, theta23, delta = np.broadcast_arrays(theta13, theta23, delta)
    c13, s13 = np.cos(theta13), np.sin(theta13)
    c23, s23 = np.cos(theta23), np.sin(theta23)
    ph = np.exp(1j * delta)
    out = np.zeros(theta13.shape + (3, 3), dtype=np.complex128)
    out[..., 0, 0] = c13
    out[..., 0, 2] = s13 * np.conj(ph)
    out[..., 1, 0] = -s23 * s13 * ph
    out[..., 1, 1] = c23
    out[..., 1, 2] = s23 * c13
    out[..., 2, 0] = -c23 * s13 * ph
    out[..., 2, 1] = -s23
    out[..., 2, 2] = c23 * c13
    return out


def euler3_mixing(
    theta13: float, theta23: float, delta: float = 0.0
) -> ComplexMatrix:
    """Single 3x3 unitary of the Euler-angle family."""
    return euler3_stack(
        np.array([theta13]), np.array([theta23]), np.array([delta])
    )[0]


def ad_optimal_mixing() -> ComplexMatrix:
    """Mixing that takes the canonical damping triple to the optimal one."""
    h = 1 / np.sqrt(2)
    return np.array([[h, 0, h], [0, 1, 0], [-h, 0, h]], dtype=np.complex128)


# Channel builders


def _check_angle(name: str, value: float) -> None:
    if not -1e-12 <= value <= np.pi + 1e-12:
        raise ParameterError(f"{name}={value} is outside [0, pi]")


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name}={value} is outside [0, 1]")


def build_qubit_extreme(theta: float, phi: float) -> KrausSet:
    """Extreme-point qubit channel in its canonical two-operator form."""
    _check_angle("theta", theta)
    _check_angle("phi", phi)
    t0 = np.diag([np.cos(theta), np.cos(phi)])
    t1 = np.array([[0, np.sin(phi)], [np.sin(theta), 0]])
    return KrausSet.from_operators([t0, t1])


def build_qubit_mixture(
    lam: float, theta: float, phi: float, theta_p: float, phi_p: float
) -> KrausSet:
    """Convex combination of two extreme points, four operators, no pruning."""
    _check_probability("lambda", lam)
    first = build_qubit_extreme(theta, phi).operators
    second = build_qubit_extreme(theta_p, phi_p).operators
    return KrausSet(
        np.concatenate([np.sqrt(lam) * first, np.sqrt(1 - lam) * second])
    )


def build_qubit_rank3(lam: float) -> KrausSet:
    """Rank-3 mixture of the pure-decay extreme point and the identity."""
    return prune(build_qubit_mixture(lam, 0.0, np.pi / 2, 0.0, 0.0))


def build_qubit_rank3_optimal(lam: float, theta23: float = 0.0) -> KrausSet:
    """Decomposition of the rank-3 channel maximizing one-step fidelity.

    Any ``theta23`` is optimal for one step; multiples of pi/2 keep the
    absolute values commuting for every later step.
    """
    theta13 = -0.5 * np.arcsin(np.sqrt(lam))
    mixing = euler3_mixing(theta13, theta23)
    return apply_mixing(build_qubit_rank3(lam), mixing)


def _dephasing_alpha(q: float, sign: int) -> float:
    root = np.sqrt(8 + q**6)
    return (q**3 * root + sign * (4 - q**6)) / (root + sign * 3 * q**3)


def build_qutrit_dephasing(gamma: float) -> KrausSet:
    """Three-operator diagonal form of qutrit dephasing, ``q = e^(-gamma/2)``.

    The minus-branch coefficient vanishes at ``gamma = 0`` where its
    ``alpha`` is 0/0; the operator is then set to zero.
    """
    if gamma < 0:
        raise ParameterError(f"gamma={gamma} must be >= 0")
    q = np.exp(-gamma / 2)
    root = np.sqrt(8 * q**2 + q**8)
    d0 = np.sqrt((1 - q**4) / 2) * np.diag([-1.0, 0.0, 1.0])
    ops = [d0]
    for sign in (1, -1):
        numerator = 2 + q**4 + sign * root
        if numerator < 1e-14:
            ops.append(np.zeros((3, 3)))
            continue
        alpha = _dephasing_alpha(q, sign)
        coeff = np.sqrt(numerator / (2 * (2 + alpha**2)))
        ops.append(coeff * np.diag([1.0, alpha, 1.0]))
    return KrausSet.from_operators(ops)


_MAX_SERIES_ORDER = 256


def _series_order(gamma: float, tol: float) -> int:
    """Terms needed before the dropped weight of level 2 is below ``tol``.

    The weight of ``D_j`` on level ``m`` is Poisson in ``j`` with mean
    ``gamma m^2``, so level 2 converges last.
    """
    mean = 4 * gamma
    term = total = float(np.exp(-mean))
    for j in range(1, _MAX_SERIES_ORDER + 1):
        if 1 - total <= tol:
            return j
        term *= mean / j
        total += term
    raise ParameterError(
        f"gamma={gamma} needs more than {_MAX_SERIES_ORDER} series terms"
    )


def build_qutrit_dephasing_series(
    gamma: float, order: Optional[int] = None
) -> KrausSet:
    """Leading terms of the infinite dephasing decomposition.

    ``D_j = e^(-gamma H^2 / 2) (-i sqrt(gamma) H)^j / sqrt(j!)`` with
    ``H = diag(0, 1, 2)``. Without ``order`` the series stops once the
    dropped weight is below ``settings.TOL_CPTP``; a truncated set loses
    that weight on level 2 and less on level 1.
    """
    if gamma < 0:
        raise ParameterError(f"gamma={gamma} must be >= 0")
    if order is None:
        order = _series_order(gamma, settings.TOL_CPTP)
    if not 1 <= order <= _MAX_SERIES_ORDER:
        raise ParameterError(
            f"order={order} must be in [1, {_MAX_SERIES_ORDER}]"
        )
    levels = np.arange(3.0)
    steps = np.sqrt(gamma) * levels / np.sqrt(np.arange(1, order))[:, None]
    amplitudes = np.exp(-gamma * levels**2 / 2) * np.vstack(
        [np.ones((1, 3)), np.cumprod(steps, axis=0)]
    )
    phases = np.array([1, -1j, -1, 1j])[np.arange(order) % 4]
    diagonals = phases[:, None] * amplitudes
    logger.debug(f"dephasing series at gamma={gamma}: {order} terms")
    return KrausSet(diagonals[:, :, None] * np.eye(3))


def build_qutrit_amplitude_damping(p: float) -> KrausSet:
    """Canonical qutrit amplitude-damping triple."""
    _check_probability("p", p)
    a0 = np.diag([1, np.sqrt(1 - p), 1 - p])
    a1 = np.zeros((3, 3))
    a1[0, 1] = np.sqrt(p)
    a1[1, 2] = np.sqrt(2 * p * (1 - p))
    a2 = np.zeros((3, 3))
    a2[0, 2] = p
    return KrausSet.from_operators([a0, a1, a2])


def build_ad_optimal_decomposition(p: float) -> KrausSet:
    """Amplitude-damping decomposition maximizing one-step fidelity."""
    _check_probability("p", p)
    h = 1 / np.sqrt(2)
    base = np.diag([1, np.sqrt(1 - p), 1 - p])
    a0 = h * (base + p * np.eye(3, k=2))
    a2 = -h * (base - p * np.eye(3, k=2))
    a1 = build_qutrit_amplitude_damping(p).operators[1]
    return KrausSet.from_operators([a0, a1, a2])


# Channel families


@dataclass(frozen=True)
class QubitExtreme:
    """Closure of the extreme points of diagonal qubit channels."""

    name: ClassVar[str] = "qubit-extreme"
    theta: float
    phi: float

    def build(self) -> KrausSet:
        """Kraus set of the family member."""
        return build_qubit_extreme(self.theta, self.phi)


@dataclass(frozen=True)
class QubitMixture:
    """Two-term convex combination of extreme points."""

    name: ClassVar[str] = "qubit-mixture"
    lam: float
    theta: float
    phi: float
    theta_p: float
    phi_p: float

    def build(self) -> KrausSet:
        """Kraus set of the family member."""
        return build_qubit_mixture(
            self.lam, self.theta, self.phi, self.theta_p, self.phi_p
        )


@dataclass(frozen=True)
class QutritDephasing:
    """Qutrit dephasing with rate gamma."""

    name: ClassVar[str] = "qutrit-dephasing"
    gamma: float
    form: str = "diagonal"
    order: Optional[int] = None

    def build(self) -> KrausSet:
        """Three diagonal operators, or the truncated series."""
        if self.form == "series":
            return build_qutrit_dephasing_series(self.gamma, self.order)
        if self.form == "diagonal":
            return build_qutrit_dephasing(self.gamma)
        raise ParameterError(f"unknown dephasing form {self.form!r}")


@dataclass(frozen=True)
class QutritAmplitudeDamping:
    """Qutrit amplitude damping, canonical or optimal decomposition."""

    name: ClassVar[str] = "qutrit-ad"
    p: float
    decomposition: str = "canonical"

    def build(self) -> KrausSet:
        """Kraus set of the family member."""
        if self.decomposition == "optimal":
            return build_ad_optimal_decomposition(self.p)
        if self.decomposition == "canonical":
            return build_qutrit_amplitude_damping(self.p)
        raise ParameterError(
            f"unknown decomposition {self.decomposition!r}"
        )


@dataclass(frozen=True)
class Raw:
    """User-supplied Kraus set."""

    name: ClassVar[str] = "raw"
    kraus: KrausSet

    def build(self) -> KrausSet:
        """Validated Kraus set, at most ``d^2`` operators."""
        if self.kraus.size > self.kraus.dim**2:
            raise ParameterError(
                f"{self.kraus.size} operators exceed the Kraus rank bound "
                f"{self.kraus.dim ** 2}"
            )
        return ensure_cptp(self.kraus)


ChannelFamily = Union[
    QubitExtreme, QubitMixture, QutritDephasing, QutritAmplitudeDamping, Raw
]
