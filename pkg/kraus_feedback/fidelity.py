"""Corrected channels and n-step entanglement fidelities.

Two strategies are evaluated over outcome sequences ``x_1..x_n``:

* Markovian: ``F_n = 1/d^2 sum |tr |T_n| ... |T_1||^2``
* Bayesian: ``F'_n = 1/d^2 sum (tr |T_n ... |T_2 |T_1|| ... |)^2``

The sequence sums are evaluated depth first over blocks of prefixes, each
block expanded for all operators of the next step at once. The same core
serves whole batches of candidate decompositions for the optimizer.
"""
from dataclasses import dataclass
from enum import Enum
from math import prod
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from kraus_feedback.channels import KrausSet, ensure_cptp, same_channel
from kraus_feedback.config import settings
from kraus_feedback.errors import DimensionError, ParameterError, ResourceError
from kraus_feedback.linalg import (
    ComplexMatrix,
    commutator,
    dagger,
    matrix_abs,
    polar_decompose,
    trace_norm,
)

# Matrices materialized per expansion block.
_BLOCK = 2**15


class Strategy(str, Enum):
    """Feedback strategy."""

    MARKOVIAN = "markovian"
    BAYESIAN = "bayesian"


class Method(str, Enum):
    """Evaluation method of the sequence sum."""

    BRUTE = "brute"
    TRANSFER = "transfer"


@dataclass(frozen=True, eq=False)
class FeedbackPlan:
    """Strategy plus one decomposition of the same channel per step."""

    strategy: Strategy
    decompositions: Tuple[KrausSet, ...]

    def __post_init__(self) -> None:
        """Check steps share dimension, normalization and channel."""
        steps = tuple(self.decompositions)
        if not steps:
            raise ParameterError("a feedback plan needs at least one step")
        first = steps[0]
        for step, kraus in enumerate(steps, start=1):
            if kraus.dim != first.dim:
                raise DimensionError(
                    f"step {step} has dimension {kraus.dim}, "
                    f"expected {first.dim}"
                )
            ensure_cptp(kraus)
            if kraus is not first and not same_channel(kraus, first):
                raise ParameterError(
                    f"step {step} decomposes a different channel"
                )
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "decompositions", steps)

    @classmethod
    def stationary(
        cls, strategy: Strategy, kraus: KrausSet, steps: int
    ) -> "FeedbackPlan":
        """Same measurement at every step."""
        if steps < 1:
            raise ParameterError("number of steps must be >= 1")
        return cls(strategy, (kraus,) * steps)

    @property
    def steps(self) -> int:
        """Number of feedback steps n."""
        return len(self.decompositions)

    @property
    def dim(self) -> int:
        """Hilbert space dimension."""
        return self.decompositions[0].dim

    @property
    def term_count(self) -> int:
        """Number of outcome sequences."""
        return prod(k.size for k in self.decompositions)


@dataclass(frozen=True)
class FidelityReport:
    """Fidelity value with provenance."""

    value: float
    strategy: Strategy
    steps: int
    term_count: int
    method: Method
    raw_value: float


def _report(
    raw: float, strategy: Strategy, steps: int, terms: int, method: Method
) -> FidelityReport:
    if raw < -1e-9 or raw > 1 + 1e-9:
        logger.warning(f"fidelity {raw!r} outside [0, 1] before clamping")
    value = min(max(raw, 0.0), 1.0)
    return FidelityReport(value, strategy, steps, terms, method, raw)


def _expand(step: NDArray, prefixes: NDArray) -> NDArray:
    """Left-multiply every prefix by every operator of the step.

    ``step`` is ``(B, m, d, d)``, ``prefixes`` ``(B, P, d, d)``, either batch
    axis may be 1. Returns ``(B, P * m, d, d)``.
    """
    children = step[:, None] @ prefixes[:, :, None]
    return children.reshape(children.shape[0], -1, *children.shape[-2:])


def _blocks(prefixes: NDArray, width: int) -> Iterator[NDArray]:
    batch, count = prefixes.shape[:2]
    per = max(1, _BLOCK // max(1, batch * width))
    for start in range(0, count, per):
        yield prefixes[:, start:start + per]


def _markovian_sum(
    absolutes: Sequence[NDArray], prefixes: NDArray, level: int
) -> NDArray:
    children = _expand(absolutes[level], prefixes)
    if level == len(absolutes) - 1:
        traces = np.trace(children, axis1=-2, axis2=-1)
        return np.sum(np.abs(traces) ** 2, axis=1)
    width = absolutes[level + 1].shape[1]
    return sum(
        _markovian_sum(absolutes, block, level + 1)
        for block in _blocks(children, width)
    )


def _bayesian_sum(
    operators: Sequence[NDArray], prefixes: NDArray, level: int
) -> NDArray:
    products = _expand(operators[level], prefixes)
    if level == len(operators) - 1:
        return np.sum(trace_norm(products) ** 2, axis=1)
    children = matrix_abs(products)
    width = operators[level + 1].shape[1]
    return sum(
        _bayesian_sum(operators, block, level + 1)
        for block in _blocks(children, width)
    )


def _identity_prefix(dim: int) -> NDArray:
    return np.eye(dim, dtype=np.complex128)[None, None]


def markovian_values(steps: Sequence[NDArray]) -> NDArray[np.float64]:
    """Batched Markovian fidelity.

    ``steps[k]`` holds the step-k Kraus operators of every candidate with
    shape ``(B, m_k, d, d)``; a batch axis of 1 is broadcast.
    """
    dim = steps[0].shape[-1]
    absolutes = [matrix_abs(s) for s in steps]
    return _markovian_sum(absolutes, _identity_prefix(dim), 0) / dim**2


def bayesian_values(steps: Sequence[NDArray]) -> NDArray[np.float64]:
    """Batched Bayesian fidelity, same layout as ``markovian_values``."""
    dim = steps[0].shape[-1]
    operators = [np.asarray(s, dtype=np.complex128) for s in steps]
    return _bayesian_sum(operators, _identity_prefix(dim), 0) / dim**2


def one_step_values(operators: NDArray) -> NDArray[np.float64]:
    """Batched single-step fidelity of ``(B, m, d, d)`` operators."""
    dim = operators.shape[-1]
    return np.sum(trace_norm(operators) ** 2, axis=-1) / dim**2


def _guard(plan: FeedbackPlan, force: bool) -> None:
    if plan.term_count > settings.KF_MAX_TERMS and not force:
        raise ResourceError(
            f"{plan.term_count} outcome sequences exceed the guard of "
            f"{settings.KF_MAX_TERMS}; pass force to evaluate anyway"
        )


def _check_strategy(plan: FeedbackPlan, expected: Strategy) -> None:
    if plan.strategy is not expected:
        raise ParameterError(
            f"plan strategy is {plan.strategy.value}, "
            f"expected {expected.value}"
        )


def corrected_channel(k: KrausSet) -> KrausSet:
    """Corrected channel ``{|T_x|}`` after recovery ``V_x^dag``."""
    return KrausSet(matrix_abs(ensure_cptp(k).operators))


def recovery_operators(k: KrausSet) -> List[ComplexMatrix]:
    """Recovery operators ``V_x^dag`` from the polar decompositions."""
    return [
        dagger(polar_decompose(op).unitary_part)
        for op in ensure_cptp(k).operators
    ]


def fidelity_one_step(k: KrausSet) -> FidelityReport:
    """One-step fidelity ``1/d^2 sum (tr|T_x|)^2``."""
    kraus = ensure_cptp(k)
    raw = float(one_step_values(kraus.operators[None])[0])
    return _report(raw, Strategy.MARKOVIAN, 1, kraus.size, Method.BRUTE)


def transfer_matrix(k: KrausSet) -> ComplexMatrix:
    """``sum_x |T_x| (x) conj(|T_x|)`` on the doubled space."""
    absolutes = matrix_abs(k.operators)
    return np.einsum("xab,xcd->acbd", absolutes, np.conj(absolutes)).reshape(
        k.dim**2, k.dim**2
    )


def _transfer_value(plan: FeedbackPlan) -> float:
    steps = plan.decompositions
    if all(kraus is steps[0] for kraus in steps):
        total = np.linalg.matrix_power(transfer_matrix(steps[0]), plan.steps)
    else:
        total = np.eye(plan.dim**2, dtype=np.complex128)
        for kraus in steps:
            total = transfer_matrix(kraus) @ total
    return float(np.trace(total).real) / plan.dim**2


def fidelity_markovian(
    plan: FeedbackPlan, method: Method = Method.BRUTE, force: bool = False
) -> FidelityReport:
    """Markovian n-step fidelity ``F_n``."""
    _check_strategy(plan, Strategy.MARKOVIAN)
    method = Method(method)
    if method is Method.TRANSFER:
        raw = _transfer_value(plan)
    else:
        _guard(plan, force)
        steps = [k.operators[None] for k in plan.decompositions]
        raw = float(markovian_values(steps)[0])
    logger.debug(
        f"F_{plan.steps} = {raw:.12g} ({method.value}, "
        f"{plan.term_count} sequences)"
    )
    return _report(
        raw, Strategy.MARKOVIAN, plan.steps, plan.term_count, method
    )


def fidelity_bayesian(
    plan: FeedbackPlan, force: bool = False
) -> FidelityReport:
    """Bayesian n-step fidelity ``F'_n`` with nested absolute values."""
    _check_strategy(plan, Strategy.BAYESIAN)
    _guard(plan, force)
    steps = [k.operators[None] for k in plan.decompositions]
    raw = float(bayesian_values(steps)[0])
    logger.debug(
        f"F'_{plan.steps} = {raw:.12g} ({plan.term_count} sequences)"
    )
    return _report(
        raw, Strategy.BAYESIAN, plan.steps, plan.term_count, Method.BRUTE
    )


def _enumerate(plan: FeedbackPlan, bayesian: bool) -> ComplexMatrix:
    if plan.term_count > settings.KF_ORACLE_MAX_TERMS:
        raise ResourceError(
            f"{plan.term_count} terms exceed the oracle limit of "
            f"{settings.KF_ORACLE_MAX_TERMS}"
        )
    prefixes = _identity_prefix(plan.dim)
    for kraus in plan.decompositions:
        step = kraus.operators[None]
        if bayesian:
            prefixes = matrix_abs(_expand(step, prefixes))
        else:
            prefixes = _expand(matrix_abs(step), prefixes)
    return prefixes[0]


def markovian_terms(plan: FeedbackPlan) -> ComplexMatrix:
    """Kraus terms ``|T_n| ... |T_1|`` of the composed corrected map."""
    return _enumerate(plan, bayesian=False)


def bayesian_terms(plan: FeedbackPlan) -> ComplexMatrix:
    """Kraus terms of the adaptively corrected composed map."""
    return _enumerate(plan, bayesian=True)


def fidelity_from_definition(terms: NDArray, dim: int) -> float:
    """Entanglement fidelity straight from the maximally entangled state.

    Builds ``|Psi> = sum_i |ii> / sqrt(d)``, applies ``id (x) map`` with the
    given Kraus terms to ``|Psi><Psi|`` and returns ``<Psi|out|Psi>``.
    """
    ops = np.asarray(terms, dtype=np.complex128)
    if ops.ndim != 3 or ops.shape[1:] != (dim, dim):
        raise DimensionError(
            f"expected terms of shape (N, {dim}, {dim}), got {ops.shape}"
        )
    if dim > settings.KF_ORACLE_MAX_DIM or len(ops) > (
        settings.KF_ORACLE_MAX_TERMS
    ):
        raise ResourceError(
            f"oracle limited to d <= {settings.KF_ORACLE_MAX_DIM} and "
            f"{settings.KF_ORACLE_MAX_TERMS} terms"
        )
    psi = np.eye(dim, dtype=np.complex128).reshape(-1) / np.sqrt(dim)
    identity = np.eye(dim)
    out = np.zeros((dim**2, dim**2), dtype=np.complex128)
    for start in range(0, len(ops), 4096):
        lifted = np.stack(
            [np.kron(identity, op) for op in ops[start:start + 4096]]
        )
        images = lifted @ psi
        out += images.T @ np.conj(images)
    return float(np.real(np.conj(psi) @ out @ psi))


def commutator_witness(decompositions: Sequence[KrausSet]) -> float:
    """Max entry of all pairwise commutators of absolute values."""
    absolutes = np.concatenate(
        [matrix_abs(k.operators) for k in decompositions]
    )
    comm = commutator(absolutes[:, None], absolutes[None])
    return float(np.max(np.abs(comm)))
