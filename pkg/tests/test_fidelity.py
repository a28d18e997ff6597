"""Tests of the Markovian and Bayesian fidelity evaluators."""
import numpy as np
import pytest

from kraus_feedback.channels import (
    KrausSet,
    apply_mixing,
    build_ad_optimal_decomposition,
    build_qubit_extreme,
    build_qubit_rank3,
    build_qubit_rank3_optimal,
    build_qutrit_amplitude_damping,
    build_qutrit_dephasing,
    build_qutrit_dephasing_series,
    rotation_mixing,
)
from kraus_feedback.config import settings
from kraus_feedback.errors import (
    CptpError,
    DimensionError,
    ParameterError,
    ResourceError,
)
from kraus_feedback.experiments import rank3_fidelity, rotation_fidelity
from kraus_feedback.fidelity import (
    FeedbackPlan,
    Method,
    Strategy,
    bayesian_terms,
    bayesian_values,
    commutator_witness,
    corrected_channel,
    fidelity_bayesian,
    fidelity_from_definition,
    fidelity_markovian,
    fidelity_one_step,
    markovian_terms,
    markovian_values,
    recovery_operators,
    transfer_matrix,
)
from kraus_feedback.linalg import derive_rng, haar_random_unitary, matrix_abs
from tests.fixture import ChannelFactory, random_kraus


def _markovian(kraus: KrausSet, n: int, **kwargs) -> float:
    plan = FeedbackPlan.stationary(Strategy.MARKOVIAN, kraus, n)
    return fidelity_markovian(plan, **kwargs).value


def _bayesian(kraus: KrausSet, n: int, **kwargs) -> float:
    plan = FeedbackPlan.stationary(Strategy.BAYESIAN, kraus, n)
    return fidelity_bayesian(plan, **kwargs).value


def test_identity_channel_is_perfect() -> None:
    """A unitary channel is fully corrected at every step."""
    u = haar_random_unitary(3, derive_rng(5))
    kraus = KrausSet(u[None])
    for n in (1, 2, 4):
        assert _markovian(kraus, n) == pytest.approx(1.0)
        assert _bayesian(kraus, n) == pytest.approx(1.0)


@pytest.mark.parametrize(
    "theta, phi, alpha",
    [(0.3, 1.2, 0.0), (0.3, 1.2, 0.7), (2.5, 0.4, 1.9), (np.pi, 0.0, 0.2)],
)
def test_rotation_closed_form(theta: float, phi: float, alpha: float) -> None:
    """Rotated extreme-point pairs match the closed-form expression."""
    extreme = build_qubit_extreme(theta, phi)
    kraus = apply_mixing(extreme, rotation_mixing(alpha))
    value = fidelity_one_step(kraus).value
    assert value == pytest.approx(
        rotation_fidelity(theta, phi, alpha), abs=1e-10
    )


@pytest.mark.parametrize("lam", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_rank3_canonical_and_optimal(lam: float) -> None:
    """Rank-3 channel: canonical and optimal one-step values."""
    canonical = fidelity_one_step(build_qubit_rank3(lam)).value
    assert canonical == pytest.approx(0.5 + (1 - lam) / 2, abs=1e-12)
    for theta23 in (0.0, np.pi / 2):
        optimal = build_qubit_rank3_optimal(lam, theta23)
        for n in range(1, 7):
            expected = rank3_fidelity(lam, n)
            assert _markovian(optimal, n) == pytest.approx(expected, abs=1e-9)
            assert _bayesian(optimal, n) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("dim, size, steps", [(2, 2, 3), (2, 4, 2), (3, 3, 2)])
def test_evaluators_match_definition(dim: int, size: int, steps: int) -> None:
    """Both strategies agree with the explicit entangled-state evaluation."""
    rng = derive_rng(99, dim, size, steps)
    for _ in range(50):
        kraus = random_kraus(dim, size, rng)
        markovian = FeedbackPlan.stationary(Strategy.MARKOVIAN, kraus, steps)
        bayesian = FeedbackPlan.stationary(Strategy.BAYESIAN, kraus, steps)
        oracle = fidelity_from_definition(markovian_terms(markovian), dim)
        assert fidelity_markovian(markovian).raw_value == pytest.approx(
            oracle, abs=1e-10
        )
        oracle = fidelity_from_definition(bayesian_terms(bayesian), dim)
        assert fidelity_bayesian(bayesian).raw_value == pytest.approx(
            oracle, abs=1e-10
        )


@pytest.mark.parametrize("dim, size", [(2, 2), (2, 3), (3, 3)])
def test_transfer_matches_brute(
    random_channel: ChannelFactory, dim: int, size: int
) -> None:
    """Transfer-matrix powers reproduce the sequence sum."""
    kraus = random_channel(dim, size)
    for n in range(1, 7):
        brute = _markovian(kraus, n)
        transfer = _markovian(kraus, n, method=Method.TRANSFER)
        assert transfer == pytest.approx(brute, abs=1e-10)


def test_transfer_matches_brute_per_step(
    random_channel: ChannelFactory,
) -> None:
    """Per-step decompositions multiply in step order."""
    kraus = random_channel(2, 3)
    rng = derive_rng(4)
    sets = tuple(
        apply_mixing(kraus, haar_random_unitary(3, rng)) for _ in range(4)
    )
    plan = FeedbackPlan(Strategy.MARKOVIAN, sets)
    brute = fidelity_markovian(plan).value
    transfer = fidelity_markovian(plan, method=Method.TRANSFER).value
    assert transfer == pytest.approx(brute, abs=1e-10)


def test_one_step_is_transfer_trace(random_channel: ChannelFactory) -> None:
    """``F_1 = tr E / d^2``."""
    kraus = random_channel(3, 2)
    value = np.trace(transfer_matrix(kraus)).real / 9
    assert fidelity_one_step(kraus).value == pytest.approx(value)
    assert _markovian(kraus, 1) == pytest.approx(value)
    assert _bayesian(kraus, 1) == pytest.approx(value)


def test_bayesian_dominance() -> None:
    """Bayesian feedback never loses on per-step mixed plans."""
    rng = derive_rng(2024)
    for index in range(200):
        dim = 2 + index % 2
        size = 1 + (index // 2) % 4
        steps = 1 + (index // 8) % 4
        kraus = random_kraus(dim, size, rng)
        sets = tuple(
            apply_mixing(kraus, haar_random_unitary(size, rng))
            for _ in range(steps)
        )
        markovian = fidelity_markovian(
            FeedbackPlan(Strategy.MARKOVIAN, sets)
        ).value
        bayesian = fidelity_bayesian(FeedbackPlan(Strategy.BAYESIAN, sets))
        assert bayesian.value >= markovian - 1e-10


@pytest.mark.parametrize("gamma", [0.0, 0.3, 1.0, 2.5])
def test_dephasing_has_no_bayesian_gain(gamma: float) -> None:
    """Commuting absolute values make both strategies coincide."""
    kraus = build_qutrit_dephasing(gamma)
    assert commutator_witness([kraus]) < 1e-12
    for n in (2, 3, 4):
        assert _bayesian(kraus, n) == pytest.approx(
            _markovian(kraus, n), abs=1e-12
        )
    series = build_qutrit_dephasing_series(gamma)
    assert commutator_witness([series]) < 1e-12
    assert _bayesian(series, 2) == pytest.approx(
        _markovian(series, 2), abs=1e-12
    )


def test_amplitude_damping_decompositions() -> None:
    """The optimal decomposition wins one step and gains from adaptivity."""
    canonical = build_qutrit_amplitude_damping(0.5)
    optimal = build_ad_optimal_decomposition(0.5)
    assert fidelity_one_step(optimal).value > fidelity_one_step(
        canonical
    ).value
    assert _bayesian(canonical, 2) == pytest.approx(
        _markovian(canonical, 2), abs=1e-12
    )
    assert commutator_witness([optimal]) > 1e-3
    assert _bayesian(optimal, 2) > _markovian(optimal, 2) + 1e-6


def test_batched_values_match_single(random_channel: ChannelFactory) -> None:
    """Candidates evaluated together equal separate evaluations."""
    rng = derive_rng(8)
    kraus = random_channel(2, 3)
    candidates = np.stack(
        [
            apply_mixing(kraus, haar_random_unitary(3, rng)).operators
            for _ in range(5)
        ]
    )
    together = markovian_values([candidates, candidates])
    adaptive = bayesian_values([candidates, candidates])
    for index, ops in enumerate(candidates):
        single = KrausSet(ops)
        assert together[index] == pytest.approx(_markovian(single, 2))
        assert adaptive[index] == pytest.approx(_bayesian(single, 2))


def test_guard_and_force(monkeypatch: pytest.MonkeyPatch) -> None:
    """Sequence counts above the guard need force."""
    monkeypatch.setattr(settings, "KF_MAX_TERMS", 10)
    kraus = build_qutrit_amplitude_damping(0.3)
    with pytest.raises(ResourceError):
        _markovian(kraus, 3)
    with pytest.raises(ResourceError):
        _bayesian(kraus, 3)
    assert 0 <= _markovian(kraus, 3, force=True) <= 1
    assert 0 <= _markovian(kraus, 3, method=Method.TRANSFER) <= 1


def test_plan_validation(random_channel: ChannelFactory) -> None:
    """Plans need matching dimensions and one channel throughout."""
    qubit = random_channel(2, 2)
    with pytest.raises(ParameterError):
        FeedbackPlan.stationary(Strategy.MARKOVIAN, qubit, 0)
    with pytest.raises(DimensionError):
        FeedbackPlan(Strategy.MARKOVIAN, (qubit, random_channel(3, 2)))
    with pytest.raises(ParameterError):
        FeedbackPlan(Strategy.MARKOVIAN, (qubit, random_channel(2, 2)))
    with pytest.raises(CptpError):
        FeedbackPlan.stationary(
            Strategy.MARKOVIAN, KrausSet(2 * np.eye(2)[None]), 1
        )
    with pytest.raises(ParameterError):
        fidelity_bayesian(FeedbackPlan.stationary("markovian", qubit, 2))


def test_recovery_operators(random_channel: ChannelFactory) -> None:
    """Recoveries map every operator to its absolute value."""
    kraus = random_channel(3, 2)
    corrected = corrected_channel(kraus)
    for recovery, op, fixed in zip(
        recovery_operators(kraus), kraus, corrected
    ):
        assert np.allclose(recovery @ op, fixed, atol=1e-10)
    assert np.allclose(corrected.operators, matrix_abs(kraus.operators))
    ops = corrected.operators
    total = np.einsum("xji,xjk->ik", np.conj(ops), ops)
    assert np.allclose(total, np.eye(3))


def test_oracle_limits() -> None:
    """The explicit evaluation refuses large inputs."""
    with pytest.raises(ResourceError):
        fidelity_from_definition(np.zeros((1, 4, 4)), 4)
    with pytest.raises(DimensionError):
        fidelity_from_definition(np.zeros((1, 2, 3)), 2)


def test_equivalent_sets_share_fidelities() -> None:
    """Reordered, rephased operators measure the same process."""
    kraus = build_ad_optimal_decomposition(0.4)
    phases = np.diag(np.exp(1j * np.array([np.pi / 3, 0.0, -1.2])))
    other = apply_mixing(kraus, np.eye(3)[[1, 2, 0]] @ phases)
    for n in (1, 2, 3):
        assert _markovian(other, n) == pytest.approx(
            _markovian(kraus, n), abs=1e-10
        )
        assert _bayesian(other, n) == pytest.approx(
            _bayesian(kraus, n), abs=1e-10
        )
