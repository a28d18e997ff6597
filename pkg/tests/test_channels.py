"""Tests of Kraus sets, builders and mixings."""
import numpy as np
import pytest

from kraus_feedback.channels import (
    KrausSet,
    MixingUnitary,
    QutritAmplitudeDamping,
    Raw,
    ad_optimal_mixing,
    apply_channel,
    apply_mixing,
    build_ad_optimal_decomposition,
    build_qubit_extreme,
    build_qubit_mixture,
    build_qubit_rank3,
    build_qubit_rank3_optimal,
    build_qutrit_amplitude_damping,
    build_qutrit_dephasing,
    build_qutrit_dephasing_series,
    choi_matrix,
    ensure_cptp,
    equivalent_decompositions,
    euler3_mixing,
    pad,
    pauli_transfer,
    prune,
    rotation_mixing,
    same_channel,
    validate_cptp,
)
from kraus_feedback.errors import CptpError, DimensionError, ParameterError
from kraus_feedback.linalg import derive_rng, haar_random_unitary, is_unitary
from tests.fixture import ChannelFactory


def test_kraus_set_shape_checks() -> None:
    """Empty, non-square and mixed stacks are rejected."""
    with pytest.raises(DimensionError):
        KrausSet(np.zeros((0, 2, 2)))
    with pytest.raises(DimensionError):
        KrausSet(np.zeros((2, 2, 3)))
    with pytest.raises(DimensionError):
        KrausSet.from_operators([np.eye(2), np.eye(3)])
    with pytest.raises(DimensionError):
        KrausSet.from_operators([])


def test_kraus_set_is_frozen() -> None:
    """Operators cannot be modified in place."""
    source = np.eye(2)[None].astype(complex)
    kraus = KrausSet(source)
    source[0, 0, 0] = 5
    assert kraus[0][0, 0] == 1
    with pytest.raises(ValueError):
        kraus.operators[0, 0, 0] = 2
    assert len(kraus) == 1 and kraus.dim == 2


def test_validate_cptp_reports_deviation() -> None:
    """Deviation is the max entry of ``sum T^dag T - I``."""
    report = validate_cptp([np.eye(2) * np.sqrt(1.1)])
    assert report.deviation == pytest.approx(0.1)
    assert not report.valid
    with pytest.raises(CptpError) as info:
        ensure_cptp([np.eye(2) * np.sqrt(1.1)])
    assert info.value.deviation == pytest.approx(0.1)
    assert validate_cptp([np.eye(3)]).valid


@pytest.mark.parametrize(
    "kraus",
    [
        build_qubit_extreme(0.3, 1.2),
        build_qubit_mixture(0.4, 0.3, 1.2, 2.0, 0.1),
        build_qutrit_dephasing(0.0),
        build_qutrit_dephasing(1.7),
        build_qutrit_amplitude_damping(0.3),
        build_ad_optimal_decomposition(0.3),
        build_qubit_rank3_optimal(0.5, np.pi / 2),
    ],
)
def test_builders_are_cptp(kraus: KrausSet) -> None:
    """Every family member is trace preserving."""
    assert validate_cptp(kraus).valid


def test_builder_parameter_ranges() -> None:
    """Out-of-range parameters raise a parameter error."""
    with pytest.raises(ParameterError):
        build_qubit_extreme(-0.1, 0.0)
    with pytest.raises(ParameterError):
        build_qubit_mixture(1.5, 0, 0, 0, 0)
    with pytest.raises(ParameterError):
        build_qutrit_dephasing(-1.0)
    with pytest.raises(ParameterError):
        build_qutrit_amplitude_damping(1.2)
    with pytest.raises(ParameterError):
        QutritAmplitudeDamping(0.2, "unknown").build()


def test_rank3_prunes_zero_operator() -> None:
    """The rank-3 example keeps three operators."""
    kraus = build_qubit_rank3(0.5)
    assert kraus.size == 3
    assert prune(build_qubit_mixture(0.5, 0, np.pi / 2, 0, 0)).size == 3
    with pytest.raises(ParameterError):
        prune(KrausSet(np.zeros((2, 2, 2))))


def test_pad_and_prune_keep_channel() -> None:
    """Zero operators do not change the channel."""
    kraus = build_qutrit_amplitude_damping(0.4)
    padded = pad(kraus, 5)
    assert padded.size == 5
    assert same_channel(kraus, padded)
    assert same_channel(kraus, prune(padded))


def test_mixing_preserves_channel(random_channel: ChannelFactory) -> None:
    """Mixed decompositions describe the same channel."""
    kraus = random_channel(3, 4)
    u = haar_random_unitary(4, derive_rng(3))
    mixed = apply_mixing(kraus, MixingUnitary(u))
    assert same_channel(kraus, mixed)
    assert np.allclose(choi_matrix(kraus), choi_matrix(mixed))
    rho = np.diag([0.5, 0.3, 0.2])
    assert np.allclose(apply_channel(kraus, rho), apply_channel(mixed, rho))
    assert np.trace(apply_channel(kraus, rho)) == pytest.approx(1.0)


def test_mixing_validation(random_channel: ChannelFactory) -> None:
    """Mixings must be unitary and match the operator count."""
    kraus = random_channel(2, 3)
    with pytest.raises(DimensionError):
        apply_mixing(kraus, np.eye(2))
    with pytest.raises(ParameterError):
        apply_mixing(kraus, 2 * np.eye(3))
    with pytest.raises(ParameterError):
        MixingUnitary(np.ones((2, 2)))


def test_different_channels_differ() -> None:
    """Choi comparison separates distinct channels."""
    assert not same_channel(
        build_qutrit_amplitude_damping(0.2),
        build_qutrit_amplitude_damping(0.3),
    )


def test_equivalent_decompositions() -> None:
    """Permutations with phases are equivalent, rotations are not."""
    kraus = build_qutrit_amplitude_damping(0.3)
    phases = np.diag(np.exp(1j * np.array([0.3, -1.0, 2.0])))
    perm = np.eye(3)[[2, 0, 1]]
    assert equivalent_decompositions(kraus, apply_mixing(kraus, perm @ phases))
    assert equivalent_decompositions(kraus, pad(kraus, 4))
    assert not equivalent_decompositions(
        kraus, apply_mixing(kraus, ad_optimal_mixing())
    )


def test_equivalence_of_near_duplicates() -> None:
    """Matching explores every pairing, not the first fit."""
    eye = np.eye(2)
    a = KrausSet(np.stack([eye, (1 + 1.5e-8) * eye]))
    b = KrausSet(np.stack([(1 + 0.6e-8) * eye, (1 - 0.6e-8) * eye]))
    assert equivalent_decompositions(a, b, tol=1e-8)
    assert not equivalent_decompositions(a, b, tol=1e-9)


def test_ad_optimal_mixing_maps_canonical_set() -> None:
    """The fixed mixing produces the optimal damping decomposition."""
    for p in (0.0, 0.3, 0.8, 1.0):
        mixed = apply_mixing(
            build_qutrit_amplitude_damping(p), ad_optimal_mixing()
        )
        assert np.allclose(
            mixed.operators, build_ad_optimal_decomposition(p).operators
        )


@pytest.mark.parametrize("theta, phi", [(0.3, 1.2), (2.0, 0.4), (0.0, 0.0)])
def test_pauli_transfer_of_extreme_points(theta: float, phi: float) -> None:
    """Extreme points have the diagonal affine form."""
    transfer, shift = pauli_transfer(build_qubit_extreme(theta, phi))
    expected = np.diag(
        [
            np.cos(theta - phi),
            np.cos(theta + phi),
            (np.cos(2 * theta) + np.cos(2 * phi)) / 2,
        ]
    )
    assert np.allclose(transfer, expected)
    assert np.allclose(
        shift, [0, 0, (np.cos(2 * theta) - np.cos(2 * phi)) / 2]
    )


def test_parametrized_mixings_are_unitary() -> None:
    """Rotation and Euler-angle mixings are unitary."""
    assert is_unitary(rotation_mixing(0.4))
    assert np.allclose(rotation_mixing(0.0), np.eye(2))
    assert is_unitary(euler3_mixing(0.3, 1.1, 0.7))
    assert np.allclose(euler3_mixing(0.0, 0.0, 0.0), np.eye(3))


def test_dephasing_operators_are_diagonal() -> None:
    """Dephasing operators are diagonal, one of them zero at gamma 0."""
    for gamma in (0.0, 0.5, 3.0):
        ops = build_qutrit_dephasing(gamma).operators
        off = ops - np.einsum("xii->xi", ops)[:, :, None] * np.eye(3)
        assert np.allclose(off, 0)
    assert np.allclose(build_qutrit_dephasing(0.0).operators[2], 0)


def test_raw_family_checks_rank_bound() -> None:
    """Raw sets are checked for normalization and size."""
    ops = np.stack([np.eye(1) / np.sqrt(2)] * 2)
    with pytest.raises(ParameterError):
        Raw(KrausSet(ops)).build()
    with pytest.raises(CptpError):
        Raw(KrausSet(2 * np.eye(2)[None])).build()
    assert Raw(KrausSet(np.eye(2)[None])).build().size == 1


@pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0, 2.0])
def test_dephasing_action(rng: np.random.Generator, gamma: float) -> None:
    """Off-diagonal entries decay as ``exp(-gamma (m - n)^2 / 2)``."""
    kraus = build_qutrit_dephasing(gamma)
    idx = np.arange(3)
    decay = np.exp(-gamma * (idx[:, None] - idx[None]) ** 2 / 2)
    for _ in range(100):
        g = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        rho = g @ g.conj().T
        rho /= np.trace(rho)
        assert np.allclose(apply_channel(kraus, rho), decay * rho, atol=1e-10)


def test_damping_decompositions_share_channel() -> None:
    """Canonical and optimal damping triples are one channel."""
    for p in np.linspace(0.0, 1.0, 21):
        assert same_channel(
            build_qutrit_amplitude_damping(p),
            build_ad_optimal_decomposition(p),
            tol=1e-10,
        )
    assert not equivalent_decompositions(
        build_qutrit_amplitude_damping(0.5),
        build_ad_optimal_decomposition(0.5),
    )


def test_mixing_preserves_choi_matrix(
    random_channel: ChannelFactory,
) -> None:
    """Haar mixings keep the Choi matrix for qubits and qutrits."""
    rng = derive_rng(12)
    for index in range(200):
        dim = 2 + index % 2
        kraus = random_channel(dim, 3)
        mixed = apply_mixing(kraus, haar_random_unitary(3, rng))
        assert np.allclose(
            choi_matrix(kraus), choi_matrix(mixed), atol=1e-10
        )


@pytest.mark.parametrize("gamma", [0.0, 0.3, 1.0])
def test_dephasing_series_matches_triple(gamma: float) -> None:
    """The infinite decomposition and the triple are one channel."""
    series = build_qutrit_dephasing_series(gamma, order=40)
    assert series.size == 40
    assert validate_cptp(series).deviation < 1e-14
    assert np.allclose(
        choi_matrix(series),
        choi_matrix(build_qutrit_dephasing(gamma)),
        atol=1e-8,
    )
    levels = np.arange(3)
    first = -1j * np.sqrt(gamma) * levels * np.exp(-gamma * levels**2 / 2)
    assert np.allclose(series[1], np.diag(first))


def test_dephasing_series_order() -> None:
    """Default truncation is the shortest one within tolerance."""
    for gamma in (0.5, 2.0):
        series = build_qutrit_dephasing_series(gamma)
        assert validate_cptp(series).valid
        shorter = build_qutrit_dephasing_series(gamma, series.size - 1)
        assert not validate_cptp(shorter).valid
    assert build_qutrit_dephasing_series(0.0).size == 1
    with pytest.raises(ParameterError):
        build_qutrit_dephasing_series(0.5, order=0)
    with pytest.raises(ParameterError):
        build_qutrit_dephasing_series(-1.0)
    with pytest.raises(ParameterError):
        build_qutrit_dephasing_series(100.0)
