"""Search over Kraus-decomposition mixings maximizing feedback fidelity."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, Field, validator

from kraus_feedback.channels import (
    KrausSet,
    MixingUnitary,
    apply_mixing,
    ensure_cptp,
    euler3_stack,
    rotation_stack,
)
from kraus_feedback.config import settings
from kraus_feedback.errors import ParameterError, ResourceError
from kraus_feedback.fidelity import (
    FeedbackPlan,
    Strategy,
    bayesian_values,
    fidelity_bayesian,
    fidelity_markovian,
    fidelity_one_step,
    markovian_values,
    one_step_values,
)
from kraus_feedback.linalg import (
    ComplexMatrix,
    derive_rng,
    givens_rotation,
    haar_random_unitaries,
    polar_decompose,
)

# Values closer than this count as ties, the lower candidate index wins.
_TIE = 1e-12
_MAX_TIES = 256
_REFINE_START = np.pi / 8
_REFINE_STOP = 1e-7
_REFINE_GAIN = 1e-15
_REFINE_MAX_ITER = 5000

Objective = Callable[[NDArray], NDArray]


class Parametrization(str, Enum):
    """Family the mixing unitary is drawn from."""

    HAAR = "haar"
    ROTATION2 = "rotation2"
    EULER3 = "euler3"


class SequenceMode(str, Enum):
    """How Markovian per-step mixings are chosen."""

    STATIONARY = "stationary"
    GREEDY = "greedy"


class OptimizerConfig(BaseModel):
    """Search settings."""

    sample_budget: int = Field(
        default_factory=lambda: settings.KF_SAMPLE_BUDGET
    )
    seed: int = Field(default_factory=lambda: settings.KF_SEED)
    stream: int = 0
    parametrization: Parametrization = Parametrization.HAAR
    refine: bool = False
    tolerance: float = 1e-9
    rotation_grid: int = 10_000
    euler_grid: int = 100
    chunk_size: int = Field(default_factory=lambda: settings.KF_CHUNK_SIZE)
    workers: int = Field(default_factory=lambda: settings.KF_WORKERS)
    record_trace: bool = False
    force: bool = False

    class Config:
        """Config class."""

        allow_mutation = False

    @validator("sample_budget", "chunk_size", "workers")
    def check_positive(cls, v: int, field: Any) -> int:
        """Counts must be positive."""
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("rotation_grid", "euler_grid")
    def check_grid(cls, v: int) -> int:
        """Grids need at least two points."""
        if v < 2:
            raise ValueError("grid needs at least two points")
        return v

    @validator("seed", "stream")
    def check_seed(cls, v: int) -> int:
        """Seeds are unsigned."""
        if v < 0:
            raise ValueError("seed and stream must be >= 0")
        return v


@dataclass
class OptimizerResult:
    """Best mixing found and its provenance."""

    best_unitary: MixingUnitary
    best_value: float
    best_set: KrausSet
    samples_evaluated: int
    value_trace: Optional[List[float]] = None
    parameters: Dict[str, float] = field(default_factory=dict)
    step: int = 1
    strategy: Strategy = Strategy.MARKOVIAN
    mode: Optional[SequenceMode] = None
    baseline_value: Optional[float] = None

    @property
    def improvement(self) -> Optional[float]:
        """Gain over the baseline measurement, when one was evaluated."""
        if self.baseline_value is None:
            return None
        return self.best_value - self.baseline_value


@dataclass
class _Candidate:
    value: float
    index: int
    unitary: ComplexMatrix
    parameters: Dict[str, float]


@dataclass
class _Search:
    best: _Candidate
    evaluated: int
    ties: List[_Candidate]
    trace: List[float]


def _mixed(unitaries: NDArray, ops: NDArray) -> NDArray:
    return np.einsum("bij,jxy->bixy", unitaries, ops)


def _chunk_best(
    values: NDArray,
    offset: int,
    unitaries: NDArray,
    params: Optional[NDArray],
    names: Sequence[str],
    tolerance: float,
) -> List[_Candidate]:
    """Near-best candidates of one chunk, by ascending index."""
    top = int(np.argmax(values))
    margin = max(tolerance, _TIE)
    near = np.flatnonzero(values >= values[top] - margin)[:_MAX_TIES]
    picked = sorted({top, *near.tolist()})
    return [
        _Candidate(
            float(values[i]),
            offset + int(i),
            unitaries[i],
            dict(zip(names, map(float, params[i])))
            if params is not None
            else {},
        )
        for i in picked
    ]


def _reduce(
    chunks: Sequence[List[_Candidate]], tolerance: float, record: bool
) -> Tuple[_Candidate, List[_Candidate], List[float]]:
    best: Optional[_Candidate] = None
    pool: List[_Candidate] = []
    trace: List[float] = []
    for candidates in chunks:
        for cand in candidates:
            if best is None or cand.value > best.value + _TIE:
                best = cand
        pool.extend(candidates)
        assert best is not None
        pool = [c for c in pool if c.value >= best.value - tolerance]
        pool = sorted(pool, key=lambda c: c.index)[:_MAX_TIES]
        if record:
            trace.append(best.value)
    assert best is not None
    return best, pool, trace


def _haar_chunks(cfg: OptimizerConfig) -> Iterator[Tuple[int, int]]:
    starts = range(0, cfg.sample_budget, cfg.chunk_size)
    for chunk, start in enumerate(starts):
        yield chunk, min(cfg.chunk_size, cfg.sample_budget - start)


def _grid(kraus: KrausSet, cfg: OptimizerConfig) -> Tuple[NDArray, NDArray]:
    """Parameter grid and its unitaries for the structured families."""
    if cfg.parametrization is Parametrization.ROTATION2:
        alphas = np.linspace(0.0, np.pi, cfg.rotation_grid + 1)
        return alphas[:, None], rotation_stack(alphas)
    angles = np.linspace(0.0, np.pi, cfg.euler_grid, endpoint=False)
    real = bool(np.all(np.abs(kraus.operators.imag) < 1e-15))
    deltas = (
        np.zeros(1)
        if real
        else np.linspace(0.0, 2 * np.pi, cfg.euler_grid, endpoint=False)
    )
    t13, t23, dlt = np.meshgrid(angles, angles, deltas, indexing="ij")
    params = np.stack([t13.ravel(), t23.ravel(), dlt.ravel()], axis=-1)
    return params, euler3_stack(params[:, 0], params[:, 1], params[:, 2])


_PARAM_NAMES = {
    Parametrization.HAAR: (),
    Parametrization.ROTATION2: ("alpha",),
    Parametrization.EULER3: ("theta13", "theta23", "delta"),
}


def _check_parametrization(kraus: KrausSet, cfg: OptimizerConfig) -> None:
    need = {Parametrization.ROTATION2: 2, Parametrization.EULER3: 3}
    size = need.get(cfg.parametrization)
    if size is not None and kraus.size != size:
        raise ParameterError(
            f"{cfg.parametrization.value} mixes {size} operators, "
            f"the Kraus set has {kraus.size}"
        )


def _search(
    kraus: KrausSet,
    objective: Objective,
    cfg: OptimizerConfig,
    tie_break: Optional[Callable[[List[_Candidate]], _Candidate]] = None,
) -> _Search:
    """Evaluate the identity mixing, then the configured candidates.

    ``tie_break`` picks among candidates tied with the best before any
    refinement, so the polished candidate is the one it chose.
    """
    _check_parametrization(kraus, cfg)
    ops = kraus.operators
    m = kraus.size
    names = _PARAM_NAMES[cfg.parametrization]
    identity = np.eye(m, dtype=np.complex128)[None]
    ident_params = np.zeros((1, len(names))) if names else None
    first = _chunk_best(
        objective(_mixed(identity, ops)),
        -1,
        identity,
        ident_params,
        names,
        cfg.tolerance,
    )

    if cfg.parametrization is Parametrization.HAAR:

        def run(job: Tuple[int, int]) -> List[_Candidate]:
            chunk, count = job
            rng = derive_rng(cfg.seed, cfg.stream, chunk)
            unitaries = haar_random_unitaries(m, count, rng)
            values = objective(_mixed(unitaries, ops))
            return _chunk_best(
                values,
                chunk * cfg.chunk_size,
                unitaries,
                None,
                names,
                cfg.tolerance,
            )

        jobs = list(_haar_chunks(cfg))
        evaluated = cfg.sample_budget
    else:
        params, grid = _grid(kraus, cfg)

        def run(job: Tuple[int, int]) -> List[_Candidate]:
            start, stop = job
            values = objective(_mixed(grid[start:stop], ops))
            return _chunk_best(
                values,
                start,
                grid[start:stop],
                params[start:stop],
                names,
                cfg.tolerance,
            )

        jobs = [
            (start, min(start + cfg.chunk_size, len(grid)))
            for start in range(0, len(grid), cfg.chunk_size)
        ]
        evaluated = len(grid)

    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(run, jobs))
    else:
        chunks = [run(job) for job in jobs]
    best, ties, trace = _reduce(
        [first] + chunks, cfg.tolerance, cfg.record_trace
    )
    logger.debug(
        f"{cfg.parametrization.value} search: best {best.value:.12g} "
        f"over {evaluated + 1} candidates"
    )
    if tie_break is not None and len(ties) > 1:
        best = tie_break(ties)
    search = _Search(best, evaluated + 1, ties, trace)
    if cfg.refine:
        _polish(search, kraus, objective, cfg)
    return search


def _polish(
    search: _Search,
    kraus: KrausSet,
    objective: Objective,
    cfg: OptimizerConfig,
) -> None:
    """Coordinate descent from the best candidate with a shrinking step.

    Haar candidates move by Givens rotations, structured families move
    along their own angles.
    """
    ops = kraus.operators
    m = kraus.size
    best = search.best
    if cfg.parametrization is Parametrization.HAAR:
        planes = [
            (i, j, imag)
            for i in range(m)
            for j in range(i + 1, m)
            for imag in (False, True)
        ]

        def neighbours(
            state: NDArray, step: float
        ) -> Tuple[List[NDArray], NDArray]:
            rots = np.stack(
                [
                    givens_rotation(m, i, j, sign * step, imag)
                    for i, j, imag in planes
                    for sign in (1, -1)
                ]
            )
            cands = rots @ state
            return list(cands), cands

        state: NDArray = best.unitary
    else:
        names = _PARAM_NAMES[cfg.parametrization]
        free = [
            k
            for k, name in enumerate(names)
            if name != "delta"
            or not np.all(np.abs(ops.imag) < 1e-15)
        ]

        def neighbours(
            state: NDArray, step: float
        ) -> Tuple[List[NDArray], NDArray]:
            moves = []
            for k in free:
                for sign in (1, -1):
                    moved = state.copy()
                    moved[k] += sign * step
                    moves.append(moved)
            arr = np.array(moves)
            if cfg.parametrization is Parametrization.ROTATION2:
                return moves, rotation_stack(arr[:, 0])
            return moves, euler3_stack(arr[:, 0], arr[:, 1], arr[:, 2])

        state = np.array([best.parameters[name] for name in names])

    value, step, evaluated = best.value, _REFINE_START, 0
    for _ in range(_REFINE_MAX_ITER):
        if step < _REFINE_STOP:
            break
        states, unitaries = neighbours(state, step)
        values = objective(_mixed(unitaries, ops))
        evaluated += len(values)
        pick = int(np.argmax(values))
        if values[pick] > value + _REFINE_GAIN:
            state, value = states[pick], float(values[pick])
        else:
            step /= 2

    if cfg.parametrization is Parametrization.HAAR:
        unitary = polar_decompose(state).unitary_part
        params: Dict[str, float] = {}
    else:
        names = _PARAM_NAMES[cfg.parametrization]
        params = dict(zip(names, map(float, state)))
        arr = np.asarray(state)[None]
        unitary = (
            rotation_stack(arr[:, 0])
            if cfg.parametrization is Parametrization.ROTATION2
            else euler3_stack(arr[:, 0], arr[:, 1], arr[:, 2])
        )[0]
    logger.debug(
        f"refinement: {best.value:.12g} -> {value:.12g} "
        f"after {evaluated} evaluations"
    )
    search.best = _Candidate(value, best.index, unitary, params)
    search.evaluated += evaluated
    if cfg.record_trace:
        search.trace.append(value)


def _guard(kraus: KrausSet, steps: int, cfg: OptimizerConfig) -> None:
    terms = kraus.size**steps
    if terms > settings.KF_MAX_TERMS and not cfg.force:
        raise ResourceError(
            f"{terms} outcome sequences exceed the guard of "
            f"{settings.KF_MAX_TERMS}"
        )


def _result(
    kraus: KrausSet,
    search: _Search,
    value: Callable[[KrausSet], float],
    cfg: OptimizerConfig,
    **extra: object,
) -> OptimizerResult:
    unitary = MixingUnitary(search.best.unitary)
    best_set = apply_mixing(kraus, unitary)
    return OptimizerResult(
        best_unitary=unitary,
        best_value=value(best_set),
        best_set=best_set,
        samples_evaluated=search.evaluated,
        value_trace=search.trace if cfg.record_trace else None,
        parameters=search.best.parameters,
        **extra,  # type: ignore[arg-type]
    )


def optimize_single_step(
    k: KrausSet, cfg: Optional[OptimizerConfig] = None
) -> OptimizerResult:
    """Mixing maximizing the one-step fidelity."""
    cfg = cfg or OptimizerConfig()
    kraus = ensure_cptp(k)
    search = _search(kraus, one_step_values, cfg)
    return _result(
        kraus, search, lambda s: fidelity_one_step(s).value, cfg
    )


def _markovian_value(sets: Sequence[KrausSet]) -> float:
    plan = FeedbackPlan(Strategy.MARKOVIAN, tuple(sets))
    return fidelity_markovian(plan, force=True).value


def _bayesian_value(sets: Sequence[KrausSet]) -> float:
    plan = FeedbackPlan(Strategy.BAYESIAN, tuple(sets))
    return fidelity_bayesian(plan, force=True).value


def _stationary_markovian(
    kraus: KrausSet, steps: int, cfg: OptimizerConfig
) -> List[OptimizerResult]:
    search = _search(
        kraus, lambda mixed: markovian_values([mixed] * steps), cfg
    )
    final = _result(
        kraus,
        search,
        lambda s: _markovian_value([s] * steps),
        cfg,
        step=steps,
        mode=SequenceMode.STATIONARY,
    )
    results = [
        OptimizerResult(
            best_unitary=final.best_unitary,
            best_value=_markovian_value([final.best_set] * step),
            best_set=final.best_set,
            samples_evaluated=0,
            parameters=final.parameters,
            step=step,
            mode=SequenceMode.STATIONARY,
        )
        for step in range(1, steps)
    ]
    return results + [final]


def _lookahead(
    kraus: KrausSet, fixed: List[NDArray], ties: List[_Candidate]
) -> _Candidate:
    """Among tied candidates, the one with the best next-step value."""
    unitaries = np.stack([c.unitary for c in ties])
    mixed = _mixed(unitaries, kraus.operators)
    ahead = markovian_values([op[None] for op in fixed] + [mixed, mixed])
    pick = int(np.flatnonzero(ahead >= ahead.max() - _TIE)[0])
    logger.debug(
        f"{len(ties)} tied candidates, lookahead picks index "
        f"{ties[pick].index} with {float(ahead[pick]):.12g}"
    )
    return ties[pick]


def _greedy_markovian(
    kraus: KrausSet, steps: int, cfg: OptimizerConfig
) -> List[OptimizerResult]:
    fixed: List[NDArray] = []
    sets: List[KrausSet] = []
    results = []
    for step in range(1, steps + 1):
        prefix = [op[None] for op in fixed]
        tie_break = (
            partial(_lookahead, kraus, list(fixed)) if step < steps else None
        )
        search = _search(
            kraus,
            lambda mixed, prefix=prefix: markovian_values(prefix + [mixed]),
            cfg,
            tie_break=tie_break,
        )
        result = _result(
            kraus,
            search,
            lambda s: _markovian_value(sets + [s]),
            cfg,
            step=step,
            mode=SequenceMode.GREEDY,
        )
        sets.append(result.best_set)
        fixed.append(result.best_set.operators)
        results.append(result)
    return results


def optimize_markovian_sequence(
    channel: KrausSet,
    steps: int,
    cfg: Optional[OptimizerConfig] = None,
    mode: SequenceMode = SequenceMode.STATIONARY,
) -> List[OptimizerResult]:
    """Per-step Markovian mixings, one shared or chosen step by step."""
    cfg = cfg or OptimizerConfig()
    kraus = ensure_cptp(channel)
    if steps < 1:
        raise ParameterError("number of steps must be >= 1")
    _guard(kraus, steps, cfg)
    if SequenceMode(mode) is SequenceMode.GREEDY:
        return _greedy_markovian(kraus, steps, cfg)
    return _stationary_markovian(kraus, steps, cfg)


def optimize_bayesian_first_step(
    channel: KrausSet, steps: int, cfg: Optional[OptimizerConfig] = None
) -> OptimizerResult:
    """One mixing used at every Bayesian step, maximizing ``F'_n``.

    Optimal for qubits; for larger dimensions a heuristic checked by
    ``optimize_bayesian_per_step``.
    """
    cfg = cfg or OptimizerConfig()
    kraus = ensure_cptp(channel)
    if steps < 1:
        raise ParameterError("number of steps must be >= 1")
    _guard(kraus, steps, cfg)
    search = _search(
        kraus, lambda mixed: bayesian_values([mixed] * steps), cfg
    )
    return _result(
        kraus,
        search,
        lambda s: _bayesian_value([s] * steps),
        cfg,
        step=steps,
        strategy=Strategy.BAYESIAN,
        mode=SequenceMode.STATIONARY,
    )


def optimize_bayesian_per_step(
    channel: KrausSet,
    steps: int,
    cfg: Optional[OptimizerConfig] = None,
    initial: Optional[KrausSet] = None,
) -> List[OptimizerResult]:
    """Greedy Haar search of the mixing at steps ``2..n`` of Bayesian plan.

    Step 1 is ``initial`` when given, otherwise the single-step optimum.
    Later steps mix the step-1 decomposition; the baseline reuses it
    unchanged.
    """
    cfg = cfg or OptimizerConfig()
    kraus = ensure_cptp(channel)
    if steps < 2:
        raise ParameterError("per-step search needs at least two steps")
    _guard(kraus, steps, cfg)
    if initial is None:
        first = optimize_single_step(kraus, cfg)
    else:
        base = ensure_cptp(initial)
        first = OptimizerResult(
            best_unitary=MixingUnitary.identity(base.size),
            best_value=fidelity_one_step(base).value,
            best_set=base,
            samples_evaluated=0,
        )
    first.strategy = Strategy.BAYESIAN
    base = first.best_set
    haar = cfg.copy(update={"parametrization": Parametrization.HAAR})
    sets = [base]
    results = [first]
    for step in range(2, steps + 1):
        prefix = [s.operators[None] for s in sets]
        search = _search(
            base,
            lambda mixed, prefix=prefix: bayesian_values(prefix + [mixed]),
            haar.copy(update={"stream": cfg.stream + step}),
        )
        baseline = _bayesian_value(sets + [base])
        result = _result(
            base,
            search,
            lambda s: _bayesian_value(sets + [s]),
            cfg,
            step=step,
            strategy=Strategy.BAYESIAN,
            mode=SequenceMode.GREEDY,
            baseline_value=baseline,
        )
        logger.info(
            f"Bayesian step {step}: best {result.best_value:.12g}, "
            f"same-measurement {baseline:.12g}"
        )
        sets.append(result.best_set)
        results.append(result)
    return results


def per_step_improves(
    results: Sequence[OptimizerResult], tolerance: float
) -> bool:
    """Whether any later step beat reusing the first measurement."""
    return any(
        r.improvement is not None and r.improvement > tolerance
        for r in results
    )
