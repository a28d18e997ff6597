"""Views of the fidelity API."""
from typing import Any, Dict, List

from fastapi import HTTPException
from fastapi_utils.cbv import cbv
from fastapi_utils.inferring_router import InferringRouter
from loguru import logger
from starlette import status
from starlette.concurrency import run_in_threadpool

from kraus_feedback.channels import KrausSet, Raw, validate_cptp
from kraus_feedback.errors import KrausFeedbackError, ResourceError
from kraus_feedback.experiments import CustomStrategy
from kraus_feedback.fidelity import (
    FeedbackPlan,
    FidelityReport,
    Strategy,
    fidelity_bayesian,
    fidelity_markovian,
)
from kraus_feedback.optimizer import optimize_single_step
from kraus_feedback.rest.models.fidelity import (
    ChannelModel,
    FidelityReportModel,
    FidelityRequestModel,
    OptimizeRequestModel,
    ResponseFidelityModel,
    ResponseOptimizeModel,
    ResponseValidationModel,
)
from kraus_feedback.specs import encode_matrix, parse_channel_spec

router = InferringRouter()


def _http_error(exc: KrausFeedbackError) -> HTTPException:
    logger.error(exc)
    code = (
        status.HTTP_413_REQUEST_ENTITY_TOO_LARGE
        if isinstance(exc, ResourceError)
        else status.HTTP_400_BAD_REQUEST
    )
    return HTTPException(status_code=code, detail=str(exc))


def _unchecked(channel: ChannelModel) -> KrausSet:
    """Kraus set of the spec, raw sets not yet checked for CPTP."""
    family = parse_channel_spec(channel.spec()).to_family()
    if isinstance(family, Raw):
        return family.kraus
    return family.build()


def _reports(request: FidelityRequestModel) -> List[FidelityReport]:
    kraus = parse_channel_spec(request.channel.spec()).to_family().build()
    reports = []
    if request.strategy is not CustomStrategy.BAYESIAN:
        plan = FeedbackPlan.stationary(
            Strategy.MARKOVIAN, kraus, request.steps
        )
        reports.append(
            fidelity_markovian(
                plan, method=request.method, force=request.force
            )
        )
    if request.strategy is not CustomStrategy.MARKOVIAN:
        plan = FeedbackPlan.stationary(
            Strategy.BAYESIAN, kraus, request.steps
        )
        reports.append(fidelity_bayesian(plan, force=request.force))
    return reports


def _optimize(request: OptimizeRequestModel) -> Dict[str, Any]:
    kraus = parse_channel_spec(request.channel.spec()).to_family().build()
    result = optimize_single_step(kraus, request.optimizer)
    return {
        "best_value": result.best_value,
        "best_unitary": encode_matrix(result.best_unitary.matrix),
        "best_set": [encode_matrix(op) for op in result.best_set],
        "samples_evaluated": result.samples_evaluated,
        "parameters": result.parameters,
    }


@cbv(router)
class Handler:
    """Channel validation, fidelity and optimization endpoints."""

    @router.post("/channels/validate", response_model=ResponseValidationModel)
    async def validate_channel(self, channel: ChannelModel) -> dict:
        """Report the normalization deviation of a channel."""
        try:
            kraus = _unchecked(channel)
        except KrausFeedbackError as exc:
            raise _http_error(exc)
        report = validate_cptp(kraus)
        return {
            "data": {
                "dim": kraus.dim,
                "operators": kraus.size,
                "deviation": report.deviation,
                "valid": report.valid,
            }
        }

    @router.post("/fidelity", response_model=ResponseFidelityModel)
    async def fidelity(self, request: FidelityRequestModel) -> dict:
        """Evaluate ``F_n`` and/or ``F'_n`` for the stationary plan."""
        try:
            reports = await run_in_threadpool(_reports, request)
        except KrausFeedbackError as exc:
            raise _http_error(exc)
        return {
            "data": [FidelityReportModel.from_orm(r) for r in reports]
        }

    @router.post("/optimize/single-step", response_model=ResponseOptimizeModel)
    async def optimize(self, request: OptimizeRequestModel) -> dict:
        """Search the mixing maximizing one-step fidelity."""
        try:
            data = await run_in_threadpool(_optimize, request)
        except KrausFeedbackError as exc:
            raise _http_error(exc)
        return {"data": data}
