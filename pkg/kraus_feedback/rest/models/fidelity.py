"""Pydantic models of the fidelity API."""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, validator

from kraus_feedback.experiments import CustomStrategy
from kraus_feedback.fidelity import Method, Strategy
from kraus_feedback.optimizer import OptimizerConfig
from kraus_feedback.specs import MatrixPairs


class ChannelModel(BaseModel):
    """Channel spec: named family or raw Kraus operators."""

    family: str
    params: Optional[Dict[str, Any]] = None
    dim: Optional[int] = None
    kraus: Optional[List[MatrixPairs]] = None

    class Config:
        """Config class."""

        arbitrary_types_allowed = True

    def spec(self) -> Dict[str, Any]:
        """Spec document without unset fields."""
        return self.dict(exclude_none=True)


class FidelityRequestModel(BaseModel):
    """Fidelity evaluation request."""

    channel: ChannelModel
    steps: int = 1
    strategy: CustomStrategy = CustomStrategy.BOTH
    method: Method = Method.BRUTE
    force: bool = False

    @validator("steps")
    def check_steps(cls, steps: int) -> int:
        """At least one feedback step."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        return steps


class OptimizeRequestModel(BaseModel):
    """Single-step optimization request."""

    channel: ChannelModel
    optimizer: OptimizerConfig = Field(
        default_factory=lambda: OptimizerConfig(sample_budget=10_000)
    )


class ValidationModel(BaseModel):
    """CPTP check of a channel."""

    dim: int
    operators: int
    deviation: float
    valid: bool


class ResponseValidationModel(BaseModel):
    """CPTP check for the response."""

    data: ValidationModel


class FidelityReportModel(BaseModel):
    """Fidelity report for the response."""

    value: float
    strategy: Strategy
    steps: int
    term_count: int
    method: Method
    raw_value: float

    class Config:
        """Config class."""

        orm_mode = True


class ResponseFidelityModel(BaseModel):
    """Fidelity reports for the response."""

    data: List[FidelityReportModel]


class OptimizeResultModel(BaseModel):
    """Best mixing found."""

    best_value: float
    best_unitary: MatrixPairs
    best_set: List[MatrixPairs]
    samples_evaluated: int
    parameters: Dict[str, float]


class ResponseOptimizeModel(BaseModel):
    """Best mixing for the response."""

    data: OptimizeResultModel
