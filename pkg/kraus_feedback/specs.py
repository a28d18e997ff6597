"""Channel-spec files: a named family with parameters, or raw Kraus data.

Matrices are row-major nested lists of ``[re, im]`` pairs::

    {"family": "qutrit-ad", "params": {"p": 0.3}}
    {"family": "raw", "dim": 1, "kraus": [[[[1.0, 0.0]]]]}
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, Union

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError
from pydantic import validator

from kraus_feedback.channels import (
    ChannelFamily,
    KrausSet,
    QubitExtreme,
    QubitMixture,
    QutritAmplitudeDamping,
    QutritDephasing,
    Raw,
)
from kraus_feedback.errors import SpecParseError
from kraus_feedback.linalg import ComplexMatrix

MatrixPairs = List[List[List[float]]]


def encode_matrix(m: NDArray) -> MatrixPairs:
    """Nested ``[re, im]`` pairs of a 2-D array."""
    arr = np.asarray(m, dtype=np.complex128)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def decode_matrix(pairs: MatrixPairs) -> ComplexMatrix:
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim < 1 or arr.shape[-1] != 2:
        raise ValueError("entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_kraus(k: KrausSet) -> Dict[str, Any]:
    """Raw channel-spec payload of a Kraus set."""
    return {
        "family": Raw.name,
        "dim": k.dim,
        "kraus": [encode_matrix(op) for op in k.operators],
    }


class _Params(BaseModel):
    """Family parameters, unknown keys rejected."""

    class Config:
        """Config class."""

        extra = "forbid"


class QubitExtremeParams(_Params):
    """Parameters of ``qubit-extreme``."""

    theta: float
    phi: float

    def to_family(self) -> ChannelFamily:
        """Family value object."""
        return QubitExtreme(self.theta, self.phi)


class QubitMixtureParams(_Params):
    """Parameters of ``qubit-mixture``."""

    lam: float
    theta: float
    phi: float
    theta_p: float
    phi_p: float

    def to_family(self) -> ChannelFamily:
        """Family value object."""
        return QubitMixture(
            self.lam, self.theta, self.phi, self.theta_p, self.phi_p
        )


class QutritDephasingParams(_Params):
    """Parameters of ``qutrit-dephasing``."""

    gamma: float
    form: str = "diagonal"
    order: Optional[int] = None

    @validator("form")
    def check_form(cls, v: str) -> str:
        """Diagonal triple or truncated series."""
        if v not in ("diagonal", "series"):
            raise ValueError("must be 'diagonal' or 'series'")
        return v

    @validator("order")
    def check_order(
        cls, v: Optional[int], values: Dict[str, Any]
    ) -> Optional[int]:
        """An order only applies to the series."""
        if v is not None and values.get("form") != "series":
            raise ValueError("order needs form 'series'")
        return v

    def to_family(self) -> ChannelFamily:
        """Family value object."""
        return QutritDephasing(self.gamma, self.form, self.order)


class QutritAmplitudeDampingParams(_Params):
    """Parameters of ``qutrit-ad``."""

    p: float
    decomposition: str = "canonical"

    @validator("decomposition")
    def check_decomposition(cls, v: str) -> str:
        """Only the canonical and optimal triples are known."""
        if v not in ("canonical", "optimal"):
            raise ValueError("must be 'canonical' or 'optimal'")
        return v

    def to_family(self) -> ChannelFamily:
        """Family value object."""
        return QutritAmplitudeDamping(self.p, self.decomposition)


FAMILY_PARAMS: Dict[str, Type[_Params]] = {
    QubitExtreme.name: QubitExtremeParams,
    QubitMixture.name: QubitMixtureParams,
    QutritDephasing.name: QutritDephasingParams,
    QutritAmplitudeDamping.name: QutritAmplitudeDampingParams,
}


class FamilySpec(BaseModel):
    """Named family with its parameters."""

    family: str
    params: Dict[str, Any] = {}

    class Config:
        """Config class."""

        extra = "forbid"

    @validator("family")
    def check_family(cls, v: str) -> str:
        """Family must be known."""
        if v not in FAMILY_PARAMS:
            known = ", ".join(sorted([*FAMILY_PARAMS, Raw.name]))
            raise ValueError(
                f"unknown family {v!r}, expected one of {known}"
            )
        return v

    def to_family(self) -> ChannelFamily:
        """Validate the parameters against the family."""
        return FAMILY_PARAMS[self.family](**self.params).to_family()


class RawSpec(BaseModel):
    """Explicit Kraus operators."""

    family: str = Raw.name
    dim: int
    kraus: List[MatrixPairs]

    class Config:
        """Config class."""

        extra = "forbid"

    @validator("dim")
    def check_dim(cls, v: int) -> int:
        """Dimension is positive."""
        if v < 1:
            raise ValueError("dim must be >= 1")
        return v

    @validator("kraus")
    def check_kraus(cls, v: List[MatrixPairs], values: Dict) -> List:
        """Every operator is a ``dim x dim`` matrix of pairs."""
        dim = values.get("dim")
        if not v:
            raise ValueError("at least one Kraus operator is required")
        for index, pairs in enumerate(v):
            shape = np.shape(pairs)
            if dim is not None and shape != (dim, dim, 2):
                raise ValueError(
                    f"operator {index} has shape {shape}, "
                    f"expected ({dim}, {dim}, 2)"
                )
        return v

    def to_family(self) -> ChannelFamily:
        """Raw family value object."""
        ops = np.stack([decode_matrix(pairs) for pairs in self.kraus])
        return Raw(KrausSet(ops))


ChannelSpec = Union[FamilySpec, RawSpec]


def _location(exc: PydanticValidationError, prefix: str = "") -> str:
    loc = exc.errors()[0]["loc"]
    return ".".join(str(part) for part in (prefix, *loc) if part != "")


def parse_channel_spec(data: Any) -> ChannelSpec:
    """Validate a decoded spec document."""
    if not isinstance(data, dict):
        raise SpecParseError("spec must be a JSON object", "<root>")
    if "family" not in data:
        raise SpecParseError("field required", "family")
    model: Type[BaseModel] = (
        RawSpec if data["family"] == Raw.name else FamilySpec
    )
    try:
        spec = model.parse_obj(data)
    except PydanticValidationError as exc:
        raise SpecParseError(
            exc.errors()[0]["msg"], _location(exc)
        ) from exc
    if isinstance(spec, FamilySpec):
        try:
            FAMILY_PARAMS[spec.family].parse_obj(spec.params)
        except PydanticValidationError as exc:
            raise SpecParseError(
                exc.errors()[0]["msg"], _location(exc, "params")
            ) from exc
    return spec  # type: ignore[return-value]


def load_channel_spec(path: Union[str, Path]) -> ChannelFamily:
    """Read and validate a channel-spec JSON file.

    Syntax errors report ``line:column``; schema errors the field path.
    IO failures propagate as ``OSError``.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise SpecParseError(
            f"not UTF-8 ({exc.reason})", f"{path}: byte {exc.start}"
        ) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecParseError(
            exc.msg, f"{path}: line {exc.lineno}, column {exc.colno}"
        ) from exc
    family = parse_channel_spec(data).to_family()
    family.build()
    logger.debug(f"loaded {family.name} channel from {path}")
    return family
