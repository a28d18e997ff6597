"""Tests of the HTTP endpoints."""
from pathlib import Path

import pytest
from fastapi import FastAPI
from httpx import AsyncClient

import kraus_feedback
from tests.json_queries import (
    AD_OPTIMAL,
    FIDELITY_BOTH,
    FIDELITY_TOO_LONG,
    FIDELITY_TRANSFER,
    OPTIMIZE_EXTREME,
    OPTIMIZE_HAAR,
    RAW_IDENTITY,
    RAW_SCALED,
    UNKNOWN_FAMILY,
)


@pytest.mark.asyncio()
async def test_validate_channel(client: AsyncClient, app: FastAPI) -> None:
    """Valid and non-normalized channels are both reported."""
    response = await client.post(
        app.url_path_for("validate_channel"), json=AD_OPTIMAL
    )
    assert response.status_code == 200
    data = response.json()["data"]
    assert (data["dim"], data["operators"], data["valid"]) == (3, 3, True)

    response = await client.post(
        app.url_path_for("validate_channel"), json=RAW_SCALED
    )
    assert response.status_code == 200
    assert response.json()["data"]["valid"] is False
    assert response.json()["data"]["deviation"] == pytest.approx(3.0)


@pytest.mark.asyncio()
async def test_validate_unknown_family(
    client: AsyncClient, app: FastAPI
) -> None:
    """Unknown families are a bad request."""
    response = await client.post(
        app.url_path_for("validate_channel"), json=UNKNOWN_FAMILY
    )
    assert response.status_code == 400
    assert "unknown family" in response.json()["detail"]


@pytest.mark.asyncio()
async def test_fidelity(client: AsyncClient, app: FastAPI) -> None:
    """Both strategies are reported, Bayesian ahead on damping."""
    response = await client.post(
        app.url_path_for("fidelity"), json=FIDELITY_BOTH
    )
    assert response.status_code == 200
    markovian, bayesian = response.json()["data"]
    assert markovian["strategy"] == "markovian"
    assert bayesian["strategy"] == "bayesian"
    assert markovian["term_count"] == 9
    assert bayesian["value"] > markovian["value"]
    assert "x-request-id" in response.headers


@pytest.mark.asyncio()
async def test_fidelity_transfer(client: AsyncClient, app: FastAPI) -> None:
    """Transfer-matrix evaluation on request."""
    response = await client.post(
        app.url_path_for("fidelity"), json=FIDELITY_TRANSFER
    )
    assert response.status_code == 200
    (report,) = response.json()["data"]
    assert report["method"] == "transfer"
    assert report["steps"] == 4
    assert 0 < report["value"] <= 1


@pytest.mark.asyncio()
async def test_fidelity_errors(client: AsyncClient, app: FastAPI) -> None:
    """Bad channels, bad steps and oversized requests."""
    url = app.url_path_for("fidelity")
    response = await client.post(url, json={"channel": RAW_SCALED})
    assert response.status_code == 400
    assert "trace preserving" in response.json()["detail"]

    response = await client.post(url, json={"channel": AD_OPTIMAL, "steps": 0})
    assert response.status_code == 422

    response = await client.post(url, json=FIDELITY_TOO_LONG)
    assert response.status_code == 413


@pytest.mark.asyncio()
async def test_optimize_rotation(client: AsyncClient, app: FastAPI) -> None:
    """Extreme-point pairs keep their canonical measurement."""
    response = await client.post(
        app.url_path_for("optimize"), json=OPTIMIZE_EXTREME
    )
    assert response.status_code == 200
    data = response.json()["data"]
    assert data["parameters"] == {"alpha": 0.0}
    assert data["samples_evaluated"] == 402
    assert len(data["best_set"]) == 2


@pytest.mark.asyncio()
async def test_optimize_haar(client: AsyncClient, app: FastAPI) -> None:
    """Haar search returns a unitary of the operator count."""
    response = await client.post(
        app.url_path_for("optimize"), json=OPTIMIZE_HAAR
    )
    assert response.status_code == 200
    data = response.json()["data"]
    assert len(data["best_unitary"]) == 3
    assert 0 < data["best_value"] <= 1

    response = await client.post(
        app.url_path_for("optimize"),
        json={"channel": RAW_IDENTITY, "optimizer": {"sample_budget": 0}},
    )
    assert response.status_code == 422


def test_package_leaves_test_clients_to_tests() -> None:
    """httpx and nest_asyncio are dev dependencies only."""
    root = Path(kraus_feedback.__file__).parent
    for path in root.rglob("*.py"):
        text = path.read_text(encoding="utf-8")
        assert "httpx" not in text, path
        assert "nest_asyncio" not in text, path
