"""Shared fixtures."""
from typing import AsyncGenerator, Callable, Generator

import numpy as np
import pytest
import pytest_asyncio
from fastapi import FastAPI
from httpx import AsyncClient

from kraus_feedback.channels import KrausSet
from kraus_feedback.linalg import haar_random_unitaries

ChannelFactory = Callable[[int, int], KrausSet]


def random_kraus(dim: int, size: int, rng: np.random.Generator) -> KrausSet:
    """Random channel from the leading columns of a Haar unitary."""
    unitary = haar_random_unitaries(dim * size, 1, rng)[0]
    isometry = unitary[:, :dim]
    return KrausSet(isometry.reshape(size, dim, dim))


@pytest.fixture()
def rng() -> np.random.Generator:
    """Seeded generator."""
    return np.random.default_rng(20240417)


@pytest.fixture()
def random_channel(rng: np.random.Generator) -> ChannelFactory:
    """Factory of random Kraus sets ``(dim, size) -> KrausSet``."""

    def factory(dim: int, size: int) -> KrausSet:
        return random_kraus(dim, size, rng)

    return factory


@pytest.fixture()
def app() -> Generator[FastAPI, None, None]:
    """Application instance."""
    from kraus_feedback.app import init_app

    yield init_app()


@pytest_asyncio.fixture()
async def client(app: FastAPI) -> AsyncGenerator[AsyncClient, None]:
    """Async test client bound to the app."""
    async with AsyncClient(app=app, base_url="http://test") as client:
        yield client
