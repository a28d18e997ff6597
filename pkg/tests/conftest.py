"""Test configuration."""

from tests.fixture import *  # noqa: F403
