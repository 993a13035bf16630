"""Shared fixtures."""

from __future__ import annotations

import pytest

from lemmaforge.config import GlobalConfig
from tests.fakes import FOUR_HAVES, FakeOracle


@pytest.fixture
def oracle() -> FakeOracle:
    return FakeOracle()


@pytest.fixture
def four_haves_source() -> str:
    return FOUR_HAVES


@pytest.fixture
def config(tmp_path) -> GlobalConfig:
    return GlobalConfig(
        pool_size=1,
        datasets_dir=tmp_path / "datasets",
        runs_dir=tmp_path / "runs",
    )
