"""Pytest configuration and shared fixtures for the simulator tests."""

import shutil
import uuid
from pathlib import Path

import pytest

from app.models import SlotGrid
from app.services.clustering import ClusterModel
from app.services.generator import Corpus, generate
from tests.helpers.factories import SMALL_GRID, small_generator_config, trained_model


@pytest.fixture
def scratch_dir():
    """Create a throwaway directory for files written by a test."""
    temp_root = Path.cwd() / ".pytest_tmp"
    temp_root.mkdir(exist_ok=True)
    tmpdir = temp_root / f"test-{uuid.uuid4().hex}"
    tmpdir.mkdir()
    try:
        yield tmpdir
    finally:
        shutil.rmtree(tmpdir, ignore_errors=True)


@pytest.fixture
def small_grid() -> SlotGrid:
    """Twelve pricing slots of two scheduling slots each."""
    return SMALL_GRID


@pytest.fixture
def single_cluster_model() -> ClusterModel:
    """One cluster fitted on sixty noisy copies of a diurnal profile."""
    model, _ = trained_model(60, k=1)
    return model


@pytest.fixture(scope="session")
def small_corpus() -> Corpus:
    """Thirty-day corpus on the small grid; six of the fifteen test days are attacked."""
    return generate(small_generator_config(), SMALL_GRID)
