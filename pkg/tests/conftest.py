"""Test configuration and fixtures for gneagg tests."""

import tempfile
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from gneagg.game import CournotParams, GameInstance, build_cournot, constants
from gneagg.network import GraphSchedule, SmallWorld, generate_schedule
from gneagg.steps import PowerLaw, StepPlan, make_step_plan
from gneagg.store import ResultStore


@pytest.fixture
def toy_params() -> CournotParams:
    """One firm, one market: a=2, b=5, u=100, d=90, r=120."""
    return CournotParams(
        n_agents=1,
        n_markets=1,
        a_range=(2.0, 2.0),
        b_range=(5.0, 5.0),
        u_range=(100.0, 100.0),
        d_range=(90.0, 90.0),
        r_range=(120.0, 120.0),
    )


@pytest.fixture
def toy_game(toy_params: CournotParams) -> GameInstance:
    """Fixture that provides the hand-solvable single-agent game."""
    return build_cournot(toy_params, seed=0)


@pytest.fixture
def toy_solution() -> tuple[np.ndarray, np.ndarray]:
    """x* and the shared lambda* of the toy game, solved by hand."""
    return np.array([90.0, 90.0]), np.array([0.0, 455.0])


@pytest.fixture
def small_params() -> CournotParams:
    """Four firms over two markets with the benchmark parameter ranges."""
    return CournotParams(n_agents=4, n_markets=2)


@pytest.fixture
def small_game(small_params: CournotParams) -> GameInstance:
    """Fixture that provides a small randomized Cournot game."""
    return build_cournot(small_params, seed=1)


@pytest.fixture
def small_plan(small_game: GameInstance) -> StepPlan:
    """Default step plan of the small game with gamma^k = (k+1)^-0.51."""
    return make_step_plan(constants(small_game), 0.05, PowerLaw(0.51))


@pytest.fixture
def small_schedule(small_game: GameInstance) -> GraphSchedule:
    """Ring-like small-world schedule over the small game's agents."""
    return generate_schedule(SmallWorld(neighbors=2, rewire=0.3), small_game.n_agents, horizon=40, seed=3)


@pytest.fixture
def temp_store_file() -> Generator[Path, None, None]:
    """Fixture that provides a temporary result-store file path."""
    with tempfile.NamedTemporaryFile(suffix=".db", delete=False) as tmp_file:
        tmp_path = Path(tmp_file.name)
    try:
        yield tmp_path
    finally:
        # Clean up - remove the database file and any WAL/SHM files
        for ext in ["", "-wal", "-shm"]:
            file_path = tmp_path.with_suffix(f"{tmp_path.suffix}{ext}")
            if file_path.exists():
                file_path.unlink()


@pytest.fixture
def memory_store() -> Generator[ResultStore, None, None]:
    """Fixture that provides an in-memory result store."""
    store = ResultStore(":memory:")
    try:
        yield store
    finally:
        store.close()


@pytest.fixture
def sample_documents() -> list[dict]:
    """Fixture that provides cached documents for two instances."""
    return [
        {"kind": "reference", "instance_hash": "aaa", "kkt": 1e-11, "iterations": 120},
        {"kind": "summary", "instance_hash": "aaa", "status": "converged", "iterations": 300},
        {"kind": "reference", "instance_hash": "bbb", "kkt": 5e-11, "iterations": 90},
        {"kind": "summary", "instance_hash": "bbb", "status": "max_iter", "iterations": 1000},
        {"kind": "reference", "instance_hash": "aaa", "kkt": 2e-12, "iterations": 400},
    ]


@pytest.fixture
def populated_store(memory_store: ResultStore, sample_documents: list[dict]) -> ResultStore:
    """Fixture that provides a store pre-populated with sample documents."""
    for document in sample_documents:
        memory_store.put(document)
    return memory_store
