# tests/conftest.py
import logging
import os
from pathlib import Path
from typing import Callable

import hydra
import hydra_zen
import numpy as np
import pytest

from swampkit import synthgen
from swampkit.config import TrainConfig
from swampkit.ndmath import Node, ParamTensor, Tape


# --- Fixtures for Temporary Directories ---
@pytest.fixture
def temp_cwd(tmp_path):
    """Create a temporary current working directory for tests."""
    original_cwd = Path.cwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(original_cwd)


@pytest.fixture
def temp_artifacts_dir(temp_cwd: Path):
    artifacts_dir = temp_cwd / "test_artifacts"
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    return artifacts_dir


# --- Fixture for Hydra-Zen Store ---
@pytest.fixture
def zen_store():
    """Provides a clean Hydra-Zen store for each test."""
    return hydra_zen.ZenStore()


# --- Numeric fixtures ---
@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    """200 pairs in 4 classes, split 140/20/40."""
    return synthgen.split(synthgen.generate(0, n_classes=4, per_class=50), 0)


@pytest.fixture(scope="session")
def tiny_dataset_file(tmp_path_factory, tiny_dataset):
    return synthgen.save(tiny_dataset, tmp_path_factory.mktemp("data") / "tiny.swmp")


@pytest.fixture
def tiny_config():
    return TrainConfig(
        seed=0,
        num_classes=8,
        queue_capacity=64,
        tau=0.1,
        batch_size=32,
        epochs=2,
        embed_dim=5,
        hidden=16,
        warn_small_queue=False,
    )


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f()`` with respect to every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + h
        plus = f()
        x[idx] = orig - h
        minus = f()
        x[idx] = orig
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def param_grad_error(build: Callable[[Tape], Node], param: ParamTensor, h: float = 1e-5) -> float:
    """Relative error between the tape gradient of ``build(tape)`` (a scalar) and central differences."""
    param.zero_grad()
    tape = Tape()
    tape.backward(build(tape))
    analytic = param.grad.copy()
    numeric = numeric_grad(lambda: build(Tape()).item(), param.value, h)
    return rel_error(analytic, numeric)


# --- Custom Project Directory Functions for Testing ---
def fixture_project_stage_dir_fn(temp_artifacts_dir: Path):
    def fn(stage: str | None, name: str) -> str:
        return str(temp_artifacts_dir / (stage or "") / name)

    return fn


def fixture_project_configs_dir_fn(temp_artifacts_dir: Path):
    def fn(stage: str) -> str:
        return str(temp_artifacts_dir / "configs" / stage)

    return fn


@pytest.fixture(autouse=True)
def hydra_global_state_cleanup():
    """Ensures Hydra's global state is clean after each test."""
    yield
    if hydra.core.global_hydra.GlobalHydra.instance().is_initialized():
        hydra.core.global_hydra.GlobalHydra.instance().clear()


@pytest.fixture
def restore_root_logger():
    """The CLI entry point reconfigures the root logger; put the test runner's handlers back."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
