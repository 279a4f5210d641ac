"""Pytest configuration and shared fixtures for Qubit Trajectories tests.

This module provides centralized fixtures used across all test modules:
- Physics parameter sets sized for fast tests
- Ensemble specs over those parameters
- Flat configuration text and parsed run configs writing into tmp_path
- A small preset file with a 2x2 grid
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pytest

from qubit_trajectories.config import RunConfig, parse_config
from qubit_trajectories.experiments.models import EnsembleSpec
from qubit_trajectories.models import PhysicsParams, QubitState


# =============================================================================
# GLOBAL STATE RESET
# =============================================================================


@pytest.fixture(autouse=True)
def _reset_logging():
    """Undo handler changes made by setup_logging between tests."""
    app = logging.getLogger("qubit_traj")
    root = logging.getLogger()
    app_handlers, root_handlers = list(app.handlers), list(root.handlers)
    app_propagate = app.propagate
    yield
    for logger, original in ((app, app_handlers), (root, root_handlers)):
        for handler in list(logger.handlers):
            if handler not in original:
                logger.removeHandler(handler)
                handler.close()
    app.propagate = app_propagate
    logging.captureWarnings(False)


# =============================================================================
# PHYSICS FIXTURES
# =============================================================================


@pytest.fixture
def short_params() -> PhysicsParams:
    """Default rates over 2 us with five integrator steps per record bin."""
    return PhysicsParams(dt_record=0.1, dt_int=0.02, duration=2.0)


@pytest.fixture
def zeno_params() -> PhysicsParams:
    """Strong dispersive dephasing with a resolved drive, 2 us long."""
    return PhysicsParams.from_rabi(
        1.0 / 5.2,
        gamma_d=1.0 / 0.9,
        dt_record=0.1,
        dt_int=0.02,
        duration=2.0,
    )


@pytest.fixture
def free_decay_params() -> PhysicsParams:
    """Undriven qubit starting on +x, 30 us at 10 ns steps."""
    return PhysicsParams(
        omega=0.0,
        dt_record=0.1,
        dt_int=0.01,
        duration=30.0,
        initial_state=QubitState.from_bloch(1.0, 0.0, 0.0),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# =============================================================================
# ENSEMBLE FIXTURES
# =============================================================================


@pytest.fixture
def small_spec(short_params) -> EnsembleSpec:
    return EnsembleSpec(params=short_params, n_traj=40, master_seed=7, chunk_size=16)


@pytest.fixture
def zeno_spec(zeno_params) -> EnsembleSpec:
    return EnsembleSpec(params=zeno_params, n_traj=200, master_seed=11, chunk_size=64)


# =============================================================================
# CONFIG FIXTURES
# =============================================================================


SMALL_CONFIG = """\
# small run for tests
n_traj = 6
master_seed = 3
duration_us = 1.0
dt_record_us = 0.1
dt_int_us = 0.05
chunk_size = 4
taus_us = 0.5
validation_time_us = 0.5
bin_width = 0.5
min_bin_count = 1
histogram_bins = 11
sweep_span = 0.01
sweep_step = 0.01
"""


@pytest.fixture
def small_config_text() -> str:
    return SMALL_CONFIG


@pytest.fixture
def make_config(tmp_path):
    """Build a RunConfig for ``mode`` writing into ``tmp_path / out``."""

    def build(mode: str, out: str = "out", **overrides: str) -> RunConfig:
        values = {"mode": mode, "out_dir": str(tmp_path / out), **overrides}
        return parse_config(
            SMALL_CONFIG, environ={}, overrides=values, source="test.conf"
        )

    return build


SMALL_PRESETS = """\
version: 3
presets:
  quick:
    rabi_per_us: 0.5
    gamma_d_per_us: 0.2
  alias_of_quick:
    alias: quick
grid:
  rabi_per_us: [0.0, 0.5]
  gamma_d_per_us:
    start: 0.1
    stop: 1.0
    count: 2
  dt_int_us: 0.05
  duration_us: 1.0
device:
  qubit_frequency_ghz: 5.0
"""


@pytest.fixture
def small_presets_path(tmp_path) -> Path:
    path = tmp_path / "presets.yaml"
    path.write_text(SMALL_PRESETS, encoding="utf-8")
    return path
