"""Tests for raw-average tomography and the oscillation period estimate."""

import numpy as np
import pytest

from qubit_trajectories.experiments.models import EnsembleSpec, InsufficientDataError
from qubit_trajectories.experiments.tomography import (
    master_equation_bin_means,
    oscillation_period,
    predicted_stderr,
    raw_average_tomography,
)
from qubit_trajectories.models import PhysicsParams


class TestRawAverage:
    """Tests for rescaled record averages."""

    @pytest.fixture
    def result(self, short_params):
        spec = EnsembleSpec(
            params=short_params, n_traj=400, master_seed=12, chunk_size=128
        )
        return raw_average_tomography(spec)

    def test_shapes(self, result, short_params):
        assert result.means.shape == (short_params.n_bins, 3)
        assert result.times[0] == 0.0
        assert result.n_traj == 400
        assert result.absent == ()

    def test_stderr_matches_white_noise_floor(self, result, short_params):
        ratio = result.stderr / predicted_stderr(short_params, 400)
        assert np.median(ratio, axis=0) == pytest.approx([1.0, 1.0, 1.0], abs=0.1)

    def test_agrees_with_master_equation(self, result):
        assert np.all(result.agreement() >= 0.9)

    def test_frame_columns(self, result):
        frame = result.to_frame()
        assert list(frame.columns[:4]) == ["t_us", "u_tilde", "v_tilde", "w_tilde"]
        assert len(frame) == result.means.shape[0]

    def test_unread_fluorescence_left_empty(self, short_params):
        from dataclasses import replace

        params = replace(short_params, eta_f=0.0)
        spec = EnsembleSpec(params=params, n_traj=8, master_seed=1)
        result = raw_average_tomography(spec)
        assert result.absent == ("u", "v")
        assert np.all(np.isnan(result.means[:, :2]))
        assert np.all(np.isfinite(result.means[:, 2]))
        agreement = result.agreement()
        assert np.isnan(agreement[0]) and np.isnan(agreement[1])


class TestReference:
    """Tests for the sub-step averaged master-equation reference."""

    def test_shape_and_first_bin(self, short_params):
        means = master_equation_bin_means(short_params)
        assert means.shape == (short_params.n_bins, 3)
        assert means[0, 2] < -0.9

    def test_single_substep_is_bin_start(self):
        params = PhysicsParams(dt_record=0.1, dt_int=0.1, duration=1.0)
        first = master_equation_bin_means(params)[0]
        np.testing.assert_allclose(first, [0.0, 0.0, -1.0])


class TestOscillationPeriod:
    """Tests for the zero-crossing period estimate."""

    def test_clean_cosine(self):
        t = np.linspace(0.0, 10.0, 1001)
        assert oscillation_period(t, np.cos(np.pi * t)) == pytest.approx(2.0, abs=1e-3)

    def test_offset_removed(self):
        t = np.linspace(0.0, 12.0, 1201)
        signal = 0.4 + np.sin(2 * np.pi * t / 3.0)
        assert oscillation_period(t, signal) == pytest.approx(3.0, abs=0.01)

    def test_hysteresis_ignores_noise(self, rng):
        t = np.linspace(0.0, 10.0, 2001)
        noisy = np.cos(np.pi * t) + rng.normal(scale=0.05, size=t.size)
        period = oscillation_period(t, noisy, hysteresis=0.2)
        assert period == pytest.approx(2.0, abs=0.05)

    def test_until_truncates(self):
        t = np.linspace(0.0, 10.0, 1001)
        with pytest.raises(InsufficientDataError):
            oscillation_period(t, np.cos(np.pi * t), until=0.9)

    def test_monotone_series(self):
        t = np.linspace(0.0, 1.0, 50)
        with pytest.raises(InsufficientDataError, match="crossings"):
            oscillation_period(t, t)
