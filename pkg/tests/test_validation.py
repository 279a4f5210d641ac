"""Tests for projective readout, binned validation and the efficiency sweep."""

from dataclasses import replace

import numpy as np
import pytest

from qubit_trajectories.experiments.models import EnsembleSpec
from qubit_trajectories.experiments.validation import (
    ONE_SIGMA_TWO_PARAMS,
    ValidationSamples,
    bin_validation,
    efficiency_sweep,
    outcome_deviance,
    projective_outcomes,
    projective_readout,
    time_to_bin,
    validate_all_axes,
    validate_tomography,
)
from qubit_trajectories.models import QubitState


def _synthetic_samples(rng, count: int) -> ValidationSamples:
    coordinates = rng.uniform(-1.0, 1.0, size=(count, 3))
    outcomes = projective_outcomes(coordinates, rng.random((count, 3)))
    return ValidationSamples(time_us=1.0, coordinates=coordinates, outcomes=outcomes)


class TestReadout:
    """Tests for ideal projective measurements."""

    def test_excited_state_always_up_along_z(self, rng):
        state = QubitState.excited()
        outcomes = [projective_readout(state, "z", rng) for _ in range(50)]
        assert all(outcome == 1 for outcome in outcomes)

    def test_ground_state_always_down_along_z(self, rng):
        outcomes = [projective_readout((0.0, 0.0, -1.0), "z", rng) for _ in range(50)]
        assert all(outcome == -1 for outcome in outcomes)

    def test_mean_outcome_is_coordinate(self, rng):
        coordinates = np.full(20_000, 0.4)
        outcomes = projective_outcomes(coordinates, rng.random(20_000))
        assert outcomes.mean() == pytest.approx(0.4, abs=0.03)

    def test_unknown_axis(self, rng):
        with pytest.raises(ValueError, match="axis"):
            projective_readout(QubitState.ground(), "q", rng)


class TestTimeToBin:
    """Tests for mapping validation times to record bins."""

    def test_rounds_to_nearest_bin(self):
        assert time_to_bin(2.0, 0.1, 1.04) == 10

    def test_outside_run(self):
        with pytest.raises(ValueError, match="outside"):
            time_to_bin(2.0, 0.1, 2.5)


class TestBinValidation:
    """Tests for binning outcomes and the linear fit."""

    def test_calibrated_samples_fit_unit_slope(self, rng):
        samples = _synthetic_samples(rng, 20_000)
        bins = bin_validation(samples, "x", bin_width=0.1, min_count=50)
        assert bins.fit is not None
        assert bins.fit.slope == pytest.approx(1.0, abs=0.05)
        assert bins.fit.intercept == pytest.approx(0.0, abs=0.05)
        assert bins.counts.sum() == 20_000

    def test_miscalibrated_samples_show_in_slope(self, rng):
        samples = _synthetic_samples(rng, 20_000)
        shrunk = replace(samples, coordinates=samples.coordinates * 0.5)
        bins = bin_validation(shrunk, "y", bin_width=0.1, min_count=50)
        assert bins.fit.slope > 1.5

    def test_too_few_bins_gives_no_fit(self, rng):
        samples = _synthetic_samples(rng, 30)
        bins = bin_validation(samples, "z", bin_width=0.1, min_count=50)
        assert bins.fit is None
        assert bins.chi_square() == 0.0

    def test_empty_bins_are_nan(self, rng):
        samples = ValidationSamples(
            time_us=1.0,
            coordinates=np.full((10, 3), 0.55),
            outcomes=np.ones((10, 3), dtype=np.int8),
        )
        bins = bin_validation(samples, "x", bin_width=0.5)
        assert list(bins.counts) == [0, 0, 0, 10]
        assert np.isnan(bins.means[0])

    def test_edge_coordinates_fall_in_end_bins(self):
        samples = ValidationSamples(
            time_us=1.0,
            coordinates=np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
            outcomes=np.ones((2, 3), dtype=np.int8),
        )
        bins = bin_validation(samples, "x", bin_width=1.0)
        assert list(bins.counts) == [1, 1]

    @pytest.mark.parametrize("width", [0.0, 2.5])
    def test_bad_width(self, rng, width):
        with pytest.raises(ValueError, match="bin_width"):
            bin_validation(_synthetic_samples(rng, 10), "x", bin_width=width)

    def test_frame(self, rng):
        samples = _synthetic_samples(rng, 100)
        frame = bin_validation(samples, "x", bin_width=0.5).to_frame()
        assert list(frame.columns) == [
            "axis",
            "t_us",
            "center",
            "count",
            "mean_outcome",
            "se",
            "mean_coordinate",
        ]
        assert len(frame) == 4


class TestEnsembleValidation:
    """Small end-to-end validation runs."""

    def test_all_axes_share_one_run(self, small_spec):
        results = validate_all_axes(small_spec, 1.0, bin_width=0.5, min_count=1)
        assert set(results) == {"x", "y", "z"}
        for bins in results.values():
            assert bins.counts.sum() == small_spec.n_traj
            assert bins.time_us == pytest.approx(1.0)

    def test_single_axis_matches_all_axes(self, small_spec):
        single = validate_tomography(small_spec, "z", 1.0, bin_width=0.5, min_count=1)
        together = validate_all_axes(small_spec, 1.0, bin_width=0.5, min_count=1)["z"]
        np.testing.assert_array_equal(single.counts, together.counts)
        np.testing.assert_array_equal(single.means, together.means)

    def test_time_zero_rejected(self, small_spec):
        with pytest.raises(ValueError, match="at least one record bin"):
            validate_all_axes(small_spec, 0.0)


class TestEfficiencySweep:
    """Tests for the (eta_f, eta_d) deviance surface."""

    def test_grid_outside_unit_interval(self, small_spec):
        with pytest.raises(ValueError, match="eta_d"):
            efficiency_sweep(small_spec, [0.1], [0.2, 1.2], 1.0)

    def test_empty_grid(self, small_spec):
        with pytest.raises(ValueError, match="eta_f"):
            efficiency_sweep(small_spec, [], [0.3], 1.0)

    def test_small_surface(self, short_params):
        spec = EnsembleSpec(params=short_params, n_traj=24, master_seed=5, chunk_size=8)
        result = efficiency_sweep(spec, [0.1, 0.14], [0.3, 0.34], 1.0)
        assert result.scores.shape == (2, 2)
        assert np.all(np.isfinite(result.scores))
        assert result.threshold == pytest.approx(ONE_SIGMA_TWO_PARAMS)
        assert result.best[0] in (0.1, 0.14)
        assert len(result.to_frame()) == 4

    def test_one_sigma_threshold(self):
        assert ONE_SIGMA_TWO_PARAMS == pytest.approx(2.30, abs=0.01)

    @pytest.mark.slow
    def test_recovers_generating_efficiencies(self, zeno_params):
        spec = EnsembleSpec(
            params=replace(zeno_params, duration=3.0),
            n_traj=4000,
            master_seed=17,
            chunk_size=500,
        )
        eta_f_grid = [0.0, 0.04, 0.14, 0.24]
        eta_d_grid = [0.0, 0.14, 0.34, 0.54]
        result = efficiency_sweep(spec, eta_f_grid, eta_d_grid, 3.0)
        assert result.best[1] == pytest.approx(0.34)
        assert result.contains(0.14, 0.34)
        assert not result.contains(0.0, 0.0)
        assert not result.contains(0.14, 0.0)
        assert not result.contains(0.14, 0.54)


class TestOutcomeDeviance:
    """Tests for the log-likelihood score of filter coordinates."""

    def test_calibrated_coordinates_score_best(self, rng):
        samples = _synthetic_samples(rng, 20_000)
        calibrated = outcome_deviance(samples)
        for factor in (0.5, 0.8):
            shrunk = replace(samples, coordinates=samples.coordinates * factor)
            assert outcome_deviance(shrunk) > calibrated
        stretched_coordinates = np.clip(samples.coordinates * 1.3, -1.0, 1.0)
        stretched = replace(samples, coordinates=stretched_coordinates)
        assert outcome_deviance(stretched) > calibrated

    def test_uninformative_coordinates(self):
        samples = ValidationSamples(
            time_us=1.0,
            coordinates=np.zeros((4, 3)),
            outcomes=np.ones((4, 3), dtype=np.int8),
        )
        assert outcome_deviance(samples) == pytest.approx(24.0 * np.log(2.0))

    def test_certain_and_right_scores_zero(self):
        outcomes = np.array([[1, -1, 1]], dtype=np.int8)
        samples = ValidationSamples(
            time_us=1.0, coordinates=outcomes.astype(float), outcomes=outcomes
        )
        assert outcome_deviance(samples) == pytest.approx(0.0)

    def test_certain_and_wrong_is_finite(self):
        samples = ValidationSamples(
            time_us=1.0,
            coordinates=np.ones((1, 3)),
            outcomes=-np.ones((1, 3), dtype=np.int8),
        )
        assert outcome_deviance(samples) == pytest.approx(-6.0 * np.log(1e-12))


def _zeno_validation(zeno_params, filter_params=None, lump=False):
    params = replace(zeno_params, duration=3.0)
    spec = EnsembleSpec(
        params=params,
        n_traj=20_000,
        master_seed=29,
        chunk_size=2000,
        filter_params=filter_params,
        lump=lump,
    )
    return validate_all_axes(spec, 1.5, bin_width=0.1, min_count=50)


@pytest.mark.slow
class TestValidationLinearity:
    """Filtered coordinates predict projective outcomes at any sub-step count."""

    @pytest.mark.parametrize(
        ("dt_int", "lump"), [(0.1, True), (0.02, False), (0.005, False)]
    )
    def test_unit_slope(self, zeno_params, dt_int, lump):
        assumed = replace(zeno_params, duration=3.0, dt_int=dt_int)
        results = _zeno_validation(zeno_params, filter_params=assumed, lump=lump)
        assert results["z"].fit.slope == pytest.approx(1.0, abs=0.05)
        for axis in ("x", "y"):
            fit = results[axis].fit
            assert abs(fit.slope - 1.0) < 0.05 + 3.0 * fit.slope_se

    def test_overstated_eta_d_bends_slope(self, zeno_params):
        calibrated = _zeno_validation(zeno_params)["z"].fit
        overstated = replace(zeno_params, duration=3.0, eta_d=zeno_params.eta_d + 0.1)
        control = _zeno_validation(zeno_params, filter_params=overstated)["z"].fit
        spread = 2.0 * np.hypot(calibrated.slope_se, control.slope_se)
        assert control.slope < calibrated.slope - spread
