"""
Tomographic validation of reconstructed trajectories.

Filters see only the read records; projective outcomes are sampled from the
omniscient state. For a well-specified filter the mean outcome over
trajectories whose filter coordinate lies in a narrow bin equals that
coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from qubit_trajectories.engine import reconstruct_batch
from qubit_trajectories.experiments.ensemble import (
    generate_chunk,
    plan_chunks,
    run_chunks,
    run_ensemble,
)
from qubit_trajectories.experiments.models import (
    AXES,
    EnsembleSpec,
    SweepResult,
    ValidationBins,
    ValidationFit,
    axis_index,
)
from qubit_trajectories.logger import get_logger
from qubit_trajectories.models import QubitState, RecordBatch
from qubit_trajectories.rng import readout_uniforms

logger = get_logger("validation")

# Deviance increment of the 1-sigma region for two jointly fitted parameters.
ONE_SIGMA_TWO_PARAMS = float(stats.chi2.ppf(0.6827, 2))

# Floor on outcome probabilities inside the deviance.
_PROBABILITY_FLOOR = 1e-12


def projective_readout(
    state: QubitState | tuple[float, float, float],
    axis: str,
    rng: np.random.Generator,
) -> int:
    """Sample an ideal strong measurement of sigma along ``axis``.

    Returns +1 with probability (1 + c) / 2 for coordinate c, else -1.
    """
    bloch = state.bloch if isinstance(state, QubitState) else state
    coordinate = float(bloch[axis_index(axis)])
    return 1 if rng.random() < (1.0 + coordinate) / 2.0 else -1


def projective_outcomes(coordinates: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Vectorized readout: +1 where ``uniform < (1 + coordinate) / 2``, else -1."""
    return np.where(uniforms < (1.0 + coordinates) / 2.0, 1, -1).astype(np.int8)


def time_to_bin(params_duration: float, dt_record: float, time_us: float) -> int:
    """Index of the record-bin boundary nearest ``time_us``."""
    if time_us < 0 or time_us > params_duration + 1e-9:
        raise ValueError(f"time {time_us} us lies outside [0, {params_duration}] us")
    return int(round(time_us / dt_record))


@dataclass(frozen=True)
class ValidationSamples:
    """Filter coordinates and projective outcomes at time T, shape ``(N, 3)`` each."""

    time_us: float
    coordinates: np.ndarray
    outcomes: np.ndarray


def collect_validation_samples(spec: EnsembleSpec, time_us: float) -> ValidationSamples:
    """Generate, filter and read out the ensemble at ``time_us``.

    The run is truncated at T; outcomes for all three axes come from one
    readout stream per trajectory.
    """
    params = spec.params
    bin_index = time_to_bin(params.duration, params.dt_record, time_us)
    duration = bin_index * params.dt_record
    if bin_index == 0:
        raise ValueError("validation time must be at least one record bin")

    def work(chunk: range) -> tuple[np.ndarray, np.ndarray]:
        batch = generate_chunk(
            spec, chunk, filter_subset=spec.subset, duration=duration
        )
        assert batch.filtered is not None
        coordinates = batch.filtered.trajectories.at_bin(bin_index)
        truth = batch.omniscient.at_bin(bin_index)
        outcomes = projective_outcomes(truth, readout_uniforms(spec.master_seed, chunk))
        return coordinates, outcomes

    parts = run_ensemble(spec, work, "Tomographic validation")
    return ValidationSamples(
        time_us=duration,
        coordinates=np.concatenate([p[0] for p in parts]),
        outcomes=np.concatenate([p[1] for p in parts]),
    )


def bin_validation(
    samples: ValidationSamples,
    axis: str,
    bin_width: float = 0.01,
    min_count: int = 50,
) -> ValidationBins:
    """Bin outcomes by filter coordinate and fit mean outcome against bin center."""
    if not 0 < bin_width <= 2:
        raise ValueError(f"bin_width must be in (0, 2], got {bin_width}")
    n_bins = int(round(2.0 / bin_width))
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    column = axis_index(axis)
    coordinates = samples.coordinates[:, column]
    outcomes = samples.outcomes[:, column].astype(float)
    which = np.searchsorted(edges, coordinates, side="right") - 1
    which = np.clip(which, 0, n_bins - 1)

    counts = np.bincount(which, minlength=n_bins)
    sums = np.bincount(which, weights=outcomes, minlength=n_bins)
    squares = np.bincount(which, weights=outcomes**2, minlength=n_bins)
    coordinate_sums = np.bincount(which, weights=coordinates, minlength=n_bins)

    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(counts > 0, sums / counts, np.nan)
        spread = (squares - counts * means**2) / (counts - 1)
        variance = np.where(counts > 1, spread, np.nan)
        stderr = np.sqrt(np.maximum(variance, 0.0) / counts)
        coordinate_means = np.where(counts > 0, coordinate_sums / counts, np.nan)

    bins = ValidationBins(
        axis=axis,
        time_us=samples.time_us,
        bin_width=bin_width,
        centers=0.5 * (edges[:-1] + edges[1:]),
        counts=counts,
        means=means,
        stderr=stderr,
        coordinate_means=coordinate_means,
        min_count=min_count,
    )
    return replace(bins, fit=fit_validation(bins))


def fit_validation(bins: ValidationBins) -> ValidationFit | None:
    """Weighted least-squares line through the eligible bins; None with fewer than 3."""
    mask = bins.eligible
    used = int(mask.sum())
    if used < 3:
        logger.warning(
            "Only %d validation bins on axis %s hold %d or more samples; no fit",
            used,
            bins.axis,
            bins.min_count,
        )
        return None
    coefficients, covariance = np.polyfit(
        bins.centers[mask],
        bins.means[mask],
        1,
        w=1.0 / bins.stderr[mask],
        cov="unscaled",
    )
    return ValidationFit(
        slope=float(coefficients[0]),
        intercept=float(coefficients[1]),
        slope_se=float(np.sqrt(covariance[0, 0])),
        intercept_se=float(np.sqrt(covariance[1, 1])),
        bins_used=used,
    )


def validate_tomography(
    spec: EnsembleSpec,
    axis: str,
    time_us: float,
    bin_width: float = 0.01,
    min_count: int = 50,
) -> ValidationBins:
    """Validate the filter along one axis at time ``time_us``."""
    samples = collect_validation_samples(spec, time_us)
    return bin_validation(samples, axis, bin_width, min_count)


def validate_all_axes(
    spec: EnsembleSpec,
    time_us: float,
    bin_width: float = 0.01,
    min_count: int = 50,
) -> dict[str, ValidationBins]:
    """Validate x, y and z from one ensemble run."""
    samples = collect_validation_samples(spec, time_us)
    return {axis: bin_validation(samples, axis, bin_width, min_count) for axis in AXES}


def outcome_deviance(samples: ValidationSamples) -> float:
    """-2 log-likelihood of the projective outcomes under the filter coordinates.

    An outcome s on an axis has probability (1 + s c) / 2 given the filter
    coordinate c. The sum runs over trajectories and the three axes, and is
    smallest on average for the filter that assumes the true parameters.
    """
    probability = (1.0 + samples.outcomes * samples.coordinates) / 2.0
    return float(-2.0 * np.sum(np.log(np.maximum(probability, _PROBABILITY_FLOOR))))


def efficiency_sweep(
    spec: EnsembleSpec,
    eta_f_values: np.ndarray,
    eta_d_values: np.ndarray,
    time_us: float,
) -> SweepResult:
    """Score filters assuming each (eta_f, eta_d) against the same records and outcomes.

    Records are generated once at the ensemble's true parameters. Each grid point
    reruns the reconstruction and is scored by the deviance of the projective
    outcomes at ``time_us``.

    Raises:
        ValueError: A grid value lies outside [0, 1].
    """
    eta_f_values = np.atleast_1d(np.asarray(eta_f_values, dtype=float))
    eta_d_values = np.atleast_1d(np.asarray(eta_d_values, dtype=float))
    for name, grid in (("eta_f", eta_f_values), ("eta_d", eta_d_values)):
        if grid.size == 0 or np.any(grid < 0) or np.any(grid > 1):
            raise ValueError(f"{name} sweep grid must be a nonempty subset of [0, 1]")

    params = spec.params
    bin_index = time_to_bin(params.duration, params.dt_record, time_us)
    if bin_index == 0:
        raise ValueError("validation time must be at least one record bin")
    duration = bin_index * params.dt_record
    chunks = plan_chunks(spec.n_traj, spec.chunk_size)

    def generate(chunk: range) -> tuple[RecordBatch, np.ndarray]:
        batch = generate_chunk(spec, chunk, filter_subset=None, duration=duration)
        truth = batch.omniscient.at_bin(bin_index)
        uniforms = readout_uniforms(spec.master_seed, chunk)
        return batch.records, projective_outcomes(truth, uniforms)

    generated = run_chunks(chunks, generate, spec.workers, "Sweep records")
    outcomes = np.concatenate([part[1] for part in generated])
    base_filter = spec.assumed_params.with_duration(duration)

    scores = np.empty((eta_f_values.size, eta_d_values.size))
    for i, eta_f in enumerate(eta_f_values):
        for j, eta_d in enumerate(eta_d_values):
            assumed = replace(base_filter, eta_f=float(eta_f), eta_d=float(eta_d))

            def work(position: range, assumed=assumed) -> np.ndarray:
                records = generated[position.start][0]
                output = reconstruct_batch(
                    records, assumed, spec.subset, lump=spec.lump
                )
                return output.trajectories.at_bin(bin_index)

            # One work item per generated chunk, addressed by its position.
            positions = [range(k, k + 1) for k in range(len(chunks))]
            parts = run_chunks(positions, work, spec.workers, "Sweep point")
            samples = ValidationSamples(
                time_us=duration,
                coordinates=np.concatenate(parts),
                outcomes=outcomes,
            )
            scores[i, j] = outcome_deviance(samples)
            logger.debug(
                "eta_f=%.3f eta_d=%.3f deviance=%.2f", eta_f, eta_d, scores[i, j]
            )

    return SweepResult(
        eta_f=eta_f_values,
        eta_d=eta_d_values,
        scores=scores,
        threshold=ONE_SIGMA_TWO_PARAMS,
    )
