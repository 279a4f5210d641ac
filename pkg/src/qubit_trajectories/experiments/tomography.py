"""
Full tomography by raw averaging of the measurement records.

The ensemble mean of each record column, divided by its record scale,
estimates the corresponding Bloch coordinate of the unconditioned state.
"""

from __future__ import annotations

import numpy as np

from qubit_trajectories.engine import master_equation_path
from qubit_trajectories.experiments.ensemble import (
    MomentSums,
    generate_chunk,
    merge_moments,
    run_ensemble,
)
from qubit_trajectories.experiments.models import (
    EnsembleSpec,
    InsufficientDataError,
    RawAverageResult,
)
from qubit_trajectories.logger import get_logger
from qubit_trajectories.models import PhysicsParams
from qubit_trajectories.physics import RECORD_COLUMNS, record_scales

logger = get_logger("tomography")


def master_equation_bin_means(params: PhysicsParams) -> np.ndarray:
    """Master-equation Bloch vector averaged over each bin's integrator sub-steps.

    Record samples average the coordinate at the start of every sub-step, so
    the reference is averaged over the same instants.
    """
    path = master_equation_path(params)
    starts = path[:-1].reshape(params.n_bins, params.substeps, 3)
    return starts.mean(axis=1)


def raw_average_tomography(spec: EnsembleSpec) -> RawAverageResult:
    """Average raw records over the ensemble and rescale them to Bloch coordinates.

    Returns:
        Rescaled means and standard errors per bin (columns with a zero record
        scale are NaN) with the master-equation reference attached.
    """
    params = spec.params

    def work(chunk: range) -> MomentSums:
        batch = generate_chunk(spec, chunk, filter_subset=None)
        return MomentSums.of(batch.records.samples)

    moments = merge_moments(run_ensemble(spec, work, "Raw-average tomography"))
    scales = np.array(record_scales(params))
    absent = tuple(
        label for label, column in RECORD_COLUMNS.items() if scales[column] == 0
    )
    if absent:
        logger.warning(
            "Record scale is zero for %s; rescaled columns left empty",
            ", ".join(absent),
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(scales == 0, np.nan, scales)
        means = moments.mean / safe
        stderr = moments.stderr / np.abs(safe)

    return RawAverageResult(
        times=params.bin_times()[:-1],
        means=means,
        stderr=stderr,
        reference=master_equation_bin_means(params),
        n_traj=moments.count,
        absent=absent,
    )


def predicted_stderr(params: PhysicsParams, n_traj: int) -> np.ndarray:
    """White-noise floor of the rescaled averages.

    Equal to 1 / (scale * sqrt(dt_record * n_traj)) per column.
    """
    scales = np.abs(np.array(record_scales(params)))
    with np.errstate(divide="ignore"):
        floor = 1.0 / (scales * np.sqrt(params.dt_record * n_traj))
        return np.where(scales == 0, np.nan, floor)


def oscillation_period(
    times: np.ndarray,
    values: np.ndarray,
    *,
    hysteresis: float = 0.0,
    until: float | None = None,
) -> float:
    """Oscillation period from the spacing of zero crossings.

    The series mean is removed first. A crossing is only counted once the
    series has moved beyond ``hysteresis`` on the other side, which keeps
    noise near zero from adding spurious crossings. Crossing times are
    interpolated linearly.

    Raises:
        InsufficientDataError: Fewer than two crossings.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if until is not None:
        keep = times <= until
        times, values = times[keep], values[keep]
    centered = values - np.mean(values)

    crossings: list[float] = []
    state = 0
    last_index = None
    for i, value in enumerate(centered):
        side = 1 if value > hysteresis else -1 if value < -hysteresis else 0
        if side == 0:
            continue
        if state != 0 and side != state and last_index is not None:
            # Interpolate between the last point on the old side and this point.
            for k in range(last_index, i):
                a, b = centered[k], centered[k + 1]
                if a == 0 or (a > 0) != (b > 0):
                    fraction = 0.0 if a == b else a / (a - b)
                    crossings.append(times[k] + fraction * (times[k + 1] - times[k]))
                    break
        state = side
        last_index = i

    if len(crossings) < 2:
        raise InsufficientDataError(
            f"need at least two zero crossings, found {len(crossings)}"
        )
    return float(2.0 * np.mean(np.diff(crossings)))
