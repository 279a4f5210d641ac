"""
Distributions of reconstructed states on the Bloch sphere.

Histograms over the xy, xz and yz planes at chosen times, the ensemble-mean
trajectory, spread asymmetry, pole occupation and purity statistics for a
detector subset.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from qubit_trajectories.engine import reconstruct_batch
from qubit_trajectories.experiments.ensemble import (
    MomentSums,
    generate_chunk,
    merge_moments,
    run_ensemble,
)
from qubit_trajectories.experiments.models import (
    AsymmetryResult,
    EnsembleSpec,
    HistogramGrid,
    InsufficientDataError,
    PoleMass,
    PurityCurve,
    StateDistribution,
    SubsetPurity,
    plane_axes,
)
from qubit_trajectories.experiments.validation import time_to_bin
from qubit_trajectories.logger import get_logger
from qubit_trajectories.models import validate_subset

logger = get_logger("distributions")

DEFAULT_HISTOGRAM_BINS = 61


def _histogram(states: np.ndarray, plane: str, edges: np.ndarray) -> np.ndarray:
    first, second = plane_axes(plane)
    # Round-off can leave a coordinate a few ulps beyond +-1.
    points = np.clip(states, -1.0, 1.0)
    counts, _, _ = np.histogram2d(
        points[:, first], points[:, second], bins=(edges, edges)
    )
    return counts.astype(np.int64)


def state_distribution(
    spec: EnsembleSpec,
    taus: Sequence[float],
    planes: Sequence[str] = ("xy", "xz", "yz"),
    n_bins: int = DEFAULT_HISTOGRAM_BINS,
    overlay_trim: float = 0.0,
) -> StateDistribution:
    """Histogram the filter states of ``spec.subset`` at each time in ``taus``.

    Times are snapped to the nearest record-bin boundary.

    Raises:
        ValueError: A time lies outside [0, duration] or a plane is unknown.
    """
    params = spec.params
    if not taus:
        raise ValueError("at least one histogram time is required")
    if n_bins < 1:
        raise ValueError(f"histogram bins must be at least 1, got {n_bins}")
    for plane in planes:
        plane_axes(plane)
    bin_indices = [time_to_bin(params.duration, params.dt_record, tau) for tau in taus]
    edges = np.linspace(-1.0, 1.0, n_bins + 1)

    def work(
        chunk: range,
    ) -> tuple[dict[tuple[int, str], np.ndarray], np.ndarray, list[np.ndarray]]:
        batch = generate_chunk(spec, chunk, filter_subset=spec.subset)
        assert batch.filtered is not None
        filtered = batch.filtered.trajectories
        counts = {
            (index, plane): _histogram(filtered.at_bin(index), plane, edges)
            for index in bin_indices
            for plane in planes
        }
        snapshots = [filtered.at_bin(index).copy() for index in bin_indices]
        return counts, filtered.bloch.sum(axis=0), snapshots

    parts = run_ensemble(spec, work, "State distribution")

    grids = []
    for index in dict.fromkeys(bin_indices):
        for plane in planes:
            total = parts[0][0][(index, plane)]
            for part in parts[1:]:
                total = total + part[0][(index, plane)]
            grids.append(
                HistogramGrid(
                    plane=plane,
                    tau_us=index * params.dt_record,
                    edges=edges,
                    counts=total,
                )
            )

    bloch_sum = parts[0][1]
    for part in parts[1:]:
        bloch_sum = bloch_sum + part[1]
    states = {
        index * params.dt_record: np.concatenate([part[2][k] for part in parts])
        for k, index in enumerate(bin_indices)
    }
    return StateDistribution(
        grids=tuple(grids),
        times=params.bin_times(),
        mean_bloch=bloch_sum / spec.n_traj,
        states=states,
        subset=spec.subset,
        overlay_trim=overlay_trim,
    )


def asymmetry_statistic(
    source: np.ndarray | HistogramGrid,
    x0: float = 0.3,
    min_count: int = 10,
) -> AsymmetryResult:
    """Spread of y for x > x0 against x < -x0.

    Args:
        source: ``(N, 3)`` Bloch vectors, or an ``xy`` histogram whose cells
            are weighted by their counts.
        x0: Half-width of the excluded band around x = 0.
        min_count: Minimum number of states on each side.

    Raises:
        InsufficientDataError: Either side holds fewer than ``min_count`` states.
    """
    if isinstance(source, HistogramGrid):
        if source.plane != "xy":
            raise ValueError(f"asymmetry needs an xy histogram, got {source.plane!r}")
        xs, ys = np.meshgrid(source.centers, source.centers, indexing="ij")
        x, y, weight = xs.ravel(), ys.ravel(), source.counts.ravel().astype(float)
    else:
        states = np.asarray(source, dtype=float)
        x, y, weight = states[:, 0], states[:, 1], np.ones(states.shape[0])

    def spread(mask: np.ndarray) -> tuple[float, float, int]:
        w = weight[mask]
        count = int(w.sum())
        if count < max(min_count, 2):
            raise InsufficientDataError(
                f"asymmetry needs {max(min_count, 2)} states on each side of "
                f"x = +-{x0}, found {count}"
            )
        mean = float(np.sum(w * y[mask]) / count)
        variance = float(np.sum(w * (y[mask] - mean) ** 2) / (count - 1))
        std = float(np.sqrt(variance))
        return std, std / np.sqrt(2.0 * (count - 1)), count

    std_pos, se_pos, n_pos = spread(x > x0)
    std_neg, se_neg, n_neg = spread(x < -x0)
    return AsymmetryResult(
        x0=x0,
        std_positive=std_pos,
        std_negative=std_neg,
        se_positive=float(se_pos),
        se_negative=float(se_neg),
        count_positive=n_pos,
        count_negative=n_neg,
    )


def pole_mass(grid: HistogramGrid, radius: float = 0.25) -> PoleMass:
    """Fraction of the histogram mass within ``radius`` of z = +1 and z = -1.

    The grid's second axis must be z (planes xz or yz).
    """
    if grid.plane not in ("xz", "yz"):
        raise ValueError(f"pole mass needs an xz or yz histogram, got {grid.plane!r}")
    if grid.total == 0:
        raise InsufficientDataError("histogram is empty")
    first, second = np.meshgrid(grid.centers, grid.centers, indexing="ij")
    north = np.hypot(first, second - 1.0) <= radius
    south = np.hypot(first, second + 1.0) <= radius
    total = float(grid.total)
    return PoleMass(
        radius=radius,
        north=float(grid.counts[north].sum() / total),
        south=float(grid.counts[south].sum() / total),
    )


def _purity(bloch: np.ndarray) -> np.ndarray:
    return (1.0 + np.sum(bloch**2, axis=-1)) / 2.0


def purity_curve(spec: EnsembleSpec) -> PurityCurve:
    """Ensemble-mean purity of the ``spec.subset`` filter at every bin boundary."""

    def work(chunk: range) -> MomentSums:
        batch = generate_chunk(spec, chunk, filter_subset=spec.subset)
        assert batch.filtered is not None
        return MomentSums.of(_purity(batch.filtered.trajectories.bloch))

    moments = merge_moments(run_ensemble(spec, work, "Purity curve"))
    return PurityCurve(
        subset=spec.subset,
        times=spec.params.bin_times(),
        mean=moments.mean,
        stderr=moments.stderr,
    )


def compare_subsets(
    spec: EnsembleSpec,
    tau_us: float,
    subsets: Sequence[str] = ("uvw", "uv", "w", "none"),
) -> SubsetPurity:
    """Purity at ``tau_us`` of filters on each subset of the same records."""
    if not subsets:
        raise ValueError("at least one subset is required")
    for subset in subsets:
        validate_subset(subset)
    params = spec.params
    bin_index = time_to_bin(params.duration, params.dt_record, tau_us)
    duration = max(bin_index, 1) * params.dt_record
    assumed = spec.assumed_params.with_duration(duration)

    def work(chunk: range) -> dict[str, np.ndarray]:
        batch = generate_chunk(spec, chunk, filter_subset=None, duration=duration)
        purities = {}
        for subset in subsets:
            output = reconstruct_batch(batch.records, assumed, subset, lump=spec.lump)
            purities[subset] = _purity(output.trajectories.at_bin(bin_index))
        return purities

    parts = run_ensemble(spec, work, "Subset comparison")
    purities = {
        subset: np.concatenate([part[subset] for part in parts]) for subset in subsets
    }
    for subset in subsets:
        logger.info(
            "Purity at %.2f us with %s: %.4f",
            bin_index * params.dt_record,
            subset,
            float(np.mean(purities[subset])),
        )
    return SubsetPurity(tau_us=bin_index * params.dt_record, purities=purities)
