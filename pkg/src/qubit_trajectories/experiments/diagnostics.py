"""
Numerical diagnostics: innovation whiteness, integrator convergence and the
sensitivity of the read records to how the unread dephasing is unraveled.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from qubit_trajectories.experiments.ensemble import (
    MomentSums,
    generate_chunk,
    merge_moments,
    run_ensemble,
)
from qubit_trajectories.experiments.models import (
    ConvergenceResult,
    EnsembleSpec,
    UnravelingComparison,
    WhitenessResult,
)
from qubit_trajectories.experiments.validation import time_to_bin
from qubit_trajectories.logger import get_logger, log_subsection
from qubit_trajectories.models import PhysicsParams

logger = get_logger("diagnostics")


@dataclass
class _LagSums:
    count: np.ndarray
    total: np.ndarray
    squares: np.ndarray
    lagged: np.ndarray

    def merge(self, other: _LagSums) -> _LagSums:
        return _LagSums(
            count=self.count + other.count,
            total=self.total + other.total,
            squares=self.squares + other.squares,
            lagged=self.lagged + other.lagged,
        )


def innovation_whiteness(spec: EnsembleSpec) -> WhitenessResult:
    """Mean, standard error and lag-1 autocorrelation of the filter innovations.

    Innovations are normalized to unit variance per bin. Columns outside the
    ensemble's subset are NaN.
    """

    def work(chunk: range) -> _LagSums:
        batch = generate_chunk(spec, chunk, filter_subset=spec.subset)
        assert batch.filtered is not None
        innovations = batch.filtered.innovations
        present = ~np.isnan(innovations[0, 0])
        values = np.where(present, innovations, 0.0)
        return _LagSums(
            count=np.where(present, values.shape[0] * values.shape[1], 0),
            total=values.sum(axis=(0, 1)),
            squares=(values**2).sum(axis=(0, 1)),
            lagged=(values[:, 1:] * values[:, :-1]).sum(axis=(0, 1)),
        )

    parts = run_ensemble(spec, work, "Innovation whiteness")
    sums = parts[0]
    for part in parts[1:]:
        sums = sums.merge(part)

    with np.errstate(divide="ignore", invalid="ignore"):
        count = np.where(sums.count > 0, sums.count, np.nan)
        mean = sums.total / count
        variance = (sums.squares - sums.total**2 / count) / (count - 1)
        stderr = np.sqrt(variance / count)
        lag1 = sums.lagged / sums.squares
        lag1 = np.where(sums.count > 0, lag1, np.nan)
    return WhitenessResult(
        mean=mean, stderr=stderr, lag1=lag1, count=int(np.max(sums.count))
    )


def purity_convergence(
    params: PhysicsParams,
    dt_ints: Sequence[float],
    n_traj: int,
    master_seed: int,
    *,
    workers: int = 1,
    chunk_size: int = 1024,
) -> ConvergenceResult:
    """Mean purity deficit of the omniscient state at the final time for each step size.

    The omniscient unraveling keeps an exact solution pure, so the deficit
    measures the integrator's discretization error.
    """
    if not dt_ints:
        raise ValueError("at least one integrator step is required")
    deficits = []
    errors = []
    for dt_int in dt_ints:
        log_subsection(logger, f"dt_int = {dt_int} us")
        stepped = replace(params, dt_int=dt_int)
        spec = EnsembleSpec(
            params=stepped,
            n_traj=n_traj,
            master_seed=master_seed,
            workers=workers,
            chunk_size=chunk_size,
        )

        def work(chunk: range, spec: EnsembleSpec = spec) -> MomentSums:
            batch = generate_chunk(spec, chunk, filter_subset=None)
            final = batch.omniscient.at_bin(stepped.n_bins)
            return MomentSums.of(1.0 - (1.0 + np.sum(final**2, axis=1)) / 2.0)

        moments = merge_moments(run_ensemble(spec, work, "Purity convergence"))
        deficits.append(float(moments.mean))
        errors.append(float(moments.stderr))
    return ConvergenceResult(
        dt_ints=tuple(float(dt) for dt in dt_ints),
        deficits=np.array(deficits),
        stderr=np.array(errors),
    )


def compare_phi_unravelings(
    spec: EnsembleSpec, time_us: float | None = None
) -> UnravelingComparison:
    """Two-sample KS test of w-record samples under diffusive and jump dephasing.

    Each trajectory contributes its w sample from the record bin ending at
    ``time_us`` (the last bin by default), so both samples are independent
    and identically distributed within an unraveling. The jump ensemble uses
    ``master_seed + 1``.
    """
    params = spec.params
    bin_end = params.n_bins
    if time_us is not None:
        bin_end = time_to_bin(params.duration, params.dt_record, time_us)
    if bin_end == 0:
        raise ValueError("comparison time must be at least one record bin")

    def collect(run: EnsembleSpec) -> np.ndarray:
        def work(chunk: range) -> np.ndarray:
            batch = generate_chunk(run, chunk, filter_subset=None)
            return batch.records.samples[:, bin_end - 1, 2].copy()

        operation = f"w records ({run.phi_unraveling} dephasing)"
        return np.concatenate(run_ensemble(run, work, operation))

    diffusive = collect(replace(spec, phi_unraveling="diffusive"))
    jumps = collect(
        replace(spec, phi_unraveling="jump", master_seed=spec.master_seed + 1)
    )
    result = stats.ks_2samp(diffusive, jumps)
    logger.info(
        "KS statistic %.4g (p = %.3g) over %d samples each at t = %.6g us",
        result.statistic,
        result.pvalue,
        diffusive.size,
        bin_end * params.dt_record,
    )
    return UnravelingComparison(
        statistic=float(result.statistic),
        pvalue=float(result.pvalue),
        samples=int(diffusive.size),
        time_us=bin_end * params.dt_record,
    )
