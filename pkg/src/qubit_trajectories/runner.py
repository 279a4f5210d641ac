"""
Run orchestration: executes one configured mode and records its outputs.

Each mode writes its tables into ``out_dir`` and a ``summary.ndjson`` with
scalar results; ``manifest.ndjson`` is written last, also when the run
fails, in which case every output it lists is marked invalid.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from typing import Any

import numpy as np
import pandas as pd

from qubit_trajectories.config import RunConfig
from qubit_trajectories.engine import rabi_regime, reconstruct_batch
from qubit_trajectories.experiments.distributions import (
    asymmetry_statistic,
    compare_subsets,
    pole_mass,
    purity_curve,
    state_distribution,
)
from qubit_trajectories.experiments.ensemble import (
    MomentSums,
    generate_chunk,
    plan_chunks,
    run_chunks,
)
from qubit_trajectories.experiments.models import (
    EnsembleSpec,
    InsufficientDataError,
    PurityCurve,
    RawAverageResult,
)
from qubit_trajectories.experiments.presets import (
    PresetCatalog,
    config_grid,
    load_presets,
)
from qubit_trajectories.experiments.tomography import (
    oscillation_period,
    raw_average_tomography,
)
from qubit_trajectories.experiments.validation import (
    efficiency_sweep,
    validate_all_axes,
)
from qubit_trajectories.export import (
    RunManifest,
    read_records,
    trajectories_frame,
    write_ndjson,
    write_records,
    write_table,
)
from qubit_trajectories.logger import get_logger, log_section, log_subsection
from qubit_trajectories.models import RecordBatch, TrajectoryBatch
from qubit_trajectories.project_meta import get_project_version

logger = get_logger("runner")

# Filter subsets compared in histogram mode.
COMPARED_SUBSETS = ("uvw", "uv", "w", "none")


class _RunContext:
    """Collects written files for the manifest."""

    def __init__(self, config: RunConfig, manifest: RunManifest) -> None:
        self.config = config
        self.manifest = manifest
        self.out_dir = config.out_dir
        self.summary: list[dict[str, Any]] = []

    def table(self, frame: pd.DataFrame, name: str) -> None:
        for path in write_table(frame, self.out_dir, name, self.config.formats):
            self.manifest.add_output(path, self.out_dir)
            logger.info("Wrote %s (%d rows)", path, len(frame))

    def records(self, records: RecordBatch) -> None:
        for path in write_records(records, self.out_dir, self.config.formats):
            self.manifest.add_output(path, self.out_dir)
            logger.info("Wrote %s", path)

    def note(self, kind: str, **values: Any) -> None:
        self.summary.append({"kind": kind, **values})

    def flush_summary(self) -> None:
        if self.summary:
            path = write_ndjson(self.summary, self.out_dir / "summary.ndjson")
            self.manifest.add_output(path, self.out_dir)


def _concat_trajectories(parts: list[TrajectoryBatch]) -> TrajectoryBatch:
    return TrajectoryBatch(
        times=parts[0].times,
        bloch=np.concatenate([p.bloch for p in parts]),
        subset=parts[0].subset,
        indices=tuple(i for p in parts for i in p.indices),
    )


def _concat_records(parts: list[RecordBatch]) -> RecordBatch:
    return RecordBatch(
        samples=np.concatenate([p.samples for p in parts]),
        dt_record=parts[0].dt_record,
        indices=tuple(i for p in parts for i in p.indices),
        config_id=parts[0].config_id,
    )


def _note_innovations(ctx: _RunContext, innovations: np.ndarray) -> None:
    """Mean, spread and lag-1 autocorrelation of each conditioned record column."""
    for column, label in enumerate(("u", "v", "w")):
        values = innovations[:, :, column]
        if values.size == 0 or np.isnan(values).all():
            continue
        lagged = float("nan")
        if values.shape[1] > 1:
            lagged = float(np.mean(values[:, 1:] * values[:, :-1]))
        ctx.note(
            "innovation",
            column=label,
            mean=float(np.mean(values)),
            std=float(np.std(values)),
            lag1=lagged / float(np.mean(values**2)),
        )


def _run_generate(ctx: _RunContext) -> int:
    config = ctx.config
    spec = config.ensemble_spec()

    def work(chunk: range):  # type: ignore[no-untyped-def]
        return generate_chunk(spec, chunk, filter_subset=config.subset)

    chunks = plan_chunks(spec.n_traj, spec.chunk_size)
    batches = run_chunks(chunks, work, spec.workers, "Generate")
    ctx.records(_concat_records([b.records for b in batches]))
    omniscient = _concat_trajectories([b.omniscient for b in batches])
    ctx.table(trajectories_frame(omniscient), "omniscient")
    filtered = _concat_trajectories(
        [b.filtered.trajectories for b in batches if b.filtered is not None]
    )
    ctx.table(trajectories_frame(filtered), "filtered")
    if "purity_curve" in spec.outputs:
        moments = MomentSums.of((1.0 + np.sum(filtered.bloch**2, axis=2)) / 2.0)
        curve = PurityCurve(
            subset=filtered.subset,
            times=filtered.times,
            mean=moments.mean,
            stderr=moments.stderr,
        )
        ctx.table(curve.to_frame(), "purity")
    innovations = [b.filtered.innovations for b in batches if b.filtered is not None]
    _note_innovations(ctx, np.concatenate(innovations))
    _write_outputs(ctx, spec, skip=frozenset({"purity_curve"}))
    return spec.n_traj


def _run_reconstruct(ctx: _RunContext) -> int:
    config = ctx.config
    assert config.records_path is not None
    records = read_records(config.records_path, config.params.dt_record)
    logger.info(
        "Read %d records of %d bins from %s",
        len(records),
        records.n_bins,
        config.records_path,
    )
    params = config.params
    if records.n_bins != params.n_bins:
        params = params.with_duration(records.n_bins * records.dt_record)
        logger.info("Filtering over the records' %.6g us", params.duration)
    chunks = plan_chunks(len(records), config.chunk_size)

    def work(chunk: range):  # type: ignore[no-untyped-def]
        part = RecordBatch(
            samples=records.samples[chunk.start : chunk.stop],
            dt_record=records.dt_record,
            indices=records.indices[chunk.start : chunk.stop],
        )
        return reconstruct_batch(
            part, params, config.subset, lump=config.lump_innovations
        )

    outputs = run_chunks(chunks, work, config.workers, "Reconstruct")
    filtered = _concat_trajectories([o.trajectories for o in outputs])
    ctx.table(trajectories_frame(filtered), "filtered")
    _note_innovations(ctx, np.concatenate([o.innovations for o in outputs]))
    return len(records)


def _average_summary(
    result: RawAverageResult, config_id: str, params: Any
) -> dict[str, Any]:
    agreement = result.agreement()
    row: dict[str, Any] = {
        "config_id": config_id,
        "rabi_per_us": params.rabi_per_us,
        "gamma_d_per_us": params.gamma_d,
        "regime": rabi_regime(params),
        "agreement_u": agreement[0],
        "agreement_v": agreement[1],
        "agreement_w": agreement[2],
    }
    try:
        noise = float(np.nanmedian(result.stderr[:, 2]))
        row["w_period_us"] = oscillation_period(
            result.times, result.means[:, 2], hysteresis=3 * noise
        )
    except (InsufficientDataError, ValueError):
        row["w_period_us"] = None
    return row


def _write_raw_average(ctx: _RunContext, spec: EnsembleSpec) -> None:
    result = raw_average_tomography(spec)
    ctx.table(result.to_frame(), "raw_average")
    ctx.note("raw_average", **_average_summary(result, spec.config_id, spec.params))


def _run_grid(ctx: _RunContext, catalog: PresetCatalog) -> int:
    config = ctx.config
    base = config.params
    specs = config_grid(
        catalog,
        base=base,
        n_traj=config.n_traj,
        master_seed=config.master_seed,
        workers=config.workers,
        chunk_size=config.chunk_size,
        lump=config.lump_innovations,
    )
    rows = []
    for position, spec in enumerate(specs, start=1):
        log_subsection(logger, f"{spec.config_id} ({position}/{len(specs)})")
        result = raw_average_tomography(spec)
        ctx.table(result.to_frame(), f"grid/{spec.config_id}")
        rows.append(_average_summary(result, spec.config_id, spec.params))
    ctx.table(pd.DataFrame(rows), "grid_summary")
    return config.n_traj * len(specs)


def _write_validation(ctx: _RunContext, spec: EnsembleSpec) -> None:
    config = ctx.config
    bins = validate_all_axes(
        spec, config.validation_time_us, config.bin_width, config.min_bin_count
    )
    frames = [b.to_frame() for b in bins.values()]
    ctx.table(pd.concat(frames, ignore_index=True), "validation")
    for axis, result in bins.items():
        fit = result.fit
        ctx.note(
            "validation_fit",
            axis=axis,
            t_us=result.time_us,
            slope=None if fit is None else fit.slope,
            intercept=None if fit is None else fit.intercept,
            slope_se=None if fit is None else fit.slope_se,
            intercept_se=None if fit is None else fit.intercept_se,
            bins_used=0 if fit is None else fit.bins_used,
            chi_square=result.chi_square(),
        )


def _sweep_axis(center: float, span: float, step: float) -> np.ndarray:
    count = int(round(span / step))
    values = center + step * np.arange(-count, count + 1)
    values = np.round(values, 12)
    return values[(values >= 0) & (values <= 1)]


def _run_sweep(ctx: _RunContext) -> int:
    config = ctx.config
    params = config.params
    spec = config.ensemble_spec()
    eta_f = _sweep_axis(params.eta_f, config.sweep_span, config.sweep_step)
    eta_d = _sweep_axis(params.eta_d, config.sweep_span, config.sweep_step)
    logger.info("Sweeping %d x %d efficiency grid", eta_f.size, eta_d.size)
    result = efficiency_sweep(spec, eta_f, eta_d, config.validation_time_us)
    ctx.table(result.to_frame(), "sweep")
    best_f, best_d = result.best
    ctx.note(
        "sweep",
        best_eta_f=best_f,
        best_eta_d=best_d,
        truth_in_region=result.contains(params.eta_f, params.eta_d),
        threshold=result.threshold,
    )
    return spec.n_traj


def _write_histograms(ctx: _RunContext, spec: EnsembleSpec) -> None:
    config = ctx.config
    distribution = state_distribution(
        spec,
        config.taus_us,
        config.planes,
        n_bins=config.histogram_bins,
        overlay_trim=config.overlay_trim_us,
    )
    frames = [g.to_frame() for g in distribution.grids]
    ctx.table(pd.concat(frames, ignore_index=True), "histograms")
    ctx.table(distribution.overlay_frame(), "mean_trajectory")

    for tau, states in distribution.states.items():
        purity = (1.0 + np.sum(states**2, axis=1)) / 2.0
        row: dict[str, Any] = {
            "tau_us": tau,
            "subset": spec.subset,
            "mean_purity": float(np.mean(purity)),
        }
        try:
            asym = asymmetry_statistic(states, config.asymmetry_x0)
            row.update(
                std_y_positive_x=asym.std_positive,
                std_y_negative_x=asym.std_negative,
                asymmetry_ratio=asym.ratio,
                asymmetry_sigma=asym.significance,
            )
        except InsufficientDataError as exc:
            logger.warning("No asymmetry at tau = %s us: %s", tau, exc)
        if "xz" in config.planes:
            poles = pole_mass(distribution.grid("xz", tau))
            row.update(north_mass=poles.north, south_mass=poles.south)
        ctx.note("distribution", **row)

    if config.compare_subsets:
        tau = max(config.taus_us)
        comparison = compare_subsets(spec, tau, COMPARED_SUBSETS)
        ctx.table(comparison.to_frame(), "subset_purity")
        for worse in COMPARED_SUBSETS[1:]:
            try:
                diff, se = comparison.difference("uvw", worse)
            except InsufficientDataError as exc:
                logger.warning("No purity ordering for %s: %s", worse, exc)
                continue
            ctx.note("purity_order", better="uvw", worse=worse, difference=diff, se=se)


def _write_purity_curve(ctx: _RunContext, spec: EnsembleSpec) -> None:
    ctx.table(purity_curve(spec).to_frame(), "purity")


# Ensemble outputs in the order they are written.
_OUTPUT_WRITERS: dict[str, Callable[[_RunContext, EnsembleSpec], None]] = {
    "raw_average": _write_raw_average,
    "validation": _write_validation,
    "histograms": _write_histograms,
    "purity_curve": _write_purity_curve,
}


def _write_outputs(
    ctx: _RunContext, spec: EnsembleSpec, skip: frozenset[str] = frozenset()
) -> None:
    for name, writer in _OUTPUT_WRITERS.items():
        if name in spec.outputs and name not in skip:
            writer(ctx, spec)


def _run_ensemble(ctx: _RunContext) -> int:
    """Run one ensemble over the configuration and write every requested output."""
    spec = ctx.config.ensemble_spec()
    _write_outputs(ctx, spec)
    return spec.n_traj


def run(config: RunConfig) -> RunManifest:
    """Execute the configured mode, write its outputs and the manifest.

    Raises:
        Whatever the mode raised, after the manifest has been written with
        status ``failed``.
    """
    config.out_dir.mkdir(parents=True, exist_ok=True)
    catalog = load_presets(config.presets_path)
    manifest = RunManifest(
        config=dict(config.snapshot),
        version=get_project_version(),
        mode=config.mode,
        n_traj_requested=config.n_traj,
        presets_version=catalog.version,
        device=dict(catalog.device),
    )
    ctx = _RunContext(config, manifest)
    handlers: dict[str, Callable[[], int]] = {
        "generate": lambda: _run_generate(ctx),
        "reconstruct": lambda: _run_reconstruct(ctx),
        "average": lambda: _run_ensemble(ctx),
        "validate": lambda: _run_ensemble(ctx),
        "histogram": lambda: _run_ensemble(ctx),
        "sweep": lambda: _run_sweep(ctx),
        "grid": lambda: _run_grid(ctx, catalog),
    }

    log_section(logger, f"qubit-traj {config.mode} ({config.n_traj} trajectories)")
    started = time.perf_counter()
    try:
        completed = handlers[config.mode]()
        ctx.flush_summary()
    except BaseException as exc:
        manifest.wall_clock_s = time.perf_counter() - started
        manifest.mark_failed(exc)
        manifest.write(config.out_dir)
        logger.error("Run failed: %s", exc)
        raise
    manifest.n_traj_completed = completed
    manifest.wall_clock_s = time.perf_counter() - started
    manifest.status = "complete"
    path = manifest.write(config.out_dir)
    logger.info("Run complete in %.1f s; manifest at %s", manifest.wall_clock_s, path)
    return manifest

