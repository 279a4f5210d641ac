"""
Chunked, worker-count independent ensemble execution.

Trajectory indices are cut into fixed-size chunks. Chunks run on a thread
pool and their partial results are merged in chunk order, so the merged
numbers depend only on ``(n_traj, chunk_size, master_seed)``.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import TypeVar

import numpy as np

from qubit_trajectories.engine import GeneratedBatch, generate_batch
from qubit_trajectories.experiments.models import EnsembleSpec
from qubit_trajectories.logger import ProgressLogger, get_logger

logger = get_logger("ensemble")

T = TypeVar("T")


def plan_chunks(n_traj: int, chunk_size: int) -> list[range]:
    """Split ``range(n_traj)`` into consecutive chunks of ``chunk_size``."""
    if n_traj < 1:
        raise ValueError(f"n_traj must be at least 1, got {n_traj}")
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be at least 1, got {chunk_size}")
    return [
        range(start, min(start + chunk_size, n_traj))
        for start in range(0, n_traj, chunk_size)
    ]


def run_chunks(
    chunks: Sequence[range],
    work: Callable[[range], T],
    workers: int,
    operation: str,
) -> list[T]:
    """Run ``work`` on every chunk and return the results in chunk order."""
    results: list[T | None] = [None] * len(chunks)
    progress = ProgressLogger(logger, len(chunks), operation)

    if workers <= 1 or len(chunks) == 1:
        for position, chunk in enumerate(chunks):
            results[position] = work(chunk)
            progress.update(message=f"trajectories {chunk.start}-{chunk.stop - 1}")
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(work, chunk): position
                for position, chunk in enumerate(chunks)
            }
            for future in as_completed(futures):
                position = futures[future]
                chunk = chunks[position]
                try:
                    results[position] = future.result()
                except Exception:
                    progress.update(
                        success=False,
                        message=f"FAILED: trajectories {chunk.start}-{chunk.stop - 1}",
                    )
                    for pending in futures:
                        pending.cancel()
                    raise
                progress.update(message=f"trajectories {chunk.start}-{chunk.stop - 1}")

    progress.summary()
    return results  # type: ignore[return-value]


def run_ensemble(
    spec: EnsembleSpec, work: Callable[[range], T], operation: str
) -> list[T]:
    """Run ``work`` over the ensemble's chunks of trajectory indices."""
    chunks = plan_chunks(spec.n_traj, spec.chunk_size)
    return run_chunks(chunks, work, spec.workers, operation)


def generate_chunk(
    spec: EnsembleSpec,
    chunk: range,
    *,
    filter_subset: str | None = None,
    duration: float | None = None,
) -> GeneratedBatch:
    """Generate one chunk of the ensemble, optionally truncated in time."""
    params = spec.params if duration is None else spec.params.with_duration(duration)
    filter_params = spec.filter_params
    if duration is not None and filter_params is not None:
        filter_params = filter_params.with_duration(duration)
    return generate_batch(
        params,
        chunk,
        spec.master_seed,
        filter_params=filter_params,
        filter_subset=filter_subset,
        lump=spec.lump,
        phi_unraveling=spec.phi_unraveling,
        config_id=spec.config_id,
    )


@dataclass
class MomentSums:
    """Running count, sum and sum of squares, merged in a fixed order."""

    count: int
    total: np.ndarray
    squares: np.ndarray

    @classmethod
    def of(cls, values: np.ndarray) -> MomentSums:
        """Moments over the first axis of ``values``."""
        return cls(
            count=values.shape[0],
            total=values.sum(axis=0),
            squares=(values**2).sum(axis=0),
        )

    def merge(self, other: MomentSums) -> MomentSums:
        return MomentSums(
            count=self.count + other.count,
            total=self.total + other.total,
            squares=self.squares + other.squares,
        )

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.count

    @property
    def stderr(self) -> np.ndarray:
        """Standard error of the mean from the unbiased sample variance."""
        if self.count < 2:
            return np.full_like(self.total, np.nan, dtype=float)
        variance = (self.squares - self.total**2 / self.count) / (self.count - 1)
        return np.sqrt(np.maximum(variance, 0.0) / self.count)


def merge_moments(parts: Sequence[MomentSums]) -> MomentSums:
    merged = parts[0]
    for part in parts[1:]:
        merged = merged.merge(part)
    return merged
