"""
Per-trajectory random streams.

Every trajectory owns independent counter-based Philox streams keyed by
``(master_seed, trajectory_index, purpose)``. A trajectory's draws therefore
do not depend on which chunk or worker processes it.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

NOISE_STREAM = 0
READOUT_STREAM = 1

# Steps of Wiener increments drawn per refill of a trajectory's noise buffer.
NOISE_BLOCK_STEPS = 512


def trajectory_rng(
    master_seed: int, index: int, stream: int = NOISE_STREAM
) -> np.random.Generator:
    """Return the generator for one trajectory and purpose."""
    if master_seed < 0:
        raise ValueError(f"master_seed must be >= 0, got {master_seed}")
    if index < 0:
        raise ValueError(f"trajectory index must be >= 0, got {index}")
    sequence = np.random.SeedSequence(master_seed, spawn_key=(index, stream))
    return np.random.Generator(np.random.Philox(sequence))


def noise_block_steps(substeps: int) -> int:
    """Steps per noise refill: a multiple of ``substeps`` and at least 512."""
    blocks = max(1, -(-NOISE_BLOCK_STEPS // substeps))
    return blocks * substeps


class NoiseSource:
    """Standard-normal draws for a batch of trajectories, refilled in blocks.

    Each refill asks every trajectory's own generator for a
    ``(block, width)`` array, so the sequence a trajectory sees is fixed by
    its index alone.
    """

    def __init__(
        self,
        master_seed: int,
        indices: Iterable[int],
        width: int,
        block_steps: int,
        total_steps: int,
    ) -> None:
        self.indices = tuple(indices)
        self.width = width
        self.block_steps = block_steps
        self.remaining = total_steps
        self._rngs = [
            trajectory_rng(master_seed, index, NOISE_STREAM) for index in self.indices
        ]
        self._buffer = np.empty((0, width, len(self.indices)))
        self._cursor = 0

    def _refill(self) -> None:
        steps = min(self.block_steps, self.remaining)
        if steps <= 0:
            raise RuntimeError("noise source exhausted")
        draws = np.stack(
            [rng.standard_normal((steps, self.width)) for rng in self._rngs]
        )
        # (N, steps, width) -> (steps, width, N) so each step is a contiguous slab.
        self._buffer = np.ascontiguousarray(draws.transpose(1, 2, 0))
        self._cursor = 0
        self.remaining -= steps

    def next_step(self) -> np.ndarray:
        """Draws for one step, shape ``(width, N)``."""
        if self._cursor >= self._buffer.shape[0]:
            self._refill()
        step = self._buffer[self._cursor]
        self._cursor += 1
        return step


def readout_uniforms(master_seed: int, indices: Iterable[int]) -> np.ndarray:
    """Three uniforms per trajectory (one per axis), shape ``(N, 3)``."""
    return np.stack(
        [
            trajectory_rng(master_seed, index, READOUT_STREAM).random(3)
            for index in indices
        ]
    )
