"""
Time evolution for the monitored qubit.

The master equation is linear in rho, so every term of the stochastic master
equation is an affine function of the Bloch vector. ``compile_dynamics``
evaluates the physics superoperators once on basis states and keeps the
resulting coefficients; the steppers below then work on ``(3, N)`` arrays of
Bloch vectors, one column per trajectory. Each coefficient is applied with
explicit elementwise operations in a fixed order, so a trajectory's numbers do
not depend on how many other trajectories share its batch.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from scipy.special import ndtri

from qubit_trajectories.logger import get_logger
from qubit_trajectories.models import (
    ChannelSet,
    PhysicsParams,
    QubitState,
    RecordBatch,
    RecordSet,
    Trajectory,
    TrajectoryBatch,
    validate_subset,
)
from qubit_trajectories.physics import (
    CHANNEL_ORDER,
    IDENTITY,
    RECORD_COLUMNS,
    SIGMA_Y,
    backaction,
    bloch_of,
    build_channels,
    dagger,
    lindblad_rhs,
    measurement_mean,
)
from qubit_trajectories.rng import NoiseSource, noise_block_steps

logger = get_logger("engine")

PhiUnraveling = Literal["diffusive", "jump"]
PHI_UNRAVELINGS: tuple[str, ...] = ("diffusive", "jump")

# Coefficients below this fraction of the largest one are round-off.
_SNAP_RELATIVE = 1e-13

# One affine output: (constant, ((input_index, coefficient), ...)).
Row = tuple[float, tuple[tuple[int, float], ...]]


class SimulationError(RuntimeError):
    """A trajectory left the finite numbers."""

    def __init__(self, message: str, bin_index: int, indices: Sequence[int]) -> None:
        super().__init__(message)
        self.bin_index = bin_index
        self.indices = tuple(indices)


_BASIS_STATES = (
    QubitState.from_bloch(0.0, 0.0, 0.0),
    QubitState.from_bloch(1.0, 0.0, 0.0),
    QubitState.from_bloch(0.0, 1.0, 0.0),
    QubitState.from_bloch(0.0, 0.0, 1.0),
)


def _affine_from(
    evaluate: Callable[[QubitState], Any],
) -> tuple[np.ndarray, np.ndarray]:
    """Fit ``f(r) = M r + c`` from f at the mixed state and the +x/+y/+z poles."""
    center = np.asarray(evaluate(_BASIS_STATES[0]), dtype=float)
    columns = [
        np.asarray(evaluate(state), dtype=float) - center
        for state in _BASIS_STATES[1:]
    ]
    return np.stack(columns, axis=-1), center


def _compile_rows(
    matrix: np.ndarray, offset: np.ndarray, scale: float
) -> tuple[Row, ...]:
    cutoff = _SNAP_RELATIVE * max(scale, 1.0)
    rows = []
    for k in range(matrix.shape[0]):
        const = float(offset[k]) if abs(offset[k]) > cutoff else 0.0
        terms = tuple(
            (j, float(matrix[k, j])) for j in range(3) if abs(matrix[k, j]) > cutoff
        )
        rows.append((const, terms))
    return tuple(rows)


def _evaluate(row: Row, r: np.ndarray) -> np.ndarray:
    const, terms = row
    out: np.ndarray | None = None
    for j, coefficient in terms:
        term = coefficient * r[j]
        out = term if out is None else out + term
    if out is None:
        return np.full(r.shape[1:], const)
    if const != 0.0:
        out = out + const
    return out


def _is_zero(row: Row) -> bool:
    return row[0] == 0.0 and not row[1]


@dataclass(frozen=True)
class BlochDynamics:
    """Compiled affine Bloch form of the stochastic master equation.

    ``drift`` gives dr/dt = A r + b. For stochastic channel ``c`` the record
    mean is ``means[c](r)`` and the Bloch part of ``L rho + rho L^dagger`` is
    ``kicks[c](r)``, so the backaction is ``kicks[c](r) - means[c](r) * r``.
    """

    omega: float
    drift: tuple[Row, ...]
    labels: tuple[str, ...]
    means: tuple[Row, ...]
    kicks: tuple[tuple[Row, ...], ...]

    def record_mean(self, channel: int, r: np.ndarray) -> np.ndarray:
        return _evaluate(self.means[channel], r)

    def drift_field(self, r: np.ndarray) -> np.ndarray:
        return np.stack([_evaluate(row, r) for row in self.drift])

    def euler_step(
        self, r: np.ndarray, dt: float, increments: Sequence[np.ndarray]
    ) -> np.ndarray:
        """One Ito Euler-Maruyama step followed by clipping onto the Bloch ball."""
        updated = [r[k] + _evaluate(self.drift[k], r) * dt for k in range(3)]
        for channel, dw in enumerate(increments):
            mean_row = self.means[channel]
            kick_rows = self.kicks[channel]
            if _is_zero(mean_row) and all(_is_zero(row) for row in kick_rows):
                continue
            mean = _evaluate(mean_row, r)
            for k in range(3):
                kick = _evaluate(kick_rows[k], r) - mean * r[k]
                updated[k] = updated[k] + kick * dw
        return clip_to_ball(np.stack(updated))

    def rk4_step(self, r: np.ndarray, dt: float) -> np.ndarray:
        """Classical fourth-order Runge-Kutta step of the deterministic drift."""
        k1 = self.drift_field(r)
        k2 = self.drift_field(r + 0.5 * dt * k1)
        k3 = self.drift_field(r + 0.5 * dt * k2)
        k4 = self.drift_field(r + dt * k3)
        return clip_to_ball(r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def clip_to_ball(r: np.ndarray) -> np.ndarray:
    """Scale Bloch vectors with norm above 1 back onto the unit sphere."""
    norm_sq = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    outside = norm_sq > 1.0
    if not np.any(outside):
        return r
    factor = np.where(outside, 1.0 / np.sqrt(np.where(outside, norm_sq, 1.0)), 1.0)
    return r * factor


def compile_dynamics(
    channels: ChannelSet,
    omega: float,
    stochastic: Literal["monitored", "all", "none"] = "monitored",
) -> BlochDynamics:
    """Compile drive, dissipators and backaction into affine Bloch maps.

    Args:
        channels: Every channel contributes its dissipator to the drift.
        omega: Angular Rabi frequency in rad/us.
        stochastic: Which channels get a Wiener increment: the monitored
            ones (filtering), all of them (omniscient unraveling) or none.

    Returns:
        The compiled dynamics; ``labels`` lists the stochastic channels in
        channel order.
    """

    def drift_bloch(state: QubitState) -> tuple[float, float, float]:
        return bloch_of(lindblad_rhs(omega, channels, state))

    drift_matrix, drift_offset = _affine_from(drift_bloch)
    drift_scale = float(np.max(np.abs(drift_matrix), initial=0.0))

    if stochastic == "all":
        selected = channels.channels
    elif stochastic == "monitored":
        selected = channels.monitored()
    elif stochastic == "none":
        selected = ()
    else:
        raise ValueError(
            f"stochastic must be monitored, all or none, got {stochastic!r}"
        )

    means = []
    kicks = []
    for channel in selected:
        op = channel.jump_operator

        def mean_of(state: QubitState, op: np.ndarray = op) -> float:
            return measurement_mean(op, state)

        def kick_of(
            state: QubitState, op: np.ndarray = op
        ) -> tuple[float, float, float]:
            # L rho + rho L^dagger recovered from the backaction and its mean.
            mean = measurement_mean(op, state)
            full = backaction(op, state) + mean * state.to_matrix()
            return bloch_of(full)

        mean_matrix, mean_offset = _affine_from(lambda s: [mean_of(s)])
        kick_matrix, kick_offset = _affine_from(kick_of)
        scale = float(
            max(
                np.max(np.abs(mean_matrix)),
                np.max(np.abs(kick_matrix)),
                abs(mean_offset[0]),
            )
        )
        means.append(_compile_rows(mean_matrix, mean_offset, scale)[0])
        kicks.append(_compile_rows(kick_matrix, kick_offset, scale))

    return BlochDynamics(
        omega=omega,
        drift=_compile_rows(drift_matrix, drift_offset, drift_scale),
        labels=tuple(channel.label for channel in selected),
        means=tuple(means),
        kicks=tuple(kicks),
    )


def _column(state: QubitState) -> np.ndarray:
    return np.array(state.bloch, dtype=float).reshape(3, 1)


def _state_of(column: np.ndarray) -> QubitState:
    x, y, z = (float(value) for value in np.ravel(column))
    return QubitState.from_bloch(x, y, z)


def _check_step(dt: float, params: PhysicsParams) -> None:
    if dt < 0 or not math.isfinite(dt):
        raise ValueError(f"dt must be a finite value >= 0, got {dt!r}")
    if dt > params.dt_int * (1.0 + 1e-12):
        raise ValueError(f"dt ({dt}) must not exceed dt_int ({params.dt_int})")


def lindblad_step(state: QubitState, params: PhysicsParams, dt: float) -> QubitState:
    """Advance the unmonitored master equation by ``dt`` with one RK4 step."""
    _check_step(dt, params)
    if dt == 0:
        return state
    dynamics = compile_dynamics(build_channels(params, "none"), params.omega, "none")
    return _state_of(dynamics.rk4_step(_column(state), dt))


def sme_step(
    state: QubitState,
    channels: ChannelSet,
    omega: float,
    dt: float,
    noise: Sequence[float],
) -> QubitState:
    """One Euler-Maruyama step of the stochastic master equation.

    Args:
        state: Current state.
        channels: Channel decomposition; monitored channels receive noise.
        omega: Angular Rabi frequency in rad/us.
        dt: Step length in us.
        noise: One Wiener increment per monitored channel, in channel order.
    """
    increments = np.asarray(noise, dtype=float)
    if not np.all(np.isfinite(increments)):
        raise SimulationError("non-finite Wiener increment", bin_index=0, indices=(0,))
    dynamics = compile_dynamics(channels, omega, "monitored")
    if increments.shape != (len(dynamics.labels),):
        raise ValueError(
            f"expected {len(dynamics.labels)} Wiener increments "
            f"for channels {dynamics.labels}, got {increments.shape}"
        )
    column = _column(state)
    updated = dynamics.euler_step(column, dt, [np.array([dw]) for dw in increments])
    return _state_of(updated)


def master_equation_path(params: PhysicsParams) -> np.ndarray:
    """Master-equation Bloch vectors at every integrator sub-step.

    Returns:
        Array of shape ``(n_bins * substeps + 1, 3)``.
    """
    dynamics = compile_dynamics(build_channels(params, "none"), params.omega, "none")
    steps = params.n_bins * params.substeps
    path = np.empty((steps + 1, 3))
    r = _column(params.initial_state)
    path[0] = r[:, 0]
    for step in range(steps):
        r = dynamics.rk4_step(r, params.dt_int)
        path[step + 1] = r[:, 0]
    return path


def solve_master_equation(params: PhysicsParams) -> Trajectory:
    """Deterministic (unmonitored) evolution sampled at every record-bin boundary."""
    path = master_equation_path(params)
    return Trajectory(
        times=params.bin_times(), bloch=path[:: params.substeps], subset="none"
    )


def rabi_regime(params: PhysicsParams) -> Literal["underdamped", "overdamped"]:
    """Classify Rabi oscillations from the x-z block of the Bloch generator.

    The eigenvalues -(gamma2 + gamma1)/2 +- sqrt(((gamma2 - gamma1)/2)^2 - Omega^2)
    are complex when Omega exceeds |gamma2 - gamma1| / 2.
    """
    half_gap = (params.gamma2 - params.gamma1) / 2.0
    return "underdamped" if params.omega**2 > half_gap**2 else "overdamped"


@dataclass(frozen=True)
class FilterOutput:
    """Filtered trajectories and the per-bin innovations that drove them.

    ``innovations`` has shape ``(N, n_bins, 3)`` in record-column order; each
    entry is the bin's summed innovation divided by sqrt(dt_record), so it is
    a standard normal for a correctly specified filter. Columns outside the
    subset are NaN.
    """

    trajectories: TrajectoryBatch
    innovations: np.ndarray


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of stacked 2x2 matrices laid out as ``(2, 2, N)``, entry by entry."""
    return np.stack(
        [
            np.stack([a[i, 0] * b[0, k] + a[i, 1] * b[1, k] for k in range(2)])
            for i in range(2)
        ]
    )


def _adjoint(a: np.ndarray) -> np.ndarray:
    return np.conj(a.transpose(1, 0, 2))


def _density_stack(r: np.ndarray) -> np.ndarray:
    x, y, z = r
    coherence = 0.5 * (x + 1j * y)
    return np.stack(
        [
            np.stack([0.5 * (1.0 - z) + 0j, coherence]),
            np.stack([np.conj(coherence), 0.5 * (1.0 + z) + 0j]),
        ]
    )


def _bloch_stack(rho: np.ndarray) -> np.ndarray:
    return np.stack(
        [
            np.real(rho[0, 1] + rho[1, 0]),
            np.imag(rho[0, 1] - rho[1, 0]),
            np.real(rho[1, 1] - rho[0, 0]),
        ]
    )


def _stacked(operator: np.ndarray) -> np.ndarray:
    return np.asarray(operator, dtype=complex)[:, :, np.newaxis]


class RecordFilter:
    """Filter that turns record bins into conditional-state updates.

    Each sub-step of length h applies the Kraus map

        M = I + K h + sum_k L_k dy_k + 1/2 sum_kl L_k L_l (dy_k dy_l - delta_kl h),
        rho -> M rho M^dagger + sum_(unmonitored) L rho L^dagger h,

    with K = i (Omega/2) sigma_y - 1/2 sum L^dagger L over every channel, and
    renormalizes. A bin only reveals its mean record Y_k, so every sub-step
    uses dy_k = Y_k h. Without in-bin dynamics the product of the sub-step
    maps agrees with the same map applied once with h = dt_record up to
    third-order terms, so the amount of conditioning does not depend on the
    number of sub-steps.
    """

    def __init__(self, params: PhysicsParams, subset: str, lump: bool = False) -> None:
        validate_subset(subset)
        self.params = params
        self.subset = subset
        channels = build_channels(params, subset)
        monitored = channels.monitored()
        self.labels = tuple(channel.label for channel in monitored)
        self.columns = tuple(RECORD_COLUMNS[label] for label in self.labels)
        if lump:
            self.steps, self.step_dt = 1, params.dt_record
        else:
            self.steps, self.step_dt = params.substeps, params.dt_int
        self._norm = 1.0 / math.sqrt(params.dt_record)

        h = self.step_dt
        ops = [
            np.asarray(channel.jump_operator, dtype=complex) for channel in monitored
        ]
        decay = sum(
            (dagger(c.jump_operator) @ c.jump_operator for c in channels.channels),
            np.zeros((2, 2)),
        )
        base = IDENTITY + (1j * (params.omega / 2.0) * SIGMA_Y - 0.5 * decay) * h
        for op in ops:
            base = base - 0.5 * h * (op @ op)

        self._base = _stacked(base)
        self._linear = tuple(_stacked(op * h) for op in ops)
        self._quadratic = tuple(
            (k, j, _stacked(0.5 * h * h * (ops[k] @ ops[j])))
            for k in range(len(ops))
            for j in range(len(ops))
            if np.any(ops[k] @ ops[j])
        )
        self._observables = tuple(op + dagger(op) for op in ops)
        self._jumps = tuple(
            _stacked(c.jump_operator)
            for c in channels.channels
            if not c.monitored and np.any(c.jump_operator)
        )

    def initial(self, count: int) -> np.ndarray:
        return np.repeat(_column(self.params.initial_state), count, axis=1)

    def _expectation(self, channel: int, rho: np.ndarray) -> np.ndarray:
        o = self._observables[channel]
        return np.real(
            o[0, 0] * rho[0, 0]
            + o[0, 1] * rho[1, 0]
            + o[1, 0] * rho[0, 1]
            + o[1, 1] * rho[1, 1]
        )

    def _kraus_step(self, rho: np.ndarray, rates: Sequence[np.ndarray]) -> np.ndarray:
        kraus = self._base
        for linear, rate in zip(self._linear, rates):
            kraus = kraus + linear * rate
        for k, j, quadratic in self._quadratic:
            kraus = kraus + quadratic * (rates[k] * rates[j])
        updated = _matmul(_matmul(kraus, rho), _adjoint(kraus))
        for op in self._jumps:
            updated = updated + self.step_dt * _matmul(_matmul(op, rho), _adjoint(op))
        return updated / np.real(updated[0, 0] + updated[1, 1])

    def step_bin(
        self, r: np.ndarray, samples: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Apply one record bin.

        Args:
            r: Bloch vectors, shape ``(3, N)``.
            samples: The bin's record samples, shape ``(N, 3)``.

        Returns:
            The updated Bloch vectors and the normalized innovations ``(N, 3)``.
        """
        h = self.step_dt
        count = r.shape[1]
        rates = [samples[:, column] for column in self.columns]
        totals = [np.zeros(count) for _ in self.columns]
        rho = _density_stack(r)
        for _ in range(self.steps):
            for channel in range(len(self.columns)):
                residual = rates[channel] - self._expectation(channel, rho)
                totals[channel] = totals[channel] + residual * h
            rho = self._kraus_step(rho, rates)
        innovations = np.full((count, 3), np.nan)
        for channel, column in enumerate(self.columns):
            innovations[:, column] = totals[channel] * self._norm
        return clip_to_ball(_bloch_stack(rho)), innovations


def _raise_if_non_finite(
    r: np.ndarray, bin_index: int, indices: Sequence[int], what: str
) -> None:
    finite = np.all(np.isfinite(r), axis=0)
    if not np.all(finite):
        bad = [indices[i] for i in np.flatnonzero(~finite)]
        raise SimulationError(
            f"non-finite {what} state at record bin {bin_index} for trajectories {bad}",
            bin_index=bin_index,
            indices=bad,
        )


def _check_records(records: RecordBatch, params: PhysicsParams) -> None:
    if abs(records.dt_record - params.dt_record) > 1e-12:
        raise ValueError(
            f"record dt_record {records.dt_record} does not match "
            f"params {params.dt_record}"
        )
    if records.n_bins != params.n_bins:
        raise ValueError(
            f"records hold {records.n_bins} bins, params expect {params.n_bins}"
        )
    if not np.all(np.isfinite(records.samples)):
        rows = np.flatnonzero(~np.all(np.isfinite(records.samples), axis=(1, 2)))
        raise ValueError(
            "non-finite record samples for trajectories "
            f"{[records.indices[i] for i in rows]}"
        )


def reconstruct_batch(
    records: RecordBatch,
    params: PhysicsParams,
    subset: str = "uvw",
    *,
    lump: bool = False,
) -> FilterOutput:
    """Reconstruct trajectories from records, conditioning on ``subset`` only."""
    _check_records(records, params)
    record_filter = RecordFilter(params, subset, lump=lump)
    count = len(records)
    bloch = np.empty((count, params.n_bins + 1, 3))
    innovations = np.empty((count, params.n_bins, 3))
    r = record_filter.initial(count)
    bloch[:, 0, :] = r.T
    for b in range(params.n_bins):
        r, innovations[:, b, :] = record_filter.step_bin(r, records.samples[:, b, :])
        _raise_if_non_finite(r, b, records.indices, "filter")
        bloch[:, b + 1, :] = r.T
    trajectories = TrajectoryBatch(
        times=params.bin_times(), bloch=bloch, subset=subset, indices=records.indices
    )
    return FilterOutput(trajectories=trajectories, innovations=innovations)


def reconstruct(
    records: RecordSet,
    params: PhysicsParams,
    subset: str = "uvw",
    *,
    lump: bool = False,
) -> Trajectory:
    """Reconstruct one trajectory from its records."""
    batch = RecordBatch(
        samples=records.samples()[np.newaxis],
        dt_record=records.dt_record,
        indices=(records.trajectory_seed,),
        config_id=records.config_id,
    )
    output = reconstruct_batch(batch, params, subset, lump=lump)
    return output.trajectories.trajectory(0)


@dataclass(frozen=True)
class GeneratedBatch:
    """Output of the omniscient generator for a batch of trajectory indices."""

    omniscient: TrajectoryBatch
    records: RecordBatch
    filtered: FilterOutput | None = None


@dataclass(frozen=True)
class GeneratedRealization:
    omniscient: Trajectory
    records: RecordSet
    filtered: Trajectory | None = None


def generate_batch(
    params: PhysicsParams,
    indices: Sequence[int],
    master_seed: int,
    *,
    channels: ChannelSet | None = None,
    filter_params: PhysicsParams | None = None,
    filter_subset: str | None = "uvw",
    lump: bool = False,
    phi_unraveling: PhiUnraveling = "diffusive",
    config_id: str = "",
) -> GeneratedBatch:
    """Generate omniscient trajectories and their u, v, w records.

    Every channel, loss branches included, is unraveled with its own Wiener
    increment; the monitored branches' increments produce the exported
    records. When ``filter_subset`` is given, a filter runs alongside and
    processes each record bin as soon as it is complete.

    Args:
        params: Physical parameters of the generator.
        indices: Trajectory indices; each selects its own random stream.
        master_seed: Seed shared by the whole ensemble.
        channels: Channel set to unravel; defaults to the ``uvw`` decomposition.
        filter_params: Parameters assumed by the co-run filter (defaults to
            ``params``).
        filter_subset: Detectors the co-run filter conditions on, or None.
        lump: Apply each bin's innovation in one step instead of sub-steps.
        phi_unraveling: ``diffusive`` or ``jump`` for the unread dephasing branch.
        config_id: Label stored on the records.
    """
    if phi_unraveling not in PHI_UNRAVELINGS:
        raise ValueError(
            f"phi_unraveling must be one of {PHI_UNRAVELINGS}, got {phi_unraveling!r}"
        )
    indices = tuple(int(i) for i in indices)
    if not indices:
        raise ValueError("at least one trajectory index is required")
    channels = channels if channels is not None else build_channels(params, "uvw")
    full = channels.unravel_all()

    jump_threshold = None
    if phi_unraveling == "jump":
        # sigma_z jumps occur at <L^dagger L> = Tr(L^dagger L) / 2 in every state.
        phi_rate = full.by_label("phi").rate / 2.0
        full = ChannelSet(
            channels=tuple(c for c in full.channels if c.label != "phi"),
            record_columns=dict(full.record_columns),
            subset=full.subset,
        )
        if phi_rate > 0:
            jump_threshold = float(ndtri(min(phi_rate * params.dt_int, 1.0)))

    dynamics = compile_dynamics(full, params.omega, "all")
    noise_columns = [CHANNEL_ORDER.index(label) for label in dynamics.labels]
    record_slots = [
        (dynamics.labels.index(label), column)
        for label, column in RECORD_COLUMNS.items()
    ]
    phi_column = CHANNEL_ORDER.index("phi")

    count = len(indices)
    n_bins, substeps, h = params.n_bins, params.substeps, params.dt_int
    sqrt_h = math.sqrt(h)
    noise = NoiseSource(
        master_seed,
        indices,
        width=len(CHANNEL_ORDER),
        block_steps=noise_block_steps(substeps),
        total_steps=n_bins * substeps,
    )

    record_filter = None
    if filter_subset is not None:
        record_filter = RecordFilter(filter_params or params, filter_subset, lump=lump)
        filter_r = record_filter.initial(count)
        filter_bloch = np.empty((count, n_bins + 1, 3))
        filter_bloch[:, 0, :] = filter_r.T
        innovations = np.empty((count, n_bins, 3))

    samples = np.empty((count, n_bins, 3))
    omniscient = np.empty((count, n_bins + 1, 3))
    r = np.repeat(_column(params.initial_state), count, axis=1)
    omniscient[:, 0, :] = r.T

    for b in range(n_bins):
        sums = [np.zeros(count) for _ in record_slots]
        for _ in range(substeps):
            draws = noise.next_step()
            increments = [draws[column] * sqrt_h for column in noise_columns]
            for slot, (channel, _column_index) in enumerate(record_slots):
                mean = dynamics.record_mean(channel, r)
                sums[slot] = sums[slot] + (mean * h + increments[channel])
            r = dynamics.euler_step(r, h, increments)
            if jump_threshold is not None:
                flip = draws[phi_column] < jump_threshold
                if np.any(flip):
                    sign = np.where(flip, -1.0, 1.0)
                    r = np.stack([r[0] * sign, r[1] * sign, r[2]])
        _raise_if_non_finite(r, b, indices, "omniscient")
        omniscient[:, b + 1, :] = r.T
        for slot, (_channel, column) in enumerate(record_slots):
            samples[:, b, column] = sums[slot] / params.dt_record
        if record_filter is not None:
            filter_r, innovations[:, b, :] = record_filter.step_bin(
                filter_r, samples[:, b, :]
            )
            _raise_if_non_finite(filter_r, b, indices, "filter")
            filter_bloch[:, b + 1, :] = filter_r.T

    times = params.bin_times()
    records = RecordBatch(
        samples=samples,
        dt_record=params.dt_record,
        indices=indices,
        config_id=config_id,
    )
    filtered = None
    if record_filter is not None:
        filtered = FilterOutput(
            trajectories=TrajectoryBatch(
                times=times,
                bloch=filter_bloch,
                subset=record_filter.subset,
                indices=indices,
            ),
            innovations=innovations,
        )
    logger.debug("Generated %d trajectories over %d bins", count, n_bins)
    return GeneratedBatch(
        omniscient=TrajectoryBatch(
            times=times, bloch=omniscient, subset="omniscient", indices=indices
        ),
        records=records,
        filtered=filtered,
    )


def generate(
    params: PhysicsParams,
    seed: int,
    *,
    index: int = 0,
    channels: ChannelSet | None = None,
    filter_subset: str | None = "uvw",
    lump: bool = False,
    phi_unraveling: PhiUnraveling = "diffusive",
    config_id: str = "",
) -> GeneratedRealization:
    """Generate one realization: omniscient trajectory, records and co-run filter."""
    batch = generate_batch(
        params,
        (index,),
        seed,
        channels=channels,
        filter_subset=filter_subset,
        lump=lump,
        phi_unraveling=phi_unraveling,
        config_id=config_id,
    )
    filtered = None
    if batch.filtered is not None:
        filtered = batch.filtered.trajectories.trajectory(0)
    return GeneratedRealization(
        omniscient=batch.omniscient.trajectory(0),
        records=batch.records.record_set(0),
        filtered=filtered,
    )
