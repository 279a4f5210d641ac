"""
Data models for Qubit Trajectories.

Immutable value types for qubit states, physical parameters, decoherence
channels, measurement records and reconstructed trajectories.

Conventions: basis order (g, e), sigma_z = |e><e| - |g><g| (the ground state
sits at z = -1), sigma_- = |g><e|. Times are in microseconds, rates in inverse
microseconds and record samples in inverse square-root microseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

Subset = Literal["uvw", "uv", "w", "none"]
ChannelLabel = Literal["u", "v", "w", "phi", "u_loss", "v_loss", "w_loss"]

SUBSETS: tuple[str, ...] = ("uvw", "uv", "w", "none")
RECORD_LABELS: tuple[str, ...] = ("u", "v", "w")

# Tolerances for the state invariants.
TRACE_TOLERANCE = 1e-9
NORM_TOLERANCE = 1e-9


def _frozen_array(values: object, dtype: type = float) -> np.ndarray:
    """Return a read-only copy of ``values`` as an ndarray."""
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def validate_subset(subset: str) -> str:
    """Validate a detector selection name."""
    if subset not in SUBSETS:
        raise ValueError(f"subset must be one of {SUBSETS}, got {subset!r}")
    return subset


@dataclass(frozen=True)
class QubitState:
    """Density matrix of a qubit stored as its independent entries.

    Only ``rho_ge`` is stored for the coherence; ``rho_eg`` is its conjugate,
    so the state is Hermitian by construction.
    """

    rho_gg: float
    rho_ee: float
    rho_ge: complex

    def __post_init__(self) -> None:
        trace = self.rho_gg + self.rho_ee
        if not math.isfinite(trace) or abs(trace - 1.0) > TRACE_TOLERANCE:
            raise ValueError(f"QubitState trace must be 1, got {trace!r}")
        x, y, z = self.bloch
        norm_sq = x * x + y * y + z * z
        if norm_sq > (1.0 + NORM_TOLERANCE) ** 2:
            raise ValueError(
                f"QubitState Bloch norm must be at most 1, got {math.sqrt(norm_sq)!r}"
            )

    @property
    def rho_eg(self) -> complex:
        return complex(self.rho_ge).conjugate()

    @property
    def bloch(self) -> tuple[float, float, float]:
        """Bloch coordinates (x, y, z)."""
        coherence = complex(self.rho_ge)
        return (
            2.0 * coherence.real,
            2.0 * coherence.imag,
            float(self.rho_ee - self.rho_gg),
        )

    def to_matrix(self) -> np.ndarray:
        """Return the full 2x2 density matrix in the (g, e) basis."""
        return np.array(
            [[self.rho_gg, self.rho_ge], [self.rho_eg, self.rho_ee]],
            dtype=complex,
        )

    @classmethod
    def from_bloch(cls, x: float, y: float, z: float) -> QubitState:
        """Build the state (1 + x sigma_x + y sigma_y + z sigma_z) / 2."""
        return cls(
            rho_gg=(1.0 - z) / 2.0,
            rho_ee=(1.0 + z) / 2.0,
            rho_ge=complex(x, y) / 2.0,
        )

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> QubitState:
        """Build a state from a 2x2 matrix, Hermitizing and renormalizing it.

        The Bloch vector is scaled back onto the unit ball when round-off has
        pushed it outside.
        """
        m = np.asarray(matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"density matrix must be 2x2, got shape {m.shape}")
        m = 0.5 * (m + m.conj().T)
        trace = float(np.real(m[0, 0] + m[1, 1]))
        if not math.isfinite(trace) or trace <= 0.0:
            raise ValueError(f"density matrix trace must be positive, got {trace!r}")
        m = m / trace
        x = 2.0 * float(np.real(m[0, 1]))
        y = 2.0 * float(np.imag(m[0, 1]))
        z = float(np.real(m[1, 1] - m[0, 0]))
        norm = math.sqrt(x * x + y * y + z * z)
        if norm > 1.0:
            x, y, z = x / norm, y / norm, z / norm
        return cls.from_bloch(x, y, z)

    @classmethod
    def ground(cls) -> QubitState:
        return cls(rho_gg=1.0, rho_ee=0.0, rho_ge=0j)

    @classmethod
    def excited(cls) -> QubitState:
        return cls(rho_gg=0.0, rho_ee=1.0, rho_ge=0j)


# Named pure initial states accepted by the configuration layer.
NAMED_STATES: dict[str, tuple[float, float, float]] = {
    "g": (0.0, 0.0, -1.0),
    "e": (0.0, 0.0, 1.0),
    "+x": (1.0, 0.0, 0.0),
    "-x": (-1.0, 0.0, 0.0),
    "+y": (0.0, 1.0, 0.0),
    "-y": (0.0, -1.0, 0.0),
}


def named_state(name: str) -> QubitState:
    """Return one of the named pure states (g, e, +x, -x, +y, -y)."""
    try:
        return QubitState.from_bloch(*NAMED_STATES[name])
    except KeyError:
        raise ValueError(
            f"initial_state must be one of {sorted(NAMED_STATES)}, got {name!r}"
        ) from None


DEFAULT_GAMMA1 = 1.0 / 15.0
# Pure dephasing inverted from the minimum total decoherence rate (11.2 us)^-1
# at zero measurement-induced dephasing.
DEFAULT_GAMMA_PHI = 1.0 / 11.2 - 1.0 / (2.0 * 15.0)


@dataclass(frozen=True)
class PhysicsParams:
    """Rates, drive, efficiencies and time steps; fully determines the dynamics.

    ``omega`` is the angular Rabi frequency in rad/us. Configuration files give
    the Rabi frequency as Omega/2pi; use :meth:`from_rabi` for that form.
    """

    gamma1: float = DEFAULT_GAMMA1
    gamma_d: float = 0.2
    gamma_phi: float = DEFAULT_GAMMA_PHI
    omega: float = 2.0 * math.pi * 0.5
    eta_f: float = 0.14
    eta_d: float = 0.34
    dt_record: float = 0.1
    dt_int: float = 0.1
    duration: float = 20.0
    initial_state: QubitState = field(default_factory=QubitState.ground)
    w_sign: float = 1.0

    def __post_init__(self) -> None:
        for name in ("gamma1", "gamma_d", "gamma_phi"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite rate >= 0, got {value!r}")
        if not math.isfinite(self.omega):
            raise ValueError(f"omega must be finite, got {self.omega!r}")
        for name in ("eta_f", "eta_d"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be between 0 and 1, got {value!r}")
        if self.w_sign not in (1.0, -1.0):
            raise ValueError(f"w_sign must be +1 or -1, got {self.w_sign!r}")
        if not self.dt_int > 0:
            raise ValueError(f"dt_int must be positive, got {self.dt_int!r}")
        if self.dt_int > self.dt_record * (1.0 + 1e-12):
            raise ValueError(
                f"dt_int ({self.dt_int}) must not exceed dt_record ({self.dt_record})"
            )
        ratio = self.dt_record / self.dt_int
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"dt_int ({self.dt_int}) must divide dt_record ({self.dt_record})"
            )
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration!r}")
        bins = self.duration / self.dt_record
        if abs(bins - round(bins)) * self.dt_record > 1e-9:
            raise ValueError(
                f"dt_record ({self.dt_record}) must divide duration ({self.duration})"
            )

    @classmethod
    def from_rabi(cls, rabi_per_us: float, **kwargs: object) -> PhysicsParams:
        """Build parameters from the Rabi frequency Omega/2pi in 1/us."""
        omega = 2.0 * math.pi * rabi_per_us
        return cls(omega=omega, **kwargs)  # type: ignore[arg-type]

    @property
    def rabi_per_us(self) -> float:
        """Rabi frequency Omega/2pi in 1/us."""
        return self.omega / (2.0 * math.pi)

    @property
    def gamma2(self) -> float:
        """Total decoherence rate gamma1/2 + gamma_phi + gamma_d."""
        return self.gamma1 / 2.0 + self.gamma_phi + self.gamma_d

    @property
    def n_bins(self) -> int:
        return int(round(self.duration / self.dt_record))

    @property
    def substeps(self) -> int:
        """Integrator sub-steps per record bin."""
        return int(round(self.dt_record / self.dt_int))

    def bin_times(self) -> np.ndarray:
        """Record-bin boundaries 0, dt_record, ..., duration (n_bins + 1 values)."""
        return np.arange(self.n_bins + 1, dtype=float) * self.dt_record

    def with_duration(self, duration: float) -> PhysicsParams:
        return replace(self, duration=duration)


@dataclass(frozen=True)
class Channel:
    """One decoherence channel with its rate folded into the jump operator."""

    label: ChannelLabel
    jump_operator: np.ndarray = field(compare=False, repr=False)
    monitored: bool = False
    record_scale: float = 0.0

    def __post_init__(self) -> None:
        operator = _frozen_array(self.jump_operator, complex)
        object.__setattr__(self, "jump_operator", operator)
        if self.jump_operator.shape != (2, 2):
            raise ValueError(
                f"jump operator for {self.label} must be 2x2, "
                f"got shape {self.jump_operator.shape}"
            )

    @property
    def rate(self) -> float:
        """Tr(L^dagger L): the channel's share of the physical decay rate."""
        op = self.jump_operator
        return float(np.real(np.trace(op.conj().T @ op)))


@dataclass(frozen=True)
class ChannelSet:
    """Ordered channels plus the mapping of monitored channels to record columns."""

    channels: tuple[Channel, ...]
    record_columns: dict[str, int] = field(default_factory=dict)
    subset: str = "uvw"

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(channel.label for channel in self.channels)

    def monitored(self) -> tuple[Channel, ...]:
        return tuple(channel for channel in self.channels if channel.monitored)

    def by_label(self, label: str) -> Channel:
        for channel in self.channels:
            if channel.label == label:
                return channel
        raise KeyError(f"no channel labelled {label!r}")

    def rate(self, *labels: str) -> float:
        """Summed Tr(L^dagger L) over the named channels."""
        return sum(self.by_label(label).rate for label in labels)

    def unravel_all(self) -> ChannelSet:
        """Copy with every channel, loss branches included, treated as monitored.

        Used by the omniscient generator; record columns are unchanged so only
        u, v and w are exported.
        """
        return ChannelSet(
            channels=tuple(
                replace(channel, monitored=True) for channel in self.channels
            ),
            record_columns=dict(self.record_columns),
            subset=self.subset,
        )


@dataclass(frozen=True)
class RecordSet:
    """Time-binned measurement samples u, v, w for one realization.

    Each sample is a bin average: ``sample * dt_record`` equals the record
    mean integrated over the bin plus the summed Wiener increment.
    """

    n_bins: int
    dt_record: float
    u: np.ndarray = field(compare=False, repr=False)
    v: np.ndarray = field(compare=False, repr=False)
    w: np.ndarray = field(compare=False, repr=False)
    config_id: str = ""
    trajectory_seed: int = 0

    def __post_init__(self) -> None:
        for name in RECORD_LABELS:
            column = _frozen_array(getattr(self, name))
            if column.shape != (self.n_bins,):
                raise ValueError(
                    f"record column {name} has length {column.size}, "
                    f"expected {self.n_bins}"
                )
            object.__setattr__(self, name, column)

    def samples(self) -> np.ndarray:
        """Samples as an (n_bins, 3) array with columns u, v, w."""
        return np.stack([self.u, self.v, self.w], axis=1)


@dataclass(frozen=True)
class RecordBatch:
    """Records of several realizations: ``samples`` has shape (N, n_bins, 3)."""

    samples: np.ndarray = field(repr=False)
    dt_record: float
    indices: tuple[int, ...]
    config_id: str = ""

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 3 or samples.shape[2] != 3:
            raise ValueError(
                f"record samples must have shape (N, n_bins, 3), got {samples.shape}"
            )
        if samples.shape[0] != len(self.indices):
            raise ValueError(
                f"{samples.shape[0]} record rows for {len(self.indices)} indices"
            )
        object.__setattr__(self, "samples", samples)

    @property
    def n_bins(self) -> int:
        return int(self.samples.shape[1])

    def __len__(self) -> int:
        return len(self.indices)

    def record_set(self, position: int) -> RecordSet:
        rows = self.samples[position]
        return RecordSet(
            n_bins=self.n_bins,
            dt_record=self.dt_record,
            u=rows[:, 0],
            v=rows[:, 1],
            w=rows[:, 2],
            config_id=self.config_id,
            trajectory_seed=self.indices[position],
        )

    @classmethod
    def from_record_sets(cls, records: list[RecordSet]) -> RecordBatch:
        if not records:
            raise ValueError("at least one record set is required")
        dt_values = {record.dt_record for record in records}
        if len(dt_values) != 1:
            raise ValueError(f"record sets disagree on dt_record: {sorted(dt_values)}")
        lengths = {record.n_bins for record in records}
        if len(lengths) != 1:
            raise ValueError(f"record sets disagree on n_bins: {sorted(lengths)}")
        return cls(
            samples=np.stack([record.samples() for record in records]),
            dt_record=records[0].dt_record,
            indices=tuple(record.trajectory_seed for record in records),
            config_id=records[0].config_id,
        )


@dataclass(frozen=True)
class Trajectory:
    """States at every record-bin boundary, t = 0 included."""

    times: np.ndarray = field(compare=False, repr=False)
    bloch: np.ndarray = field(compare=False, repr=False)
    subset: str = "uvw"

    def __post_init__(self) -> None:
        times = _frozen_array(self.times)
        bloch = _frozen_array(self.bloch)
        if bloch.shape != (times.size, 3):
            raise ValueError(
                f"bloch array must have shape ({times.size}, 3), got {bloch.shape}"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "bloch", bloch)

    @property
    def n_bins(self) -> int:
        return int(self.times.size - 1)

    @property
    def states(self) -> tuple[QubitState, ...]:
        return tuple(QubitState.from_bloch(*row) for row in self.bloch)

    def purity(self) -> np.ndarray:
        return (1.0 + np.sum(self.bloch**2, axis=1)) / 2.0


@dataclass(frozen=True)
class TrajectoryBatch:
    """Trajectories of several realizations: ``bloch`` has shape (N, n_bins + 1, 3)."""

    times: np.ndarray = field(repr=False)
    bloch: np.ndarray = field(repr=False)
    subset: str
    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)

    def trajectory(self, position: int) -> Trajectory:
        return Trajectory(
            times=self.times, bloch=self.bloch[position], subset=self.subset
        )

    def at_bin(self, index: int) -> np.ndarray:
        """Bloch vectors of every realization at bin boundary ``index``: (N, 3)."""
        return self.bloch[:, index, :]
