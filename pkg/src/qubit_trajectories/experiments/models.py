"""
Ensemble settings and result types for the experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd

from qubit_trajectories.models import PhysicsParams, validate_subset

OUTPUTS: frozenset[str] = frozenset(
    {"raw_average", "validation", "histograms", "purity_curve"}
)
AXES: tuple[str, ...] = ("x", "y", "z")
PLANES: dict[str, tuple[int, int]] = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
DEFAULT_CHUNK_SIZE = 1024


class InsufficientDataError(ValueError):
    """A statistic was requested on too few samples."""


def axis_index(axis: str) -> int:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    return AXES.index(axis)


def plane_axes(plane: str) -> tuple[int, int]:
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {sorted(PLANES)}, got {plane!r}")
    return PLANES[plane]


@dataclass(frozen=True)
class EnsembleSpec:
    """What to simulate and how to split it into work.

    ``filter_params`` lets the filter assume different parameters from the
    generator (efficiency sweeps, mis-specified controls).
    """

    params: PhysicsParams
    n_traj: int
    master_seed: int
    subset: str = "uvw"
    outputs: frozenset[str] = frozenset({"raw_average"})
    filter_params: PhysicsParams | None = None
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE
    lump: bool = False
    phi_unraveling: Literal["diffusive", "jump"] = "diffusive"
    config_id: str = ""

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be at least 1, got {self.n_traj}")
        if self.master_seed < 0:
            raise ValueError(f"master_seed must be >= 0, got {self.master_seed}")
        validate_subset(self.subset)
        object.__setattr__(self, "outputs", frozenset(self.outputs))
        if not self.outputs:
            raise ValueError("at least one output must be requested")
        unknown = sorted(self.outputs - OUTPUTS)
        if unknown:
            raise ValueError(f"Unsupported output: {unknown[0]}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be at least 1, got {self.chunk_size}")

    @property
    def assumed_params(self) -> PhysicsParams:
        return self.filter_params if self.filter_params is not None else self.params


@dataclass(frozen=True)
class RawAverageResult:
    """Rescaled per-bin record averages with standard errors and the ME reference.

    Columns whose record scale is zero are NaN and listed as absent.
    """

    times: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    reference: np.ndarray = field(repr=False)
    n_traj: int
    absent: tuple[str, ...] = ()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t_us": self.times,
                "u_tilde": self.means[:, 0],
                "v_tilde": self.means[:, 1],
                "w_tilde": self.means[:, 2],
                "se_u": self.stderr[:, 0],
                "se_v": self.stderr[:, 1],
                "se_w": self.stderr[:, 2],
                "x_me": self.reference[:, 0],
                "y_me": self.reference[:, 1],
                "z_me": self.reference[:, 2],
            }
        )

    def agreement(self, sigmas: float = 5.0) -> np.ndarray:
        """Fraction of bins within ``sigmas`` SE of the reference, per column."""
        deviation = np.abs(self.means - self.reference)
        within = deviation < sigmas * self.stderr
        return np.where(np.isnan(self.means[0]), np.nan, within.mean(axis=0))


@dataclass(frozen=True)
class ValidationFit:
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    bins_used: int


@dataclass(frozen=True)
class ValidationBins:
    """Mean projective outcome per bin of the filter coordinate at time T.

    Bins partition [-1, 1]; empty bins have count 0 and NaN statistics.
    """

    axis: str
    time_us: float
    bin_width: float
    centers: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    coordinate_means: np.ndarray = field(repr=False)
    min_count: int = 50
    fit: ValidationFit | None = None

    @property
    def eligible(self) -> np.ndarray:
        return (self.counts >= self.min_count) & (self.stderr > 0)

    def chi_square(self) -> float:
        """Sum over eligible bins of ((mean outcome - mean coordinate) / SE)^2."""
        mask = self.eligible
        residual = (self.means[mask] - self.coordinate_means[mask]) / self.stderr[mask]
        return float(np.sum(residual**2))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "axis": self.axis,
                "t_us": self.time_us,
                "center": self.centers,
                "count": self.counts,
                "mean_outcome": self.means,
                "se": self.stderr,
                "mean_coordinate": self.coordinate_means,
            }
        )


@dataclass(frozen=True)
class HistogramGrid:
    """2-D counts of states over one plane of [-1, 1]^2 at time ``tau_us``."""

    plane: str
    tau_us: float
    edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    @property
    def n_bins(self) -> int:
        return int(self.edges.size - 1)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        first, second = np.meshgrid(self.centers, self.centers, indexing="ij")
        return pd.DataFrame(
            {
                "plane": self.plane,
                "tau_us": self.tau_us,
                "x_center": first.ravel(),
                "y_center": second.ravel(),
                "count": self.counts.ravel().astype(np.int64),
            }
        )


@dataclass(frozen=True)
class StateDistribution:
    """Histograms at each requested time plus the ensemble-mean trajectory.

    ``states`` maps each histogram time to the ``(N, 3)`` filter states.
    """

    grids: tuple[HistogramGrid, ...]
    times: np.ndarray = field(repr=False)
    mean_bloch: np.ndarray = field(repr=False)
    states: dict[float, np.ndarray] = field(repr=False)
    subset: str = "uvw"
    overlay_trim: float = 0.0

    def grid(self, plane: str, tau_us: float) -> HistogramGrid:
        for grid in self.grids:
            if grid.plane == plane and abs(grid.tau_us - tau_us) < 1e-9:
                return grid
        raise KeyError(f"no histogram for plane {plane!r} at tau {tau_us}")

    def overlay(self, tau_us: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean trajectory for ``overlay_trim <= t <= tau``."""
        mask = (self.times >= self.overlay_trim - 1e-12) & (
            self.times <= tau_us + 1e-12
        )
        return self.times[mask], self.mean_bloch[mask]

    def overlay_frame(self) -> pd.DataFrame:
        """The overlay for every histogram time, stacked with a ``tau_us`` column."""
        frames = []
        for tau in self.states:
            times, bloch = self.overlay(tau)
            frames.append(
                pd.DataFrame(
                    {
                        "tau_us": tau,
                        "t_us": times,
                        "x_mean": bloch[:, 0],
                        "y_mean": bloch[:, 1],
                        "z_mean": bloch[:, 2],
                    }
                )
            )
        return pd.concat(frames, ignore_index=True)


@dataclass(frozen=True)
class AsymmetryResult:
    """Spread of y on either side of x = +-x0."""

    x0: float
    std_positive: float
    std_negative: float
    se_positive: float
    se_negative: float
    count_positive: int
    count_negative: int

    @property
    def ratio(self) -> float:
        """std(y | x < -x0) / std(y | x > x0); NaN when the positive spread is 0."""
        if self.std_positive == 0:
            return float("nan")
        return self.std_negative / self.std_positive

    @property
    def significance(self) -> float:
        """(std_negative - std_positive) in units of its standard error."""
        se = float(np.hypot(self.se_positive, self.se_negative))
        if se == 0:
            return 0.0
        return (self.std_negative - self.std_positive) / se


@dataclass(frozen=True)
class PoleMass:
    radius: float
    north: float
    south: float


@dataclass(frozen=True)
class PurityCurve:
    subset: str
    times: np.ndarray = field(repr=False)
    mean: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"t_us": self.times, "purity": self.mean, "se": self.stderr}
        )


@dataclass(frozen=True)
class SubsetPurity:
    """Per-trajectory purity at ``tau_us`` for each subset, from shared records."""

    tau_us: float
    purities: dict[str, np.ndarray] = field(repr=False)

    def mean(self, subset: str) -> float:
        return float(np.mean(self.purities[subset]))

    def stderr(self, subset: str) -> float:
        values = self.purities[subset]
        if values.size < 2:
            return float("nan")
        return float(np.std(values, ddof=1) / np.sqrt(values.size))

    def difference(self, better: str, worse: str) -> tuple[float, float]:
        """Paired mean difference and its standard error."""
        delta = self.purities[better] - self.purities[worse]
        if delta.size < 2:
            raise InsufficientDataError(
                "at least two trajectories are needed for a paired difference"
            )
        stderr = np.std(delta, ddof=1) / np.sqrt(delta.size)
        return float(np.mean(delta)), float(stderr)

    def to_frame(self) -> pd.DataFrame:
        subsets = list(self.purities)
        return pd.DataFrame(
            {
                "subset": subsets,
                "tau_us": self.tau_us,
                "purity": [self.mean(s) for s in subsets],
                "se": [self.stderr(s) for s in subsets],
            }
        )


@dataclass(frozen=True)
class SweepResult:
    """Outcome deviance over an (eta_f, eta_d) grid; lower is better."""

    eta_f: np.ndarray = field(repr=False)
    eta_d: np.ndarray = field(repr=False)
    scores: np.ndarray = field(repr=False)
    threshold: float

    @property
    def best(self) -> tuple[float, float]:
        i, j = np.unravel_index(int(np.nanargmin(self.scores)), self.scores.shape)
        return float(self.eta_f[i]), float(self.eta_d[j])

    @property
    def region(self) -> np.ndarray:
        """Grid points inside the 1-sigma contour."""
        return self.scores <= np.nanmin(self.scores) + self.threshold

    def contains(self, eta_f: float, eta_d: float) -> bool:
        i = int(np.argmin(np.abs(self.eta_f - eta_f)))
        j = int(np.argmin(np.abs(self.eta_d - eta_d)))
        return bool(self.region[i, j])

    def to_frame(self) -> pd.DataFrame:
        f, d = np.meshgrid(self.eta_f, self.eta_d, indexing="ij")
        return pd.DataFrame(
            {
                "eta_f": f.ravel(),
                "eta_d": d.ravel(),
                "deviance": self.scores.ravel(),
                "in_region": self.region.ravel(),
            }
        )


@dataclass(frozen=True)
class WhitenessResult:
    """Innovation statistics per record column (NaN for columns not conditioned on)."""

    mean: np.ndarray
    stderr: np.ndarray
    lag1: np.ndarray
    count: int


@dataclass(frozen=True)
class ConvergenceResult:
    dt_ints: tuple[float, ...]
    deficits: np.ndarray
    stderr: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        """Deficit at each step size over the deficit at the next (smaller) one."""
        return self.deficits[:-1] / self.deficits[1:]


@dataclass(frozen=True)
class UnravelingComparison:
    statistic: float
    pvalue: float
    samples: int
    time_us: float
