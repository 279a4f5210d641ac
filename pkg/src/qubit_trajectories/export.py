"""
Result files and run manifests.

Tables are written as CSV (UTF-8, header row, one row per time bin or
histogram cell) or NDJSON (one JSON object per line). Record samples can also
be written as QTRJ binary: a 32-byte little-endian header followed by float64
samples in [trajectory][bin][column] order. Every file is written to a
temporary name and moved into place, so a file either exists complete or not
at all.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import struct
import sys
import tempfile
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from qubit_trajectories.models import RecordBatch, TrajectoryBatch

FORMATS: tuple[str, ...] = ("csv", "ndjson", "bin")

BINARY_MAGIC = b"QTRJ"
BINARY_VERSION = 1
# magic, version, n_traj, n_bins, dt_record_us
BINARY_HEADER = struct.Struct("<4sIQQd")
RECORD_COLUMNS = ("u", "v", "w")

MANIFEST_NAME = "manifest.ndjson"


class ExportError(ValueError):
    """Unsupported export format or malformed input file."""


def validate_formats(formats: Iterable[str]) -> tuple[str, ...]:
    formats = tuple(formats)
    for name in formats:
        if name not in FORMATS:
            raise ExportError(
                f"Unsupported export format: {name!r} "
                f"(expected one of {', '.join(FORMATS)})"
            )
    return formats


def _atomic_write(path: Path, write: Any, mode: str = "w") -> Path:
    """Write through ``write(handle)`` into a temporary file, then rename it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    encoding = None if "b" in mode else "utf-8"
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        newline = "" if encoding else None
        with os.fdopen(fd, mode, encoding=encoding, newline=newline) as handle:
            write(handle)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    return _atomic_write(
        path, lambda handle: frame.to_csv(handle, index=False, lineterminator="\n")
    )


def _json_value(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_ndjson(rows: Iterable[Mapping[str, Any]], path: Path) -> Path:
    """One JSON object per line; NaN becomes null."""

    def write(handle: Any) -> None:
        for row in rows:
            clean = {key: _json_value(value) for key, value in row.items()}
            handle.write(json.dumps(clean, ensure_ascii=False, separators=(",", ":")))
            handle.write("\n")

    return _atomic_write(path, write)


def write_table(
    frame: pd.DataFrame, out_dir: Path, name: str, formats: Iterable[str]
) -> list[Path]:
    """Write ``frame`` as ``<name>.csv`` and/or ``<name>.ndjson``.

    ``bin`` is ignored for tables.
    """
    written = []
    for fmt in validate_formats(formats):
        if fmt == "csv":
            written.append(write_csv(frame, out_dir / f"{name}.csv"))
        elif fmt == "ndjson":
            rows = frame.to_dict(orient="records")
            written.append(write_ndjson(rows, out_dir / f"{name}.ndjson"))
    return written


def records_frame(records: RecordBatch) -> pd.DataFrame:
    """Records as a table: ``t_us, u, v, w``.

    A leading ``trajectory`` column is added when there are several.
    """
    count, n_bins = len(records), records.n_bins
    starts = np.arange(n_bins) * records.dt_record
    columns: dict[str, Any] = {}
    if count > 1:
        indices = np.array(records.indices, dtype=np.int64)
        columns["trajectory"] = np.repeat(indices, n_bins)
    columns["t_us"] = np.tile(starts, count)
    for k, label in enumerate(RECORD_COLUMNS):
        columns[label] = records.samples[:, :, k].ravel()
    return pd.DataFrame(columns)


def trajectories_frame(trajectories: TrajectoryBatch) -> pd.DataFrame:
    """Bloch coordinates at every bin boundary, with ``trajectory`` when several."""
    count = len(trajectories)
    points = trajectories.times.size
    columns: dict[str, Any] = {}
    if count > 1:
        indices = np.array(trajectories.indices, dtype=np.int64)
        columns["trajectory"] = np.repeat(indices, points)
    columns["t_us"] = np.tile(trajectories.times, count)
    for k, label in enumerate(("x", "y", "z")):
        columns[label] = trajectories.bloch[:, :, k].ravel()
    return pd.DataFrame(columns)


def write_records(
    records: RecordBatch,
    out_dir: Path,
    formats: Iterable[str],
    name: str = "records",
) -> list[Path]:
    """Write records in every requested format, including QTRJ binary."""
    formats = validate_formats(formats)
    written = write_table(records_frame(records), out_dir, name, formats)
    if "bin" in formats:
        written.append(write_records_binary(records, out_dir / f"{name}.qtrj"))
    return written


def write_records_binary(records: RecordBatch, path: Path) -> Path:
    header = BINARY_HEADER.pack(
        BINARY_MAGIC,
        BINARY_VERSION,
        len(records),
        records.n_bins,
        records.dt_record,
    )
    payload = np.ascontiguousarray(records.samples, dtype="<f8").tobytes(order="C")

    def write(handle: Any) -> None:
        handle.write(header)
        handle.write(payload)

    return _atomic_write(path, write, mode="wb")


def read_records_binary(path: str | Path) -> RecordBatch:
    """Read a QTRJ file back into a :class:`RecordBatch` (indices 0..N-1)."""
    data = Path(path).read_bytes()
    if len(data) < BINARY_HEADER.size:
        raise ExportError(
            f"{path}: file shorter than the {BINARY_HEADER.size}-byte header"
        )
    magic, version, n_traj, n_bins, dt_record = BINARY_HEADER.unpack_from(data)
    if magic != BINARY_MAGIC:
        raise ExportError(f"{path}: bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise ExportError(f"{path}: unsupported QTRJ version {version}")
    expected = BINARY_HEADER.size + n_traj * n_bins * len(RECORD_COLUMNS) * 8
    if len(data) != expected:
        raise ExportError(
            f"{path}: expected {expected} bytes for {n_traj}x{n_bins} samples, "
            f"found {len(data)}"
        )
    samples = np.frombuffer(data, dtype="<f8", offset=BINARY_HEADER.size)
    return RecordBatch(
        samples=samples.reshape(n_traj, n_bins, 3).astype(float),
        dt_record=dt_record,
        indices=tuple(range(n_traj)),
    )


def read_records_csv(path: str | Path, dt_record: float | None = None) -> RecordBatch:
    """Read records written by :func:`records_frame`.

    ``dt_record`` is inferred from the ``t_us`` spacing unless given; files
    with a single bin need it.
    """
    frame = pd.read_csv(path)
    missing = [
        column for column in ("t_us", *RECORD_COLUMNS) if column not in frame.columns
    ]
    if missing:
        raise ExportError(f"{path}: missing columns {', '.join(missing)}")
    if "trajectory" not in frame.columns:
        frame.insert(0, "trajectory", 0)
    indices = tuple(int(i) for i in dict.fromkeys(frame["trajectory"].tolist()))
    counts = frame.groupby("trajectory", sort=False).size()
    if counts.nunique() != 1:
        raise ExportError(f"{path}: trajectories have different numbers of bins")
    n_bins = int(counts.iloc[0])
    if dt_record is None:
        starts = frame["t_us"].to_numpy()[:n_bins]
        if n_bins < 2:
            raise ExportError(f"{path}: cannot infer dt_record from a single bin")
        dt_record = float(f"{(starts[-1] - starts[0]) / (n_bins - 1):.12g}")
    samples = frame[list(RECORD_COLUMNS)].to_numpy(dtype=float)
    return RecordBatch(
        samples=samples.reshape(len(indices), n_bins, 3),
        dt_record=dt_record,
        indices=indices,
    )


def read_records(path: str | Path, dt_record: float | None = None) -> RecordBatch:
    """Read records from a ``.qtrj`` or CSV file."""
    path = Path(path)
    if path.suffix == ".qtrj":
        return read_records_binary(path)
    if path.suffix == ".csv":
        return read_records_csv(path, dt_record)
    raise ExportError(
        f"{path}: unsupported records file type {path.suffix!r} "
        "(expected .csv or .qtrj)"
    )


def sha256_of_path(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def platform_fingerprint() -> dict[str, str]:
    return {
        "python": sys.version.split()[0],
        "implementation": platform.python_implementation(),
        "system": platform.system(),
        "machine": platform.machine(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
    }


@dataclass
class OutputFile:
    path: str
    sha256: str
    bytes: int
    valid: bool = True


@dataclass
class RunManifest:
    """What a run produced and under which configuration.

    Written as NDJSON: one ``run`` object followed by one ``output`` object
    per file.
    """

    config: dict[str, str]
    version: str
    mode: str
    n_traj_requested: int
    n_traj_completed: int = 0
    wall_clock_s: float = 0.0
    status: str = "running"
    error: str | None = None
    presets_version: int | None = None
    device: dict[str, float] = field(default_factory=dict)
    platform: dict[str, str] = field(default_factory=platform_fingerprint)
    outputs: list[OutputFile] = field(default_factory=list)

    def add_output(self, path: Path, root: Path) -> None:
        relative = path.relative_to(root) if path.is_relative_to(root) else path
        self.outputs.append(
            OutputFile(
                path=str(relative),
                sha256=sha256_of_path(path),
                bytes=path.stat().st_size,
            )
        )

    def mark_failed(self, error: BaseException) -> None:
        self.status = "failed"
        self.error = f"{type(error).__name__}: {error}"
        for output in self.outputs:
            output.valid = False

    def rows(self) -> list[dict[str, Any]]:
        run = {key: value for key, value in asdict(self).items() if key != "outputs"}
        outputs = [{"record": "output", **asdict(o)} for o in self.outputs]
        return [{"record": "run", **run}, *outputs]

    def write(self, out_dir: Path) -> Path:
        return write_ndjson(self.rows(), out_dir / MANIFEST_NAME)

    def checksums(self) -> dict[str, str]:
        return {output.path: output.sha256 for output in self.outputs}


def read_manifest(path: str | Path) -> list[dict[str, Any]]:
    """Read manifest lines, skipping blanks."""
    rows = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
