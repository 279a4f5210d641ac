"""Tests for result files, record round trips and manifests."""

import json

import numpy as np
import pandas as pd
import pytest

from qubit_trajectories.export import (
    BINARY_HEADER,
    MANIFEST_NAME,
    ExportError,
    RunManifest,
    read_manifest,
    read_records,
    records_frame,
    trajectories_frame,
    validate_formats,
    write_ndjson,
    write_records,
    write_table,
)
from qubit_trajectories.models import RecordBatch, TrajectoryBatch


@pytest.fixture
def records(rng) -> RecordBatch:
    return RecordBatch(
        samples=rng.normal(size=(3, 5, 3)), dt_record=0.1, indices=(4, 5, 6)
    )


class TestFormats:
    """Tests for format names."""

    def test_known(self):
        assert validate_formats(["csv", "bin"]) == ("csv", "bin")

    def test_unknown(self):
        with pytest.raises(ExportError, match="Unsupported export format: 'xlsx'"):
            validate_formats(["csv", "xlsx"])


class TestTables:
    """Tests for CSV and NDJSON tables."""

    def test_csv_and_ndjson(self, tmp_path):
        frame = pd.DataFrame({"t_us": [0.0, 0.1], "value": [1.5, np.nan]})
        paths = write_table(frame, tmp_path, "table", ["csv", "ndjson", "bin"])
        assert [p.name for p in paths] == ["table.csv", "table.ndjson"]
        assert (tmp_path / "table.csv").read_text().splitlines()[0] == "t_us,value"
        lines = (tmp_path / "table.ndjson").read_text().splitlines()
        rows = [json.loads(line) for line in lines]
        assert rows[1] == {"t_us": 0.1, "value": None}

    def test_ndjson_converts_numpy_scalars(self, tmp_path):
        row = {"n": np.int64(3), "ok": np.bool_(True), "x": np.float32(0.5)}
        path = write_ndjson([row], tmp_path / "a.ndjson")
        assert json.loads(path.read_text()) == {"n": 3, "ok": True, "x": 0.5}

    def test_no_temporary_files_left(self, tmp_path):
        write_table(pd.DataFrame({"a": [1]}), tmp_path, "t", ["csv"])
        assert sorted(p.name for p in tmp_path.iterdir()) == ["t.csv"]

    def test_failed_write_leaves_nothing(self, tmp_path):
        def rows():
            yield {"a": 1}
            raise RuntimeError("interrupted")

        with pytest.raises(RuntimeError):
            write_ndjson(rows(), tmp_path / "partial.ndjson")
        assert list(tmp_path.iterdir()) == []


class TestFrames:
    """Tests for record and trajectory tables."""

    def test_records_frame_columns(self, records):
        frame = records_frame(records)
        assert list(frame.columns) == ["trajectory", "t_us", "u", "v", "w"]
        assert len(frame) == 15
        assert frame["trajectory"].tolist()[:6] == [4, 4, 4, 4, 4, 5]

    def test_single_record_has_no_trajectory_column(self, records):
        single = RecordBatch(samples=records.samples[:1], dt_record=0.1, indices=(4,))
        assert "trajectory" not in records_frame(single).columns

    def test_trajectories_frame(self):
        batch = TrajectoryBatch(
            times=np.arange(3.0),
            bloch=np.zeros((2, 3, 3)),
            subset="uvw",
            indices=(0, 1),
        )
        frame = trajectories_frame(batch)
        assert list(frame.columns) == ["trajectory", "t_us", "x", "y", "z"]
        assert len(frame) == 6


class TestRecordFiles:
    """Tests for writing and reading record files."""

    def test_binary_round_trip(self, records, tmp_path):
        write_records(records, tmp_path, ["bin"])
        back = read_records(tmp_path / "records.qtrj")
        np.testing.assert_array_equal(back.samples, records.samples)
        assert back.dt_record == 0.1
        assert back.indices == (0, 1, 2)

    def test_binary_header_layout(self, records, tmp_path):
        write_records(records, tmp_path, ["bin"])
        data = (tmp_path / "records.qtrj").read_bytes()
        magic, version, n_traj, n_bins, dt = BINARY_HEADER.unpack_from(data)
        assert (magic, version, n_traj, n_bins, dt) == (b"QTRJ", 1, 3, 5, 0.1)
        assert len(data) == 32 + 3 * 5 * 3 * 8

    def test_csv_round_trip(self, records, tmp_path):
        write_records(records, tmp_path, ["csv"])
        back = read_records(tmp_path / "records.csv")
        np.testing.assert_allclose(back.samples, records.samples, rtol=1e-12)
        assert back.indices == (4, 5, 6)
        assert back.dt_record == pytest.approx(0.1)

    def test_truncated_binary(self, records, tmp_path):
        write_records(records, tmp_path, ["bin"])
        path = tmp_path / "records.qtrj"
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ExportError, match="expected"):
            read_records(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.qtrj"
        path.write_bytes(BINARY_HEADER.pack(b"NOPE", 1, 0, 0, 0.1))
        with pytest.raises(ExportError, match="magic"):
            read_records(path)

    def test_csv_missing_column(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("t_us,u,v\n0.0,1,2\n")
        with pytest.raises(ExportError, match="missing columns w"):
            read_records(path)

    def test_csv_single_bin_needs_dt(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("t_us,u,v,w\n0.0,1,2,3\n")
        with pytest.raises(ExportError, match="single bin"):
            read_records(path)
        assert read_records(path, dt_record=0.1).n_bins == 1

    def test_unsupported_suffix(self, tmp_path):
        with pytest.raises(ExportError, match="unsupported records file type"):
            read_records(tmp_path / "r.parquet")


class TestManifest:
    """Tests for run manifests."""

    def test_written_as_run_then_outputs(self, tmp_path):
        table = write_table(pd.DataFrame({"a": [1]}), tmp_path, "t", ["csv"])[0]
        manifest = RunManifest(
            config={"mode": "average"},
            version="1.0.0",
            mode="average",
            n_traj_requested=5,
        )
        manifest.add_output(table, tmp_path)
        manifest.status = "complete"
        path = manifest.write(tmp_path)
        assert path.name == MANIFEST_NAME
        rows = read_manifest(path)
        assert rows[0]["record"] == "run"
        assert rows[0]["status"] == "complete"
        assert rows[0]["platform"]["numpy"] == np.__version__
        assert rows[1]["path"] == "t.csv"
        assert len(rows[1]["sha256"]) == 64
        assert manifest.checksums() == {"t.csv": rows[1]["sha256"]}

    def test_failure_invalidates_outputs(self, tmp_path):
        table = write_table(pd.DataFrame({"a": [1]}), tmp_path, "t", ["csv"])[0]
        manifest = RunManifest(
            config={}, version="1.0.0", mode="average", n_traj_requested=5
        )
        manifest.add_output(table, tmp_path)
        manifest.mark_failed(RuntimeError("disk full"))
        assert manifest.status == "failed"
        assert manifest.error == "RuntimeError: disk full"
        assert not manifest.outputs[0].valid
