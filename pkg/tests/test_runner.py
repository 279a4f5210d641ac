"""End-to-end tests for every run mode at small scale."""

import pandas as pd
import pytest

from qubit_trajectories.export import MANIFEST_NAME, read_manifest
from qubit_trajectories.runner import run


def _summary(out_dir, kind):
    rows = [
        row for row in read_manifest(out_dir / "summary.ndjson") if row["kind"] == kind
    ]
    assert rows, f"no {kind} rows in summary"
    return rows


def _output_paths(manifest):
    return {output.path for output in manifest.outputs}


class TestGenerateAndReconstruct:
    """Generate writes records; reconstruct filters them back."""

    def test_generate_outputs(self, make_config):
        config = make_config("generate", formats="csv,bin")
        manifest = run(config)
        assert manifest.status == "complete"
        assert manifest.n_traj_completed == 6
        expected = {
            "records.csv",
            "records.qtrj",
            "omniscient.csv",
            "filtered.csv",
            "purity.csv",
        }
        assert expected <= _output_paths(manifest)
        purity = pd.read_csv(config.out_dir / "purity.csv")
        assert len(purity) == config.params.n_bins + 1
        innovations = _summary(config.out_dir, "innovation")
        assert {row["column"] for row in innovations} == {"u", "v", "w"}

    def test_reconstruct_reproduces_generated_filter(self, make_config):
        generated = make_config("generate", out="gen", formats="csv,bin")
        run(generated)
        records = generated.out_dir / "records.qtrj"
        config = make_config("reconstruct", out="rec", records_path=str(records))
        manifest = run(config)
        assert manifest.n_traj_completed == 6
        original = pd.read_csv(generated.out_dir / "filtered.csv")
        rebuilt = pd.read_csv(config.out_dir / "filtered.csv")
        assert list(rebuilt.columns) == list(original.columns)
        difference = rebuilt[["x", "y", "z"]] - original[["x", "y", "z"]]
        assert difference.abs().to_numpy().max() < 1e-10

    def test_reconstruct_from_csv_with_other_length(self, make_config, tmp_path):
        generated = make_config("generate", out="gen", formats="csv")
        run(generated)
        config = make_config(
            "reconstruct",
            out="rec",
            records_path=str(generated.out_dir / "records.csv"),
            duration_us="2.0",
        )
        run(config)
        filtered = pd.read_csv(config.out_dir / "filtered.csv")
        assert filtered["t_us"].max() == pytest.approx(1.0)

    def test_w_only_innovations(self, make_config):
        config = make_config("generate", subset="w")
        run(config)
        innovations = _summary(config.out_dir, "innovation")
        assert [row["column"] for row in innovations] == ["w"]


class TestEnsembleModes:
    """Average, validate, sweep, histogram and grid."""

    def test_average(self, make_config):
        config = make_config("average", preset="fig2a", duration_us="1.0")
        manifest = run(config)
        frame = pd.read_csv(config.out_dir / "raw_average.csv")
        assert len(frame) == config.params.n_bins
        row = _summary(config.out_dir, "raw_average")[0]
        assert row["config_id"] == "fig2a"
        assert row["regime"] == "underdamped"
        assert manifest.presets_version == 1

    def test_validate(self, make_config):
        config = make_config("validate")
        run(config)
        frame = pd.read_csv(config.out_dir / "validation.csv")
        assert set(frame["axis"]) == {"x", "y", "z"}
        fits = _summary(config.out_dir, "validation_fit")
        assert [row["axis"] for row in fits] == ["x", "y", "z"]

    def test_sweep(self, make_config):
        config = make_config("sweep")
        run(config)
        frame = pd.read_csv(config.out_dir / "sweep.csv")
        assert len(frame) == 9
        note = _summary(config.out_dir, "sweep")[0]
        assert note["best_eta_f"] in (0.13, 0.14, 0.15)
        assert note["threshold"] == pytest.approx(2.30, abs=0.01)

    def test_histogram_with_subset_comparison(self, make_config):
        config = make_config("histogram", compare_subsets="true")
        manifest = run(config)
        expected = {"histograms.csv", "mean_trajectory.csv", "subset_purity.csv"}
        assert expected <= _output_paths(manifest)
        distribution = _summary(config.out_dir, "distribution")[0]
        assert distribution["tau_us"] == pytest.approx(0.5)
        assert "north_mass" in distribution
        worse = [row["worse"] for row in _summary(config.out_dir, "purity_order")]
        assert worse == ["uv", "w", "none"]

    def test_requested_outputs_share_one_ensemble(self, make_config):
        config = make_config("average", outputs="raw_average,purity_curve")
        manifest = run(config)
        assert {"raw_average.csv", "purity.csv"} <= _output_paths(manifest)
        assert "validation.csv" not in _output_paths(manifest)
        purity = pd.read_csv(config.out_dir / "purity.csv")
        assert purity["purity"].iloc[0] == pytest.approx(1.0)

    def test_generate_without_purity_curve(self, make_config):
        config = make_config("generate", outputs="raw_average")
        manifest = run(config)
        assert "purity.csv" not in _output_paths(manifest)
        assert {"records.csv", "raw_average.csv"} <= _output_paths(manifest)

    def test_mean_trajectory_untrimmed(self, make_config):
        config = make_config("histogram")
        run(config)
        overlay = pd.read_csv(config.out_dir / "mean_trajectory.csv")
        assert overlay["t_us"].min() == pytest.approx(0.0)
        assert overlay["t_us"].max() == pytest.approx(0.5)

    def test_overlay_trim_drops_early_rows(self, make_config):
        config = make_config("histogram", overlay_trim="true")
        run(config)
        overlay = pd.read_csv(config.out_dir / "mean_trajectory.csv")
        assert overlay["t_us"].min() == pytest.approx(0.2)
        assert set(overlay["tau_us"]) == {0.5}
        assert len(overlay) == 4

    def test_grid(self, make_config, small_presets_path):
        config = make_config("grid", presets_path=str(small_presets_path))
        manifest = run(config)
        assert manifest.n_traj_completed == 24
        summary = pd.read_csv(config.out_dir / "grid_summary.csv")
        assert list(summary["config_id"]) == [
            "grid-r0-d0",
            "grid-r0-d1",
            "grid-r1-d0",
            "grid-r1-d1",
        ]
        assert (config.out_dir / "grid" / "grid-r1-d1.csv").exists()
        assert summary.loc[0, "regime"] == "overdamped"


class TestManifest:
    """Manifests record configuration, outputs and failures."""

    def test_manifest_lists_outputs_with_checksums(self, make_config):
        config = make_config("average", formats="csv,ndjson")
        run(config)
        rows = read_manifest(config.out_dir / MANIFEST_NAME)
        assert rows[0]["record"] == "run"
        assert rows[0]["status"] == "complete"
        assert rows[0]["config"]["n_traj"] == "6"
        paths = {row["path"] for row in rows[1:]}
        assert {"raw_average.csv", "raw_average.ndjson", "summary.ndjson"} == paths

    def test_same_seed_same_files(self, make_config):
        first = run(make_config("validate", out="a"))
        second = run(make_config("validate", out="b"))
        assert first.checksums() == second.checksums()

    @pytest.mark.parametrize(
        "mode", ["generate", "average", "validate", "sweep", "histogram"]
    )
    def test_worker_count_does_not_change_outputs(self, make_config, mode):
        checksums = [
            run(
                make_config(
                    mode, out=f"w{workers}", workers=str(workers), chunk_size="1"
                )
            ).checksums()
            for workers in (1, 4, 16)
        ]
        assert checksums[0] == checksums[1] == checksums[2]

    def test_worker_count_does_not_change_grid(self, make_config, small_presets_path):
        checksums = [
            run(
                make_config(
                    "grid",
                    out=f"w{workers}",
                    presets_path=str(small_presets_path),
                    workers=str(workers),
                    chunk_size="1",
                )
            ).checksums()
            for workers in (1, 4, 16)
        ]
        assert checksums[0] == checksums[1] == checksums[2]

    def test_worker_count_does_not_change_reconstruction(self, make_config):
        generated = make_config("generate", out="gen", formats="bin")
        run(generated)
        records = str(generated.out_dir / "records.qtrj")
        checksums = [
            run(
                make_config(
                    "reconstruct",
                    out=f"w{workers}",
                    records_path=records,
                    workers=str(workers),
                    chunk_size="1",
                )
            ).checksums()
            for workers in (1, 4, 16)
        ]
        assert checksums[0] == checksums[1] == checksums[2]

    def test_failure_marks_outputs_invalid(self, make_config, tmp_path):
        missing = str(tmp_path / "missing.qtrj")
        config = make_config("reconstruct", records_path=missing)
        with pytest.raises(FileNotFoundError):
            run(config)
        rows = read_manifest(config.out_dir / MANIFEST_NAME)
        assert rows[0]["status"] == "failed"
        assert rows[0]["error"].startswith("FileNotFoundError")
