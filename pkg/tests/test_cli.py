"""End-to-end CLI checks: subcommands, file outputs, exit codes."""

import json

import numpy as np
import pytest

from bptrack import plots
from bptrack.cli import main
from bptrack.harness import read_records_jsonl
from bptrack.metrics import MetricDecomposition, TrajectoryRecord
from bptrack.models import ObjectState

TINY = [
    "--set", "scenario.n_objects=2",
    "--set", "scenario.appear_steps=[2]",
    "--set", "scenario.disappear_steps=[10]",
    "--set", "scenario.k_steps=12",
    "--set", "model.clutter_rate=2.0",
]


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    payload = json.loads(out[-1]) if out else {}
    return code, payload


class TestSimulate:
    def test_writes_truth_and_frames(self, tmp_path, capsys):
        code, out = run_cli(capsys, "simulate", *TINY, "--seed", "5",
                            "--gamma", "4", "--out-dir", str(tmp_path))
        assert code == 0
        assert out["k_steps"] == 12
        truth = read_records_jsonl(tmp_path / "truth.jsonl")
        assert len(truth) == 2
        assert (truth[0].start, truth[0].end) == (2, 10)
        frames_text = (tmp_path / "frames.csv").read_text()
        assert frames_text.startswith("step,x,y\n")

    def test_byte_identical_rerun(self, tmp_path, capsys):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        for d in (d1, d2):
            code, _ = run_cli(capsys, "simulate", *TINY, "--seed", "5",
                              "--out-dir", str(d))
            assert code == 0
        assert (d1 / "truth.jsonl").read_bytes() == \
            (d2 / "truth.jsonl").read_bytes()
        assert (d1 / "frames.csv").read_bytes() == \
            (d2 / "frames.csv").read_bytes()

    def test_seed_changes_output(self, tmp_path, capsys):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        run_cli(capsys, "simulate", *TINY, "--seed", "5", "--out-dir",
                str(d1))
        run_cli(capsys, "simulate", *TINY, "--seed", "6", "--out-dir",
                str(d2))
        assert (d1 / "frames.csv").read_bytes() != \
            (d2 / "frames.csv").read_bytes()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("sim")
    code = main(["simulate", *TINY, "--seed", "5", "--gamma", "4",
                 "--out-dir", str(path)])
    assert code == 0
    return path


class TestTrack:
    def test_writes_estimates(self, sim_dir, tmp_path, capsys):
        out_path = tmp_path / "estimates.jsonl"
        code, out = run_cli(capsys, "track", *TINY,
                            "--frames", str(sim_dir / "frames.csv"),
                            "--variant", "tpmb-all", "--seed", "1",
                            "--gamma", "4", "--k-steps", "12",
                            "--out", str(out_path))
        assert code == 0
        assert out["n_estimates"] >= 1
        assert out["wall_time"] > 0
        records = read_records_jsonl(out_path)
        assert all(rec.end <= 12 for rec in records)

    def test_smooth_writes_second_file(self, sim_dir, tmp_path, capsys):
        out_path = tmp_path / "estimates.jsonl"
        code, out = run_cli(capsys, "track", *TINY,
                            "--set", "mc.smooth_draws=5",
                            "--frames", str(sim_dir / "frames.csv"),
                            "--variant", "tpmb-all", "--seed", "1",
                            "--gamma", "4", "--k-steps", "12", "--smooth",
                            "--out", str(out_path))
        assert code == 0
        smoothed = read_records_jsonl(tmp_path / "estimates.smoothed.jsonl")
        assert out["smoothed"].endswith("estimates.smoothed.jsonl")
        assert len(smoothed) == out["n_estimates"]


class TestEvaluate:
    def test_perfect_estimates_score_zero(self, sim_dir, tmp_path, capsys):
        report_dir = tmp_path / "report"
        code, out = run_cli(capsys, "evaluate",
                            "--estimates", str(sim_dir / "truth.jsonl"),
                            "--truth", str(sim_dir / "truth.jsonl"),
                            "--k-steps", "12",
                            "--out-dir", str(report_dir))
        assert code == 0
        assert out["summed_metric"] == pytest.approx(0.0, abs=1e-9)
        lines = (report_dir / "report.csv").read_text().splitlines()
        assert lines[0] == "step,metric,loc,miss,false,switch"
        assert len(lines) == 13
        summary = json.loads((report_dir / "report.json").read_text())
        assert summary["k_steps"] == 12
        assert summary["summed"]["metric"] == pytest.approx(0.0, abs=1e-9)
        assert (report_dir / "metric_series.png").stat().st_size > 0

    def test_horizon_defaults_to_truth_end(self, sim_dir, tmp_path, capsys):
        report_dir = tmp_path / "report"
        code, out = run_cli(capsys, "evaluate",
                            "--estimates", str(sim_dir / "truth.jsonl"),
                            "--truth", str(sim_dir / "truth.jsonl"),
                            "--out-dir", str(report_dir))
        assert code == 0
        lines = (report_dir / "report.csv").read_text().splitlines()
        assert len(lines) == 11  # header + steps 1..10


class TestMc:
    def test_end_to_end_outputs(self, tmp_path, capsys):
        out_dir = tmp_path / "mc"
        code, out = run_cli(capsys, "mc", *TINY,
                            "--set", "mc.runs=2",
                            "--set", "mc.gamma_grid=[4.0]",
                            "--set", "mc.smooth_draws=5",
                            "--out-dir", str(out_dir))
        assert code == 0
        assert out["partial"] is False
        assert out["n_runs"] == 4
        data = json.loads((out_dir / "aggregate.json").read_text())
        assert {a["variant"] for a in data["aggregates"]} == \
            {"tpmb-all", "pmb"}
        run_files = sorted(p.name for p in (out_dir / "runs").iterdir())
        assert run_files == [
            "pmb_gamma4_run000.csv", "pmb_gamma4_run001.csv",
            "tpmb-all_gamma4_run000.csv", "tpmb-all_gamma4_run001.csv"]
        assert (out_dir / "metric_series.png").stat().st_size > 0
        assert (out_dir / "scenario.png").stat().st_size > 0

    def test_run_csvs_byte_identical_across_reruns(self, tmp_path, capsys):
        args = ["mc", *TINY, "--set", "mc.runs=1",
                "--set", "mc.gamma_grid=[4.0]",
                "--set", "mc.smooth_draws=0",
                "--set", "mc.variants=[pmb]"]
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        for d in (d1, d2):
            code, _ = run_cli(capsys, *args, "--out-dir", str(d))
            assert code == 0
        name = "pmb_gamma4_run000.csv"
        assert (d1 / "runs" / name).read_bytes() == \
            (d2 / "runs" / name).read_bytes()


class TestFailureModes:
    def test_unknown_config_key_exits_nonzero(self, tmp_path, capsys):
        code, out = run_cli(capsys, "mc", "--set", "nope.key=1",
                            "--out-dir", str(tmp_path))
        assert code == 1
        assert out["error"] == "ValueError"
        assert "nope.key" in out["message"]

    def test_missing_file_reports_error_json(self, tmp_path, capsys):
        code, out = run_cli(capsys, "evaluate",
                            "--estimates", str(tmp_path / "missing.jsonl"),
                            "--truth", str(tmp_path / "missing.jsonl"),
                            "--out-dir", str(tmp_path))
        assert code == 1
        assert out["error"] == "FileNotFoundError"

    def test_bad_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["bench"])
        assert exc.value.code == 2


class TestFigures:
    def test_plot_run_series_writes_file(self, tmp_path):
        series = [MetricDecomposition(1.0, 0.5, 0.25, 0.25, 0.0)
                  for _ in range(5)]
        path = tmp_path / "series.png"
        plots.plot_run_series(series, path)
        assert path.stat().st_size > 0

    def test_plot_scenario_writes_file(self, tmp_path):
        states = [ObjectState([0.0, 1.0, 0.0, 0.0], np.eye(2))
                  for _ in range(3)]
        truth = [TrajectoryRecord(1, states, id=0)]
        path = tmp_path / "scenario.png"
        plots.plot_scenario(truth, path, region=((-10, 10), (-10, 10)))
        assert path.stat().st_size > 0
