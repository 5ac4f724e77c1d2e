"""Command-line surface: exit codes, file formats, byte-level determinism."""

import json

import numpy as np
import pytest

import bilevelopt.cli as cli


def run_cli(*argv):
    return cli.main(list(argv))


def write_config(path, **kw):
    base = {"t": 0.1, "s": 0.1, "eta": 0.5, "K": 30, "T": 8}
    base.update(kw)
    path.write_text(json.dumps(base))
    return path


class TestSolve:
    def test_writes_csv_and_manifest(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        out = tmp_path / "run.csv"
        code = run_cli("solve", "--problem", "degenerate_quadratic",
                       "--model", "improved", "--config", str(cfg),
                       "--out", str(out), "--no-timing")
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "iter,outer_value,grad_norm,metric,wall_ms"
        assert len(lines) == 9
        # quadratics carry no task metric: the column is empty
        assert lines[1].split(",")[3] == ""
        assert lines[1].split(",")[4] == "0"
        manifest = json.loads((tmp_path / "run.csv.manifest.json").read_text())
        assert manifest["command"] == "solve"
        assert manifest["config"]["K"] == 30

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert run_cli("solve", "--problem", "degenerate_quadratic",
                           "--config", str(cfg), "--out", str(out),
                           "--no-timing") == 0
        assert a.read_bytes() == b.read_bytes()

    def test_manifest_replay_reproduces_bytes(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        out = tmp_path / "run.csv"
        run_cli("solve", "--problem", "closedform_quadratic", "--config", str(cfg),
                "--out", str(out), "--no-timing")
        before = out.read_bytes()
        assert cli.replay_manifest(tmp_path / "run.csv.manifest.json") == 0
        assert out.read_bytes() == before

    def test_metric_column_for_hyperclean(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", t=0.01, s=0.001, eta=1.0, K=10, T=3)
        out = tmp_path / "run.csv"
        assert run_cli("solve", "--problem", "hyperclean_synthetic",
                       "--config", str(cfg), "--out", str(out), "--no-timing") == 0
        row = out.read_text().splitlines()[1].split(",")
        assert row[3] != ""
        assert 0.0 <= float(row[3]) <= 1.0

    def test_unknown_problem_exits_2(self, tmp_path):
        assert run_cli("solve", "--problem", "mystery",
                       "--out", str(tmp_path / "x.csv")) == 2

    def test_degenerate_gap_visible_from_cli(self, tmp_path):
        # default budgets: improved ends near the formulation optimum 0 while
        # basic plateaus at 0.5
        finals = {}
        for model in ("improved", "basic"):
            out = tmp_path / f"{model}.csv"
            assert run_cli("solve", "--problem", "degenerate_quadratic",
                           "--model", model, "--out", str(out),
                           "--no-timing") == 0
            finals[model] = float(out.read_text().splitlines()[-1].split(",")[1])
        assert finals["improved"] == pytest.approx(0.0, abs=1e-3)
        assert finals["basic"] == pytest.approx(0.5, abs=1e-3)

    def test_unknown_config_field_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"t": 0.1, "s": 0.1, "eta": 0.5, "K": 5, "T": 2,
                                   "warmup": 3}))
        code = run_cli("solve", "--problem", "closedform_quadratic",
                       "--config", str(cfg), "--out", str(tmp_path / "x.csv"))
        assert code == 2
        assert "warmup" in capsys.readouterr().err

    def test_missing_config_field_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"t": 0.1, "s": 0.1, "eta": 0.5, "K": 5}))
        code = run_cli("solve", "--problem", "closedform_quadratic",
                       "--config", str(cfg), "--out", str(tmp_path / "x.csv"))
        assert code == 2
        assert "'T'" in capsys.readouterr().err

    def test_divergence_exits_3_with_truncated_csv(self, tmp_path, monkeypatch):
        import dataclasses
        import bilevelopt as bl

        real = cli.zoo_problem

        def poisoned(name, seed=0, rho=0.5):
            inst = real(name, seed=seed, rho=rho)
            bad = dataclasses.replace(
                inst.problem,
                grad1_h=lambda w, lam: (w - lam) if lam[0] >= 1.2 else np.array([np.nan]),
                vjp_flavor=dict(inst.problem.vjp_flavor))
            return dataclasses.replace(inst, problem=bad)

        monkeypatch.setattr(cli, "zoo_problem", poisoned)
        cfg = write_config(tmp_path / "c.json", K=50, T=40)
        out = tmp_path / "run.csv"
        code = run_cli("solve", "--problem", "closedform_quadratic",
                       "--config", str(cfg), "--out", str(out), "--no-timing")
        assert code == 3
        lines = out.read_text().splitlines()
        assert lines[-1] == "# truncated"
        assert len(lines) > 2


class TestCheck:
    def test_quadratics_pass(self, tmp_path):
        out = tmp_path / "report.json"
        code = run_cli("check", "--problem", "closedform_quadratic",
                       "--out", str(out))
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["all_pass"]
        assert all(r["passed"] for r in doc["reports"])
        assert (tmp_path / "report.json.manifest.json").exists()

    def test_all_problems_pass(self, tmp_path):
        out = tmp_path / "report.json"
        code = run_cli("check", "--problem", "all", "--out", str(out))
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["all_pass"]
        problems = {r["problem"] for r in doc["reports"]}
        assert len(problems) == 4

    def test_unattainable_tolerance_exits_1(self):
        assert run_cli("check", "--problem", "closedform_quadratic",
                       "--tol", "1e-12") == 1

    def test_unknown_problem_exits_2(self):
        assert run_cli("check", "--problem", "wat") == 2


class TestAblation:
    def test_files_and_identity_with_solve(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", K=40, T=6)
        out_dir = tmp_path / "abl"
        assert run_cli("ablation", "--problem", "degenerate_quadratic",
                       "--freqs", "1,5", "--config", str(cfg),
                       "--out-dir", str(out_dir), "--no-timing") == 0
        names = sorted(p.name for p in out_dir.glob("*.csv"))
        assert names == ["basic.csv", "improved-1.csv", "improved-5.csv"]
        index = json.loads((out_dir / "index.json").read_text())
        assert [c["frequency"] for c in index] == [0, 1, 5]

        solo = tmp_path / "solo.csv"
        run_cli("solve", "--problem", "degenerate_quadratic", "--model", "improved",
                "--config", str(cfg), "--out", str(solo), "--no-timing")
        assert (out_dir / "improved-1.csv").read_bytes() == solo.read_bytes()

    def test_jobs_flag_matches_serial(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", K=20, T=4)
        serial, parallel = tmp_path / "s", tmp_path / "p"
        for out_dir, jobs in ((serial, "1"), (parallel, "2")):
            assert run_cli("ablation", "--problem", "degenerate_quadratic",
                           "--freqs", "1,3", "--config", str(cfg),
                           "--out-dir", str(out_dir), "--jobs", jobs,
                           "--no-timing") == 0
        for name in ("basic.csv", "improved-1.csv", "improved-3.csv"):
            assert (serial / name).read_bytes() == (parallel / name).read_bytes()

    def test_empty_freq_list_exits_2(self, tmp_path):
        assert run_cli("ablation", "--problem", "degenerate_quadratic",
                       "--freqs", "", "--out-dir", str(tmp_path / "x")) == 2


class TestClean:
    def test_comparison_csv_and_summary(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", t=0.01, s=0.001, eta=1.0, K=15, T=5)
        out = tmp_path / "clean.csv"
        code = run_cli("clean", "--rho", "0.5", "--ntr", "60", "--nval", "60",
                       "--config", str(cfg), "--seed", "1", "--out", str(out),
                       "--no-timing")
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "iter,f1_improved,f1_basic"
        assert len(lines) == 6
        summary = json.loads((tmp_path / "clean.csv.summary.json").read_text())
        assert summary["corrupted_count"] == 30
        assert not summary["undefined_f1"]
        assert "lambda_i < 0" in summary["flag_rule"]

    def test_rho_zero_marks_undefined_f1(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", t=0.01, s=0.001, eta=1.0, K=5, T=2)
        out = tmp_path / "clean.csv"
        assert run_cli("clean", "--rho", "0", "--ntr", "40", "--nval", "40",
                       "--config", str(cfg), "--out", str(out), "--no-timing") == 0
        summary = json.loads((tmp_path / "clean.csv.summary.json").read_text())
        assert summary["undefined_f1"]
        assert summary["note"] == "undefined-F1, reported 0"
        assert summary["final_f1_improved"] == 0.0

    def test_idx_source_round_trip(self, tmp_path):
        import bilevelopt as bl
        from bilevelopt.data import Dataset
        rng = np.random.default_rng(0)
        X = rng.integers(0, 256, size=(80, 9)).astype(np.float64) / 255.0
        y = rng.integers(0, 2, size=80).astype(np.int64)
        ds = Dataset(X=X, y=y, mask=np.zeros(80, bool), C=2)
        bl.write_idx(ds, tmp_path / "img", tmp_path / "lab", rows=3, cols=3)
        cfg = write_config(tmp_path / "c.json", t=0.01, s=0.001, eta=1.0, K=5, T=2)
        out = tmp_path / "clean.csv"
        code = run_cli("clean", "--data", f"idx:{tmp_path / 'img'},{tmp_path / 'lab'}",
                       "--rho", "0.5", "--ntr", "40", "--nval", "30",
                       "--config", str(cfg), "--out", str(out), "--no-timing")
        assert code == 0
        assert out.exists()

    def test_bad_rho_exits_2(self, tmp_path):
        assert run_cli("clean", "--rho", "1.5", "--out", str(tmp_path / "x.csv")) == 2


class TestFormatting:
    def test_seventeen_significant_digits(self):
        assert cli._fmt(1.0 / 3.0) == "0.33333333333333331"
        assert cli._fmt(0.5) == "0.5"
        assert cli._fmt(0.0) == "0"
