import json

import numpy as np

from cspace_metrics.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestProject:
    def test_euclidean_json(self, capsys):
        code, out, err = run_cli(
            capsys, "project", "--arm", "planar3", "--metric", "euclidean",
            "--start", "0,0,0", "--target", "1,0",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["residual"] <= 1e-9
        assert payload["solver"] == "sweep"

    def test_cheap_wrist_differs(self, capsys):
        _, out1, _ = run_cli(
            capsys, "project", "--arm", "planar3", "--metric", "euclidean",
            "--start", "0.3,0.5,0.1", "--target", "1,0",
        )
        _, out2, _ = run_cli(
            capsys, "project", "--arm", "planar3", "--metric", "cheap:wrist",
            "--start", "0.3,0.5,0.1", "--target", "1,0",
        )
        r1, r2 = json.loads(out1), json.loads(out2)
        assert "cost" in r1 and "cost" in r2
        assert r1["q_star"] != r2["q_star"]

    def test_malformed_start_exits_1_no_json(self, capsys):
        code, out, err = run_cli(
            capsys, "project", "--arm", "planar3", "--metric", "euclidean",
            "--start", "0,zero,0", "--target", "1,0",
        )
        assert code == 1
        assert out == ""
        assert err != ""

    def test_unreachable_exits_2(self, capsys):
        code, out, _ = run_cli(
            capsys, "project", "--arm", "planar3", "--metric", "euclidean",
            "--start", "0,0,0", "--target", "4,0",
        )
        assert code == 2
        assert out == ""

    def test_multistart_solver(self, capsys):
        code, out, _ = run_cli(
            capsys, "project", "--arm", "planar3", "--solver", "multistart",
            "--restarts", "8", "--seed", "1",
            "--start", "0.2,0.4,0.1", "--target", "1.2,0.3",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["solver"] == "multistart"
        assert payload["residual"] <= 1e-6


class TestSweepCmd:
    def test_csv_and_sidecar(self, capsys, tmp_path):
        out_csv = tmp_path / "profile.csv"
        code, out, _ = run_cli(
            capsys, "sweep", "--arm", "planar3", "--metric", "euclidean",
            "--start", "0.4,0.9,0.3", "--target", "0.9,0.2",
            "--out", str(out_csv),
        )
        assert code == 0
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "phi,branch,cost"
        assert len(lines) > 100
        sidecar = json.loads((tmp_path / "profile.csv.sublevel.json").read_text())
        assert sidecar["component_count"] == 1

    def test_expensive_shoulder_two_components(self, capsys, tmp_path):
        out_csv = tmp_path / "profile.csv"
        code, out, _ = run_cli(
            capsys, "sweep", "--arm", "planar3", "--metric", "expensive:shoulder",
            "--start", "0,0,0", "--target", "1.2,0", "--delta", "0.2",
            "--out", str(out_csv),
        )
        assert code == 0
        assert json.loads(out)["component_count"] == 2


class TestPipeline:
    def test_gen_synth_learn_round_trip(self, capsys, tmp_path):
        battery_path = tmp_path / "battery.json"
        code, out, _ = run_cli(
            capsys, "gen", "--arm", "planar3", "--seed", "3",
            "--contractions", "4", "--expansions", "4",
            "--out", str(battery_path),
        )
        assert code == 0
        assert json.loads(out)["queries"] == 8

        metric_path = tmp_path / "true_metric.txt"
        from cspace_metrics import frobenius_normalize, make_correlated, save_metric

        M_true = frobenius_normalize(make_correlated(np.eye(3), [(0, 2, 0.9)]))
        save_metric(M_true, metric_path)

        data_path = tmp_path / "answers.jsonl"
        code, out, _ = run_cli(
            capsys, "synth", "--battery", str(battery_path),
            "--metric", str(metric_path), "--mode", "exact", "--seed", "0",
            "--out", str(data_path),
        )
        assert code == 0

        report_path = tmp_path / "report.json"
        learned_path = tmp_path / "learned.txt"
        code, out, _ = run_cli(
            capsys, "learn", "--battery", str(battery_path),
            "--data", str(data_path), "--seed", "0",
            "--out", str(learned_path), "--report", str(report_path),
        )
        assert code == 0
        report = json.loads(out)
        assert report["learned_kl"] < report["euclidean_kl"]
        assert max(report["per_query_kl"].values()) <= 1e-3
        assert json.loads(report_path.read_text()) == report

    def test_learn_empty_dataset_exits_2(self, capsys, tmp_path):
        battery_path = tmp_path / "battery.json"
        run_cli(
            capsys, "gen", "--arm", "planar3", "--seed", "3",
            "--contractions", "1", "--expansions", "1", "--out", str(battery_path),
        )
        data_path = tmp_path / "empty.jsonl"
        data_path.write_text("")
        code, out, err = run_cli(
            capsys, "learn", "--battery", str(battery_path),
            "--data", str(data_path), "--seed", "0",
        )
        assert code == 2
        assert out == ""
        assert "empty" in err

    def test_gen_default_is_36_queries(self, capsys, tmp_path):
        battery_path = tmp_path / "battery.json"
        code, out, _ = run_cli(
            capsys, "gen", "--arm", "planar3", "--seed", "1",
            "--out", str(battery_path),
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["queries"] == 36
        assert payload["contraction"] == 18
        assert payload["expansion"] == 18

    def test_idempotent_given_seed(self, capsys, tmp_path):
        paths = []
        for name in ("a", "b"):
            battery_path = tmp_path / f"battery_{name}.json"
            run_cli(
                capsys, "gen", "--arm", "planar3", "--seed", "9",
                "--contractions", "2", "--expansions", "2",
                "--out", str(battery_path),
            )
            paths.append(battery_path)
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestFormatsAndConfig:
    def test_csv_format(self, capsys):
        code, out, _ = run_cli(
            capsys, "project", "--arm", "planar3", "--start", "0,0,0",
            "--target", "1,0", "--format", "csv",
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "q1,q2,q3,cost,residual"
        assert len(lines) == 2

    def test_config_file_supplies_defaults(self, capsys, tmp_path):
        config = tmp_path / "defaults.cfg"
        config.write_text("arm = planar3\nmetric = cheap:wrist\n")
        code, out, _ = run_cli(
            capsys, "--config", str(config), "project",
            "--start", "0.3,0.5,0.1", "--target", "1,0",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["residual"] <= 1e-9

    def test_cli_flags_override_config(self, capsys, tmp_path):
        config = tmp_path / "defaults.cfg"
        config.write_text("n = 900\narm = planar3\n")
        code, out, _ = run_cli(
            capsys, "--config", str(config), "project",
            "--start", "0,0,0", "--target", "1,0", "--n", "3600",
        )
        assert code == 0


class TestUsage:
    def test_unknown_metric_preset(self, capsys):
        code, out, err = run_cli(
            capsys, "project", "--arm", "planar3", "--metric", "fancy:stuff",
            "--start", "0,0,0", "--target", "1,0",
        )
        assert code == 1
        assert out == ""

    def test_missing_arm_file(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "project", "--arm", str(tmp_path / "nope.cfg"),
            "--metric", "euclidean", "--start", "0,0,0", "--target", "1,0",
        )
        assert code == 1
