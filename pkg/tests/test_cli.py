import json

import ergoswarm.service.app as app_mod
from ergoswarm.cli import main
from ergoswarm.scenario import preset, resolve_config
from ergoswarm.scenario.runner import RunAborted


def write_config(tmp_path, duration=1.0, name="coverage3", **overrides):
    cfg = resolve_config(preset(name))
    cfg.duration = duration
    data = cfg.to_dict()
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestRun:
    def test_writes_three_files(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        code = main(["run", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "config.resolved.json",
            "run.jsonl",
            "summary.csv",
        ]
        assert "final collective metric" in capsys.readouterr().out

    def test_seeded_runs_are_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg), "--out", str(out1), "--seed", "7"]) == 0
        assert main(["run", "--config", str(cfg), "--out", str(out2), "--seed", "7"]) == 0
        assert (out1 / "run.jsonl").read_bytes() == (out2 / "run.jsonl").read_bytes()

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = main(
            ["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]
        )
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_unparseable_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("this is not toml ===", encoding="utf-8")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_disconnected_network_exits_3(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            network={"kind": "edges", "edges": [[0, 1]], "rounds_per_step": 1},
        )
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 3
        assert "connected" in capsys.readouterr().err

    def test_abort_exits_4(self, tmp_path, monkeypatch, capsys):
        def exploding(cfg):
            raise RunAborted("synthetic", step=2, agent=0)

        monkeypatch.setattr(app_mod, "run_decentralized", exploding)
        cfg = write_config(tmp_path)
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 4
        assert "abort" in capsys.readouterr().err

    def test_mode_flag(self, tmp_path):
        cfg = write_config(tmp_path, duration=0.5)
        out = tmp_path / "cen"
        assert main(
            ["run", "--config", str(cfg), "--out", str(out), "--mode", "cen"]
        ) == 0
        snapshot = json.loads((out / "config.resolved.json").read_text())
        assert snapshot["mode"] == "centralized"


class TestCompare:
    def test_writes_ratio_table(self, tmp_path):
        cfg = write_config(tmp_path, duration=0.5)
        out = tmp_path / "cmp"
        assert main(["compare", "--config", str(cfg), "--out", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "centralized.jsonl",
            "compare.csv",
            "config.resolved.json",
            "decentralized.jsonl",
        ]
        header = (out / "compare.csv").read_text().splitlines()[0]
        assert header == "t,E_dec,E_cen,ratio"


class TestPresetsAndValidate:
    def test_presets_listing(self, capsys):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out
        for name in ("coverage3", "corridor", "localization", "nash-demo"):
            assert name in out

    def test_validate_ok(self, capsys):
        assert main(["validate", "--preset", "coverage3"]) == 0
        assert "valid" in capsys.readouterr().out

    def test_validate_bad_exits_3(self, tmp_path, capsys):
        cfg = write_config(tmp_path, duration=-5.0)
        assert main(["validate", "--config", str(cfg)]) == 3
        assert "violation" in capsys.readouterr().err


class TestExport:
    def test_round_trip_from_run_dir(self, tmp_path):
        cfg = write_config(tmp_path, duration=0.5)
        run_dir = tmp_path / "run"
        assert main(["run", "--config", str(cfg), "--out", str(run_dir)]) == 0
        out = tmp_path / "export"
        assert main(["export", "--run-dir", str(run_dir), "--out", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["phi.csv", "trajectories.csv"]
        lines = (out / "trajectories.csv").read_text().splitlines()
        assert lines[0] == "t,agent,x,y"
        assert len(lines) > 1

    def test_missing_run_dir_exits_2(self, tmp_path):
        assert main(
            ["export", "--run-dir", str(tmp_path / "ghost"), "--out", str(tmp_path / "o")]
        ) == 2


class TestArtifactRoundTrips:
    def test_every_emitted_file_parses_back(self, tmp_path):
        from ergoswarm.scenario import config_from_dict
        from ergoswarm.scenario.runner import RunLog, parse_csv_table
        from ergoswarm.spatial import load_field_csv

        cfg = write_config(tmp_path, duration=0.5)
        run_dir = tmp_path / "run"
        cmp_dir = tmp_path / "cmp"
        exp_dir = tmp_path / "exp"
        assert main(["run", "--config", str(cfg), "--out", str(run_dir)]) == 0
        assert main(["compare", "--config", str(cfg), "--out", str(cmp_dir)]) == 0
        assert main(["export", "--run-dir", str(run_dir), "--out", str(exp_dir)]) == 0

        records = RunLog.parse_jsonl((run_dir / "run.jsonl").read_text())
        assert records and records[-1]["t"] == 0.5
        summary = RunLog.parse_summary_csv((run_dir / "summary.csv").read_text())
        assert summary["t"] == [rec["t"] for rec in records]
        assert summary["E_collective"] == [rec["metric_collective"] for rec in records]

        snapshot = json.loads((run_dir / "config.resolved.json").read_text())
        assert config_from_dict(snapshot).to_dict() == snapshot

        ratio = parse_csv_table((cmp_dir / "compare.csv").read_text())
        assert set(ratio) == {"t", "E_dec", "E_cen", "ratio"}
        traj = parse_csv_table((exp_dir / "trajectories.csv").read_text())
        assert set(traj) == {"t", "agent", "x", "y"}
        field = load_field_csv(exp_dir / "phi.csv")
        assert abs(field.riemann_sum() - 1.0) < 1e-9
