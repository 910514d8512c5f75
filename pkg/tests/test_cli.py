import json
import os

import numpy as np
import pytest

from hardlabel.cli import apply_config, main, parse_config_text
from hardlabel.core import Image
from hardlabel.fileformats import save_image
from hardlabel.presets import preset


def run_cli(*args):
    return main(list(args))


class TestAttackCommand:
    def test_rambo_on_toy_writes_all_artifacts(self, tmp_path):
        out = str(tmp_path / "run")
        code = run_cli(
            "attack", "--attack", "rambo-hsja", "--oracle", "toy",
            "--budget", "1500", "--seed", "3", "--out", out,
        )
        assert code == 0
        summary = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert summary["schema_version"] == 1
        assert {"G1", "BD", "G2"} <= set(summary["stage_tags"])
        assert summary["queries_used"] <= 1500
        assert os.path.exists(tmp_path / "run" / "trace.ndjson")
        assert os.path.exists(tmp_path / "run" / "adversarial.img")
        assert os.path.exists(tmp_path / "run" / "adversarial.img.bin")

    def test_zero_budget_cannot_initialize(self, tmp_path):
        code = run_cli(
            "attack", "--attack", "signopt", "--oracle", "toy",
            "--budget", "0", "--out", str(tmp_path),
        )
        assert code == 2

    def test_identical_invocations_give_identical_bytes(self, tmp_path):
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli(
                "attack", "--attack", "rambo-sopt", "--oracle", "toy",
                "--budget", "800", "--seed", "11", "--out", str(out),
            ) == 0
            blobs.append(tuple(
                (out / f).read_bytes()
                for f in ("trace.ndjson", "summary.json", "adversarial.img.bin")
            ))
        assert blobs[0] == blobs[1]

    def test_unknown_flag_is_usage_error(self):
        assert run_cli("attack", "--attack", "signopt", "--no-such-flag") == 64

    def test_help_exits_zero(self, capsys):
        assert run_cli("--help") == 0
        assert "attack" in capsys.readouterr().out

    def test_unknown_attack_is_usage_error(self):
        assert run_cli("attack", "--attack", "gradient-desc", "--oracle", "toy") == 64

    def test_plateau_builtin_sources(self, tmp_path):
        code = run_cli(
            "attack", "--attack", "signopt", "--oracle", "plateau:mini",
            "--source", "builtin:2:0", "--start", "auto",
            "--mode", "targeted:0", "--budget", "400", "--out", str(tmp_path),
        )
        assert code == 0


class TestPhmCommand:
    def test_identical_images_give_zero_grid(self, tmp_path):
        img = Image(np.full(4, 0.25), 1, 2, 2)
        a = str(tmp_path / "a.img")
        save_image(img, a)
        out = str(tmp_path / "grid.csv")
        assert run_cli("phm", "--source", a, "--adversarial", a, "--out", out) == 0
        rows = [line.split(",") for line in open(out).read().strip().split("\n")]
        assert all(float(v) == 0.0 for row in rows for v in row)


class TestHardsetCommand:
    def test_empty_result_keeps_header(self, tmp_path):
        summary = tmp_path / "summary.csv"
        summary.write_text(
            "pair_id,source_label,target_label,start_id,final_distortion,"
            "queries_used,is_hard\npair00000,0,1,c1s000,0.5,100,0\n"
        )
        out = tmp_path / "hard.csv"
        assert run_cli("hardset", "--report", str(summary),
                       "--threshold", "0.9", "--out", str(out)) == 0
        assert out.read_text() == (
            "pair_id,source_label,target_label,start_id,final_distortion,"
            "queries_used,is_hard\n"
        )

    def test_inclusive_threshold(self, tmp_path):
        summary = tmp_path / "summary.csv"
        summary.write_text(
            "pair_id,source_label,target_label,start_id,final_distortion,"
            "queries_used,is_hard\n"
            "p0,0,1,s,0.89,10,0\np1,0,1,s,0.9,10,1\np2,0,1,s,1.3,10,1\n"
        )
        out = tmp_path / "hard.csv"
        assert run_cli("hardset", "--report", str(summary),
                       "--threshold", "0.9", "--out", str(out)) == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 3  # header + two hard pairs


class TestToystudyCommand:
    def test_table_schema(self, tmp_path, capsys):
        out = tmp_path / "table.csv"
        code = run_cli("toystudy", "--runs", "2", "--attacks", "rambo-sopt,signopt",
                       "--budget", "600", "--tol", "1e-2", "--out", str(out))
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "attack,success_rate,mean_final,median_final"
        assert lines[1].startswith("rambo-sopt,")
        assert lines[2].startswith("signopt,")


class TestEvalCommand:
    def test_balanced_campaign_writes_three_artifacts(self, tmp_path):
        out = tmp_path / "report"
        code = run_cli(
            "eval", "--protocol", "balanced", "--oracle", "plateau:mini",
            "--attack", "signopt", "--budget", "80", "--sources", "3",
            "--samples", "2", "--targets", "2", "--per-class", "6",
            "--master-seed", "5", "--out", str(out),
        )
        assert code == 0
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["pair_count"] == 3 * 2 * 2
        assert (out / "summary.csv").exists()
        assert (out / "traces.ndjson").exists()

    def test_infeasible_protocol_exits_4(self, tmp_path):
        code = run_cli(
            "eval", "--protocol", "balanced", "--oracle", "plateau:mini",
            "--attack", "signopt", "--budget", "50", "--sources", "3",
            "--samples", "50", "--targets", "2", "--per-class", "4",
            "--out", str(tmp_path / "r"),
        )
        assert code == 4


class TestConfigFiles:
    def test_parse_scalars_and_sections(self):
        cfg = parse_config_text(
            "preset = \"toy\"\n"
            "[signopt]\n"
            "directions_per_estimate = 25\n"
            "probe_radius = 0.125  # comment\n"
            "[blockdescent]\n"
            "lam = 1.5\n"
        )
        assert cfg[""]["preset"] == "toy"
        assert cfg["signopt"]["directions_per_estimate"] == 25
        assert cfg["signopt"]["probe_radius"] == 0.125
        assert cfg["blockdescent"]["lam"] == 1.5

    def test_apply_overrides(self):
        settings = apply_config(preset("toy"), {
            "": {},
            "signopt": {"directions_per_estimate": 33},
            "blockdescent": {"lam": 2.5},
            "stages": {"ge_epsilon_s": 0.5},
        })
        assert settings.sopt.directions_per_estimate == 33
        assert settings.bd.lam == 2.5
        assert settings.ge_epsilon_s == 0.5

    def test_unknown_keys_rejected(self):
        with pytest.raises(Exception):
            apply_config(preset("toy"), {"signopt": {"bogus": 1}})

    def test_config_file_feeds_attack(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[signopt]\ndirections_per_estimate = 5\n")
        code = run_cli(
            "attack", "--attack", "signopt", "--oracle", "toy",
            "--budget", "300", "--config", str(cfg), "--out", str(tmp_path / "o"),
        )
        assert code == 0
