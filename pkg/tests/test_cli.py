"""Command-line interface: subcommands, output shape, exit codes."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from ticsolve import ExperimentConfig
from ticsolve.cli import build_parser, main

Z_DEP = """
name = zdep
T = 1.0
b = u
sigma = 0.3
g = x^2 + u^2 + 0.5*z
h = x^2
u_lo = -1
u_hi = 1
x_lo = -4
x_hi = 4
"""

SMALL = ["--nx", "61", "--nt", "60", "--controls", "17"]


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestDispatch:
    def test_help_exits_clean(self, capsys):
        assert main(["--help"]) == 0
        assert "cascade" in capsys.readouterr().out

    def test_missing_command_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["cascade", "--preset", "tau-free", "--frobnicate"]) == 2

    def test_cascade_prints_value_line(self, capsys):
        code, out, _ = run(capsys, ["cascade", "--preset", "tau-free", *SMALL,
                                    "--players", "4"])
        assert code == 0
        assert "cascade: N=4" in out and "V(0, 0) =" in out
        assert "problem: tau-free" in out

    def test_march_and_picard_print_same_value(self, capsys):
        argv = ["equilibrium", "--preset", "two-rate-discount",
                "--nx", "61", "--nt", "48", "--controls", "33"]
        _, out_m, _ = run(capsys, [*argv, "--method", "march"])
        _, out_p, _ = run(capsys, [*argv, "--method", "picard"])
        v_m = out_m.split("V(0, 0) = ")[1].split()[0]
        v_p = out_p.split("V(0, 0) = ")[1].split()[0]
        assert v_m == v_p

    def test_kernel_method_runs(self, capsys):
        code, out, _ = run(capsys, ["equilibrium", "--preset", "two-rate-discount",
                                    "--nx", "193", "--nt", "140", "--controls", "17",
                                    "--method", "kernel", "--nt-coarse", "10"])
        assert code == 0
        assert "tail_mass" in out

    def test_mc_emits_json_report(self, capsys):
        code, out, _ = run(capsys, ["mc", "--preset", "tau-free", *SMALL,
                                    "--paths", "200", "--seed", "7"])
        assert code == 0
        payload = json.loads(out[out.index("{"):])
        assert payload["n_paths"] == 200
        assert payload["seed"] == 7
        assert payload["inputs"]["paths"] == 200
        assert abs(payload["z_score"]) < 6.0

    def test_converge_prints_rate_table(self, capsys):
        code, out, _ = run(capsys, ["converge", "--preset", "two-rate-discount",
                                    "--nx", "121", "--nt", "96", "--controls", "33",
                                    "--ladder", "2,4,8"])
        assert code == 0
        assert "fitted rate:" in out
        assert out.count("\n  ") >= 3  # one row per ladder rung

    def test_consistency_prints_pass_lines(self, capsys):
        code, out, _ = run(capsys, ["consistency", "--preset", "tau-free", *SMALL])
        assert code == 0
        assert out.count("PASS") == 4  # three checks plus the summary line
        assert "consistency suite: PASS" in out


class TestExportCommand:
    def test_writes_manifest_and_config(self, tmp_path, capsys):
        out_dir = tmp_path / "run"
        code, out, _ = run(capsys, ["export", "--preset", "tau-free", *SMALL,
                                    "--method", "march", "--out", str(out_dir)])
        assert code == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert "solution.value.csv" in manifest["files"]
        # the recorded config reloads into the same experiment
        cfg = ExperimentConfig.from_json(out_dir / "config.json")
        assert cfg.preset == "tau-free" and cfg.nx == 61

    def test_rerun_to_other_directory_hashes_identically(self, tmp_path, capsys):
        argv = ["export", "--preset", "tau-free", *SMALL, "--method", "march"]
        for name in ("a", "b"):
            assert main([*argv, "--out", str(tmp_path / name)]) == 0
        capsys.readouterr()
        manifests = [
            json.loads((tmp_path / name / "manifest.json").read_text())["files"]
            for name in ("a", "b")
        ]
        assert manifests[0] == manifests[1]

    def test_requires_out(self, capsys):
        code, _, err = run(capsys, ["export", "--preset", "tau-free", *SMALL])
        assert code == 2
        assert "--out" in err

    def test_converge_out_writes_report(self, tmp_path, capsys):
        out_dir = tmp_path / "conv"
        code, _, _ = run(capsys, ["converge", "--preset", "tau-free", *SMALL,
                                  "--ladder", "2,4,8", "--out", str(out_dir)])
        assert code == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert {"convergence.csv", "convergence.json"} <= set(manifest["files"])
        assert manifest["meta"]["ladder"] == [2, 4, 8]


class TestExitCodes:
    @pytest.mark.parametrize("argv, code", [
        (["cascade", "--preset", "nope"], 2),
        (["cascade"], 2),                                  # no problem source
        (["converge", "--preset", "tau-free", "--ladder", "2,x,8"], 2),
        (["consistency", "--preset", "two-rate-discount", "--nx", "61", "--nt", "48"], 2),
        (["equilibrium", "--preset", "exp-discount-lq", "--nx", "201", "--nt", "10",
          "--controls", "17"], 3),                         # explicit-stepper step cap
    ])
    def test_error_paths(self, capsys, argv, code):
        assert main(argv) == code
        assert capsys.readouterr().err.startswith("error:")

    def test_unsupported_problem_is_exit_4(self, tmp_path, capsys):
        path = tmp_path / "zdep.prob"
        path.write_text(Z_DEP)
        code, _, err = run(capsys, ["mc", "--problem-file", str(path), *SMALL,
                                    "--paths", "50"])
        assert code == 4
        assert "depends on z" in err

    def test_parser_declares_all_subcommands(self):
        text = build_parser().format_help()
        for cmd in ("cascade", "equilibrium", "mc", "converge", "consistency", "export"):
            assert cmd in text
