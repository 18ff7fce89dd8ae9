"""Experiment configs, convergence studies, consistency suite, and export."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from ticsolve import (
    ConvergenceReport,
    ExperimentConfig,
    Field2D,
    Grid,
    UsageError,
    diagonal_march_solve,
    export_results,
    feynman_kac_check,
    get_preset,
    run_consistency_suite,
    run_convergence_study,
)

DET_LQ = """
name = det-lq
T = 1.0
b = u
sigma = 0
g = x^2 + u^2
h = x^2
u_lo = -4
u_hi = 4
x_lo = -4
x_hi = 4
"""

TAU_DEP = """
name = tau-dep
T = 1.0
b = u
sigma = 0.3
g = (1 + tau) * (x^2 + u^2)
h = x^2
u_lo = -4
u_hi = 4
x_lo = -4
x_hi = 4
"""


@pytest.fixture(scope="module")
def det_lq_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("probs") / "det-lq.prob"
    path.write_text(DET_LQ)
    return str(path)


def make_config(**kw):
    kw.setdefault("preset", "tau-free")
    kw.setdefault("nx", 81)
    kw.setdefault("nt", 80)
    kw.setdefault("controls", 33)
    return ExperimentConfig(**kw)


class TestExperimentConfig:
    def test_dict_round_trip_is_identity(self):
        cfg = make_config(
            partition={"kind": "geometric", "n": 6, "ratio": 1.5},
            method="picard",
            tol=1e-7,
            seed=11,
            out_dir="somewhere",
        )
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_json_round_trip_is_identity(self, tmp_path):
        cfg = make_config(nt=None, partition={"kind": "explicit", "knots": [0.0, 0.25, 1.0]})
        path = tmp_path / "cfg.json"
        cfg.to_json(path)
        assert ExperimentConfig.from_json(path) == cfg

    def test_from_dict_rejects_unknown_keys(self):
        data = make_config().to_dict()
        data["grid_points"] = 50
        with pytest.raises(UsageError, match="grid_points"):
            ExperimentConfig.from_dict(data)

    def test_from_json_rejects_non_object(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(UsageError, match="object"):
            ExperimentConfig.from_json(path)

    @pytest.mark.parametrize("fields", [
        {},                                            # neither problem source
        {"preset": "tau-free", "problem_file": "x"},   # both
    ])
    def test_exactly_one_problem_source(self, fields):
        with pytest.raises(UsageError, match="exactly one"):
            ExperimentConfig(**fields)

    def test_unknown_preset_lists_available(self):
        with pytest.raises(UsageError, match="two-rate-discount"):
            ExperimentConfig(preset="not-a-preset")

    @pytest.mark.parametrize("bad", [
        {"nx": 3},
        {"nt": 0},
        {"controls": 1},
        {"stepper": "rk4"},
        {"cfl": 0.0},
        {"cfl": 1.5},
        {"boundary": "dirichlet"},
        {"method": "newton"},
        {"tol": -1.0},
        {"seed": -3},
    ])
    def test_numeric_and_choice_validation(self, bad):
        with pytest.raises(UsageError):
            make_config(**bad)

    @pytest.mark.parametrize("part", [
        {"n": 4},                                       # missing kind
        {"kind": "weird", "n": 4},
        {"kind": "uniform", "n": 0},
        {"kind": "uniform", "n": 4, "ratio": 2.0},      # stray key
        {"kind": "geometric", "n": 4, "ratio": -1.0},
        {"kind": "explicit", "knots": [0.0]},
        {"kind": "explicit"},
    ])
    def test_partition_validation(self, part):
        with pytest.raises(UsageError):
            make_config(partition=part)

    def test_build_grid_matches_problem_domain(self):
        cfg = make_config(preset="two-rate-discount", nx=61, nt=48)
        spec = cfg.build_problem()
        grid = cfg.build_grid(spec)
        assert (grid.x_lo, grid.x_hi) == (spec.x_lo, spec.x_hi)
        assert (grid.nx, grid.nt) == (61, 48)

    def test_build_grid_defaults_to_stability_bound(self):
        cfg = make_config(nt=None, nx=121)
        spec = cfg.build_problem()
        grid = cfg.build_grid(spec)
        assert grid.nt >= 1
        # the auto grid must actually be marchable
        diagonal_march_solve(spec, grid, cfg.build_scheme(), tau_keep=[0.0])

    def test_build_partition_families(self):
        uni = make_config(partition={"kind": "uniform", "n": 4})
        assert uni.build_partition(1.0).knots == (0.0, 0.25, 0.5, 0.75, 1.0)
        geo = make_config(partition={"kind": "geometric", "n": 2, "ratio": 3.0})
        knots = geo.build_partition(1.0).knots
        assert knots[0] == 0.0 and knots[-1] == 1.0 and len(knots) == 3
        exp = make_config(partition={"kind": "explicit", "knots": [0.0, 0.5, 1.0]})
        assert exp.build_partition(1.0).knots == (0.0, 0.5, 1.0)

    def test_explicit_partition_refuses_size_override(self):
        cfg = make_config(partition={"kind": "explicit", "knots": [0.0, 0.5, 1.0]})
        with pytest.raises(UsageError, match="explicit"):
            cfg.build_partition(1.0, n=8)

    def test_build_problem_from_file(self, det_lq_file):
        cfg = ExperimentConfig(problem_file=det_lq_file, nx=61, nt=60)
        spec = cfg.build_problem()
        assert spec.name == "det-lq"
        assert spec.sigma(0.3, 1.0, 0.5) == 0.0


class TestConvergenceStudy:
    def test_tau_free_ladder_sits_at_floor(self):
        report = run_convergence_study(make_config(), [2, 4, 8])
        assert report.mesh_sizes == [0.5, 0.25, 0.125]
        assert all(e <= 1e-8 for e in report.value_errors)
        assert all(e <= 1e-8 for e in report.strategy_errors)
        assert "at-floor" in report.flags
        assert report.fitted_rate == np.inf
        assert "march" in report.reference

    def test_two_rate_ladder_rate_near_one(self):
        cfg = make_config(preset="two-rate-discount", nx=121, nt=96)
        report = run_convergence_study(cfg, [2, 4, 8])
        assert 0.8 <= report.fitted_rate <= 1.3
        assert report.flags == []
        ev = report.value_errors
        assert ev[0] > ev[1] > ev[2] > 0
        eu = report.strategy_errors
        assert all(b <= a for a, b in zip(eu, eu[1:]))

    def test_picard_reference_agrees_with_march(self):
        cfg = make_config(preset="two-rate-discount", nx=61, nt=48, method="picard")
        rep_p = run_convergence_study(cfg, [2, 4, 8])
        rep_m = run_convergence_study(make_config(preset="two-rate-discount",
                                                  nx=61, nt=48), [2, 4, 8])
        # picard converges to the march fixed point bitwise, so the ladders match
        assert rep_p.value_errors == rep_m.value_errors
        assert "picard" in rep_p.reference

    @pytest.mark.parametrize("ladder", [[2, 4], [4, 4, 8], [8, 4, 2]])
    def test_bad_ladders_refused(self, ladder):
        with pytest.raises(UsageError, match="ladder"):
            run_convergence_study(make_config(), ladder)

    def test_kernel_reference_refused(self):
        with pytest.raises(UsageError, match="march or picard"):
            run_convergence_study(make_config(method="kernel"), [2, 4, 8])

    def test_explicit_partition_family_refused(self):
        cfg = make_config(partition={"kind": "explicit", "knots": [0.0, 0.5, 1.0]})
        with pytest.raises(UsageError, match="explicit"):
            run_convergence_study(cfg, [2, 4, 8])

    def test_csv_written_when_out_dir_set(self, tmp_path):
        cfg = make_config(out_dir=str(tmp_path / "study"))
        run_convergence_study(cfg, [2, 4, 8])
        lines = (tmp_path / "study" / "convergence.csv").read_text().splitlines()
        assert lines[0] == "mesh,value_error,strategy_error"
        assert len(lines) == 4
        assert lines[1].startswith("0.5,")

    def test_report_invariants_enforced(self):
        with pytest.raises(UsageError, match="decreasing"):
            ConvergenceReport([0.5, 0.5, 0.25], [1, 1, 1], [1, 1, 1], 1.0, "x")
        with pytest.raises(UsageError, match="nonnegative"):
            ConvergenceReport([0.5, 0.25], [1.0, -0.1], [0.0, 0.0], 1.0, "x")
        with pytest.raises(UsageError, match="length"):
            ConvergenceReport([0.5, 0.25], [1.0], [0.0, 0.0], 1.0, "x")


class TestConsistencySuite:
    def test_discounted_lq_passes_all_checks(self):
        cfg = ExperimentConfig(preset="exp-discount-lq", nx=121, controls=65, seed=0)
        report = run_consistency_suite(cfg)
        assert report.passed
        assert [c["name"] for c in report.checks] == [
            "partition-invariance",
            "equilibrium-is-classical",
            "verification-inequality",
        ]
        # tau-independent data: cascade and march reduce to classical DP exactly
        assert report.checks[0]["magnitude"] == 0.0
        assert report.checks[1]["magnitude"] == 0.0
        # perturbed strategies cost visibly more than the optimum
        assert report.checks[2]["magnitude"] > 0.1
        assert all({"name", "passed", "magnitude", "tolerance", "detail"} <= set(c)
                   for c in report.checks)

    def test_sigma_zero_runs_deterministic_mode(self, det_lq_file):
        cfg = ExperimentConfig(problem_file=det_lq_file, nx=121, controls=65, seed=3)
        report = run_consistency_suite(cfg)
        assert report.passed
        assert report.problem == "det-lq"
        check = report.checks[2]
        assert "deterministic" in check["detail"]
        assert check["magnitude"] > 0.0

    def test_two_rate_refused(self):
        cfg = ExperimentConfig(preset="two-rate-discount", nx=61, nt=48)
        with pytest.raises(UsageError, match="free of tau"):
            run_consistency_suite(cfg)

    def test_tau_dependent_file_refused(self, tmp_path):
        path = tmp_path / "tau-dep.prob"
        path.write_text(TAU_DEP)
        cfg = ExperimentConfig(problem_file=str(path), nx=61, nt=60)
        with pytest.raises(UsageError, match="free of tau"):
            run_consistency_suite(cfg)

    def test_report_serializes(self):
        cfg = ExperimentConfig(preset="tau-free", nx=61, nt=60, controls=17, seed=1)
        report = run_consistency_suite(cfg)
        text = json.dumps(report.to_dict(), sort_keys=True)
        assert "verification-inequality" in text


class TestExportResults:
    def test_empty_artifacts_empty_manifest(self, tmp_path):
        manifest = export_results({}, tmp_path / "out")
        assert manifest == {"meta": {}, "files": {}}
        on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert on_disk == manifest

    def test_field_hash_stable_across_runs(self, tmp_path):
        grid = Grid(-2.0, 2.0, 11, 1.0, 4)
        field = Field2D(grid, 0, np.linspace(0.0, 1.0, 55).reshape(5, 11))
        m1 = export_results({"field": field}, tmp_path / "a", meta={"run": "x"})
        m2 = export_results({"field": field}, tmp_path / "b", meta={"run": "x"})
        assert set(m1["files"]) == {"field.csv", "field.csv.json"}
        assert m1["files"] == m2["files"]

    def test_manifest_hashes_are_sha256_of_bytes(self, tmp_path):
        grid = Grid(-2.0, 2.0, 11, 1.0, 4)
        field = Field2D(grid, 0, np.zeros((5, 11)))
        manifest = export_results({"f": field}, tmp_path / "out")
        for name, digest in manifest["files"].items():
            data = (tmp_path / "out" / name).read_bytes()
            assert hashlib.sha256(data).hexdigest() == digest

    def test_solution_export_writes_tables_and_summary(self, tmp_path):
        spec = get_preset("two-rate-discount")
        grid = Grid(-6.0, 6.0, 61, 1.0, 48)
        sol = diagonal_march_solve(spec, grid, tau_keep=[0.0])
        manifest = export_results({"march": sol}, tmp_path / "out", meta={"seed": 0})
        assert set(manifest["files"]) == {
            "march.value.csv", "march.value.csv.json",
            "march.strategy.csv", "march.strategy.csv.json",
            "march.json",
        }
        summary = json.loads((tmp_path / "out" / "march.json").read_text())
        assert summary["method"] == "march"
        assert summary["diagnostics"]["tau_stride"] == 1
        assert json.loads((tmp_path / "out" / "manifest.json").read_text())["meta"] == {"seed": 0}

    def test_seed_changes_mc_hash_but_not_pde_hash(self, tmp_path):
        spec = get_preset("two-rate-discount")
        grid = Grid(-6.0, 6.0, 61, 1.0, 48)
        sol = diagonal_march_solve(spec, grid, tau_keep=[0.0])
        reports = [
            feynman_kac_check(spec, sol.theta, sol.strategy, 0.0, 0.0, 300, seed=s)
            for s in (1, 2)
        ]
        manifests = [
            export_results({"mc": rep, "value": sol.value}, tmp_path / f"run{i}")
            for i, rep in enumerate(reports)
        ]
        assert manifests[0]["files"]["mc.json"] != manifests[1]["files"]["mc.json"]
        assert manifests[0]["files"]["value.csv"] == manifests[1]["files"]["value.csv"]

    def test_convergence_and_consistency_reports_export(self, tmp_path):
        ladder = run_convergence_study(make_config(), [2, 4, 8])
        suite = run_consistency_suite(
            ExperimentConfig(preset="tau-free", nx=61, nt=60, controls=17, seed=1))
        manifest = export_results({"ladder": ladder, "suite": suite}, tmp_path / "out")
        assert set(manifest["files"]) == {"ladder.csv", "ladder.json", "suite.json"}
        payload = json.loads((tmp_path / "out" / "ladder.json").read_text())
        assert payload["mesh_sizes"] == [0.5, 0.25, 0.125]

    def test_dict_artifact_and_meta(self, tmp_path):
        manifest = export_results({"notes": {"alpha": 1}}, tmp_path / "out",
                                  meta={"preset": "tau-free"})
        assert manifest["meta"] == {"preset": "tau-free"}
        assert json.loads((tmp_path / "out" / "notes.json").read_text()) == {"alpha": 1}

    @pytest.mark.parametrize("artifacts, pattern", [
        ({"x": object()}, "cannot export"),
        ({"a/b": {"k": 1}}, "file stem"),
        ({"..": {"k": 1}}, "file stem"),
    ])
    def test_bad_artifacts_refused(self, tmp_path, artifacts, pattern):
        with pytest.raises(UsageError, match=pattern):
            export_results(artifacts, tmp_path / "out")
