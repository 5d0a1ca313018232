"""Command-line behavior: exit codes, reproducibility, end-to-end pipelines."""

from __future__ import annotations

import json
import math

import pytest

from aflearn.cli import main

POINTMASS_CFG = """
[dataset]
kind = "pointmass_pair"
n_per_domain = 4

[model]
r_w = 2.0

[optimizer]
steps = {steps}
seed = 3
batch_size = {batch}

[output]
dir = "{out}"
"""


def write_cfg(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestProject:
    def test_symmetric_example(self, capsys):
        assert main(["project", "0.6,0.6"]) == 0
        assert capsys.readouterr().out.strip() == "0.5,0.5"

    def test_space_separated(self, capsys):
        assert main(["project", "2 0"]) == 0
        assert capsys.readouterr().out.strip() == "1,0"

    def test_garbage_is_config_error(self, capsys):
        assert main(["project", "a,b"]) == 2


class TestTrain:
    def test_afl_reaches_minimax_on_pointmass(self, tmp_path, capsys):
        out = tmp_path / "runs"
        cfg = write_cfg(tmp_path, POINTMASS_CFG.format(steps=4000, batch=2, out=out))
        assert main(["train", "--config", str(cfg), "--mode", "afl"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        agn = summary["modes"]["afl"]["train_agnostic_loss_last_seed"]
        assert agn == pytest.approx(math.log(2), abs=0.02)
        assert (out / "afl_seed3.model").exists()
        assert (out / "afl_seed3.jsonl").exists()

    def test_mode_all_produces_four_rows(self, tmp_path, capsys):
        out = tmp_path / "runs"
        cfg = write_cfg(tmp_path, POINTMASS_CFG.format(steps=300, batch=1, out=out))
        assert main(["train", "--config", str(cfg), "--mode", "all"]) == 0
        lines = (out / "table.csv").read_text().splitlines()
        assert lines[1].startswith("training,U,all_one,balanced,worst")
        assert [l.split(",")[0] for l in lines[2:]] == ["L_all_one", "L_balanced", "L_uniform", "L_worst_case"]

    def test_missing_dataset_path_exits_2(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path,
            '[dataset]\nkind = "csv"\npath = "nope.csv"\n[dataset.schema]\nnumeric_features = ["x"]\ndomain_column = "d"\n',
        )
        assert main(["train", "--config", str(cfg)]) == 2

    def test_bad_config_value_exits_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, '[dataset]\nkind = "pointmass_pair"\n[optimizer]\nsteps = -5\n')
        assert main(["train", "--config", str(cfg)]) == 2

    def test_divergence_exits_3(self, tmp_path, capsys):
        text = """
[dataset]
kind = "gaussian"
seed = 1
[[dataset.domains]]
name = "a"
count = 8
mean = [1e160]
cov_scale = 1.0
class_offsets = [[0.0], [1e-160]]
[model]
r_w = 1e300
[optimizer]
steps = 50
step_w = 1e160
step_lambda = 1e-3
"""
        cfg = write_cfg(tmp_path, text)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 3

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        cfg = write_cfg(tmp_path, POINTMASS_CFG.format(steps=400, batch=1, out=out1))
        assert main(["train", "--config", str(cfg), "--mode", "afl"]) == 0
        assert main(["train", "--config", str(cfg), "--mode", "afl", "--out", str(out2)]) == 0
        jl1 = (out1 / "afl_seed3.jsonl").read_bytes()
        jl2 = (out2 / "afl_seed3.jsonl").read_bytes()
        assert jl1 == jl2

    def test_outputs_embed_hash_and_seed(self, tmp_path, capsys):
        out = tmp_path / "runs"
        cfg = write_cfg(tmp_path, POINTMASS_CFG.format(steps=100, batch=1, out=out))
        assert main(["train", "--config", str(cfg), "--mode", "uniform", "--seed", "9"]) == 0
        meta = json.loads((out / "uniform_seed9.jsonl").read_text().splitlines()[0])
        assert meta["seed"] == 9 and len(meta["config_hash"]) == 16
        sidecar = (out / "uniform_seed9.model.meta").read_text()
        assert f"config_hash={meta['config_hash']}" in sidecar and "seed=9" in sidecar
        assert meta["config_hash"] in (out / "table.csv").read_text()

    def test_multi_seed_aggregation(self, tmp_path, capsys):
        out = tmp_path / "runs"
        cfg = write_cfg(tmp_path, POINTMASS_CFG.format(steps=200, batch=1, out=out))
        assert main(["train", "--config", str(cfg), "--mode", "uniform", "--seeds", "3"]) == 0
        table = (out / "table.csv").read_text()
        assert "+-" in table
        summary = json.loads((out / "summary.json").read_text())
        assert summary["modes"]["uniform"]["seeds"] == [3, 4, 5]


class TestSynthThenTrain:
    def test_pipeline_reaches_minimax(self, tmp_path, capsys):
        gen_cfg = write_cfg(tmp_path, '[dataset]\nkind = "pointmass_pair"\nn_per_domain = 4\n', "gen.toml")
        csv_path = tmp_path / "data.csv"
        assert main(["synth", "--config", str(gen_cfg), "--out", str(csv_path)]) == 0
        schema_path = tmp_path / "data.csv.schema.toml"
        assert schema_path.exists()
        run_cfg_text = (
            schema_path.read_text()
            + f'\n[model]\nr_w = 2.0\n[optimizer]\nsteps = 4000\nseed = 0\nbatch_size = 2\n[output]\ndir = "{tmp_path / "runs"}"\n'
        )
        run_cfg = write_cfg(tmp_path, run_cfg_text, "trainrun.toml")
        assert main(["train", "--config", str(run_cfg), "--mode", "afl"]) == 0
        summary = json.loads((tmp_path / "runs" / "summary.json").read_text())
        assert summary["modes"]["afl"]["train_agnostic_loss_last_seed"] == pytest.approx(math.log(2), abs=0.02)


class TestEval:
    def test_saved_model_roundtrip(self, tmp_path, capsys):
        out = tmp_path / "runs"
        cfg = write_cfg(tmp_path, POINTMASS_CFG.format(steps=500, batch=1, out=out))
        assert main(["train", "--config", str(cfg), "--mode", "afl"]) == 0
        capsys.readouterr()
        code = main(["eval", "--model", str(out / "afl_seed3.model"), "--config", str(cfg)])
        assert code == 0
        text = capsys.readouterr().out
        assert "worst" in text and "all_one" in text

    def test_protected_column_report(self, tmp_path, capsys):
        csv = tmp_path / "d.csv"
        csv.write_text(
            "x,label,dom,group\n" + "".join(f"{i % 3}.0,{i % 2},A,g{i % 2}\n" for i in range(12)),
            encoding="utf-8",
        )
        cfg = write_cfg(
            tmp_path,
            f'[dataset]\nkind = "csv"\npath = "d.csv"\n[dataset.schema]\nnumeric_features = ["x"]\nlabel_column = "label"\ndomain_column = "dom"\n[optimizer]\nsteps = 50\n[output]\ndir = "{tmp_path / "runs"}"\n',
        )
        assert main(["train", "--config", str(cfg), "--mode", "uniform"]) == 0
        capsys.readouterr()
        code = main(
            ["eval", "--model", str(tmp_path / "runs" / "uniform_seed0.model"), "--config", str(cfg), "--protected", "group"]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "g0" in text and "g1" in text and "worst_class=" in text


class TestBound:
    def test_singleton_reference_matches_formula(self, tmp_path, capsys):
        text = """
[bounds]
sizes = [400, 600]
loss_bound = 1.0
confidence = 0.05
cover_radius = 0.0
[lambda_domain]
kind = "hull"
vertices = [[0.4, 0.6]]
"""
        cfg = write_cfg(tmp_path, text)
        assert main(["bound", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        payload = json.loads(out[: out.rindex("}") + 1])
        expected = math.sqrt(math.log(1 / 0.05) / (2 * 1000))
        assert payload["deviation_term"] == pytest.approx(expected, rel=1e-9)
        assert payload["skewness"] == pytest.approx(1.0, abs=1e-12)

    def test_dataset_driven_sizes(self, tmp_path, capsys):
        text = """
[dataset]
kind = "pointmass_pair"
n_per_domain = 4
[bounds]
loss_bound = 2.0
confidence = 0.1
cover_radius = 0.5
vc_dim = 2
"""
        cfg = write_cfg(tmp_path, text)
        assert main(["bound", "--config", str(cfg)]) == 0
        payload = json.loads(capsys.readouterr().out.partition("}\n")[0] + "}")
        assert payload["skewness"] == pytest.approx(2.0, abs=1e-12)
        assert payload["total"] >= payload["deviation_term"]

    def test_missing_section_exits_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, '[dataset]\nkind = "pointmass_pair"\n')
        assert main(["bound", "--config", str(cfg)]) == 2


class TestOracleCommand:
    def test_pointmass_constants(self, capsys):
        assert main(["oracle", "pointmass"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["minimax_value"] == pytest.approx(math.log(2), rel=1e-12)

    def test_grid_against_config(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, '[dataset]\nkind = "pointmass_pair"\nn_per_domain = 4\n')
        assert main(["oracle", "grid", "--config", str(cfg), "--resolution", "0.001"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["value"] == pytest.approx(math.log(2), abs=1e-3)


class TestOptimisticMode:
    def test_optimistic_row(self, tmp_path, capsys):
        out = tmp_path / "runs"
        cfg = write_cfg(tmp_path, POINTMASS_CFG.format(steps=400, batch=2, out=out))
        assert main(["train", "--config", str(cfg), "--mode", "optimistic"]) == 0
        assert "L_worst_case_opt" in (out / "table.csv").read_text()
        assert (out / "optimistic_seed3.model").exists()
